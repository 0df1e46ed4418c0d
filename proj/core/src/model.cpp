#include "plkrf/model.hpp"

#include <algorithm>
#include <cmath>

#include "plkrf/error.hpp"

namespace plkrf {

void ModelConfig::validate() const {
  if (layers < 1 || hidden_dim < 1 || heads < 1 || grid_size < 1 || triplane_dim < 1 ||
      patch_size < 1 || image_feature_dim < 1 || ffn_ratio < 1 || point_decoder_hidden < 1) {
    throw ConfigError("ModelConfig: all dimensions must be positive");
  }
  if (hidden_dim % heads != 0) {
    throw ConfigError("ModelConfig: hidden_dim must be divisible by heads");
  }
  if (hidden_dim < 6) {
    throw ConfigError("ModelConfig: hidden_dim must be at least 6 for the line projection");
  }
}

Tensor& ParamStore::add(const std::string& name, Tensor tensor, bool trainable) {
  if (contains(name)) throw ContractError("ParamStore: duplicate parameter " + name);
  tensor.set_requires_grad(trainable);
  names_.push_back(name);
  tensors_.push_back(std::move(tensor));
  trainable_.push_back(trainable);
  return tensors_.back();
}

Tensor& ParamStore::get(const std::string& name) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return tensors_[i];
  }
  throw ContractError("ParamStore: unknown parameter " + name);
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return tensors_[i];
  }
  throw ContractError("ParamStore: unknown parameter " + name);
}

bool ParamStore::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::vector<Tensor> ParamStore::trainable() {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (trainable_[i]) out.push_back(tensors_[i]);
  }
  return out;
}

std::vector<Tensor> ParamStore::all() { return tensors_; }

NamedTensors ParamStore::named() const {
  NamedTensors out;
  out.reserve(names_.size());
  for (std::size_t i = 0; i < names_.size(); ++i) out.emplace_back(names_[i], tensors_[i]);
  return out;
}

void ParamStore::zero_grads() {
  for (Tensor& t : tensors_) t.zero_grad();
}

Tensor biased_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                        const Tensor& dist, const Tensor& gamma) {
  const std::size_t head_dim = queries.shape().back();
  if (keys.shape().back() != head_dim) {
    throw DimensionError("biased_attention: query/key feature extents differ");
  }
  Tensor scores = ops::scale(ops::matmul_nt(queries, keys), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  if (gamma.defined()) {
    if (!dist.defined()) throw ContractError("biased_attention: gamma given without distances");
    if (gamma.item() < 0.0) throw ContractError("biased_attention: gamma must be nonnegative");
    scores = ops::sub_scaled_matrix(scores, dist, gamma);
  }
  return ops::matmul(ops::softmax_lastdim(scores), values);
}

namespace {

Tensor normal_init(Rng& rng, Shape shape, double scale) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

// softplus(x) = 1  <=>  x = ln(e - 1)
constexpr double kGammaRawInit = 0.5413248546129181;

}  // namespace

ReconstructionModel::ReconstructionModel(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config) {
  config_.validate();
  Rng rng(init_seed);
  const std::size_t d = static_cast<std::size_t>(config_.hidden_dim);
  const std::size_t d_img = static_cast<std::size_t>(config_.image_token_dim());
  const std::size_t d_i = static_cast<std::size_t>(config_.image_feature_dim);
  const std::size_t patch_in = 3 * static_cast<std::size_t>(config_.patch_size) * config_.patch_size;

  const bool train_embed = !config_.embedder_frozen;
  params_.add("embed/proj_w", normal_init(rng, {patch_in, d_i}, 1.0 / std::sqrt(static_cast<double>(patch_in))), train_embed);
  params_.add("embed/proj_b", Tensor::zeros({d_i}), train_embed);
  params_.add("embed/cls", normal_init(rng, {1, d_i}, 0.02), train_embed);

  if (config_.pluckerf_input) {
    Tensor w = Tensor::zeros({6, d});
    for (std::size_t i = 0; i < 6; ++i) w.data()[i * d + i] = 1.0;  // rectangular identity
    params_.add("query/proj_w", std::move(w));
    params_.add("query/proj_b", Tensor::zeros({d}));
  } else {
    params_.add("query/free",
                normal_init(rng, {static_cast<std::size_t>(config_.query_token_count()), d}, 0.02));
  }

  const double wscale = 1.0 / std::sqrt(static_cast<double>(d));
  const double kv_scale = 1.0 / std::sqrt(static_cast<double>(d_img));
  for (int layer = 0; layer < config_.layers; ++layer) {
    const std::string base = "layer" + std::to_string(layer);
    for (const char* kind : {"self", "cross"}) {
      const std::string p = base + "/" + kind + "/";
      const bool cross = kind[0] == 'c';
      const std::size_t kv_dim = cross ? d_img : d;
      params_.add(p + "norm_g", Tensor::full({d}, 1.0));
      params_.add(p + "norm_b", Tensor::zeros({d}));
      params_.add(p + "wq", normal_init(rng, {d, d}, wscale));
      params_.add(p + "bq", Tensor::zeros({d}));
      params_.add(p + "wk", normal_init(rng, {kv_dim, d}, cross ? kv_scale : wscale));
      params_.add(p + "bk", Tensor::zeros({d}));
      params_.add(p + "wv", normal_init(rng, {kv_dim, d}, cross ? kv_scale : wscale));
      params_.add(p + "bv", Tensor::zeros({d}));
      params_.add(p + "wo", normal_init(rng, {d, d}, wscale));
      params_.add(p + "bo", Tensor::zeros({d}));
      params_.add(p + "gamma_raw", Tensor::scalar(kGammaRawInit), config_.gamma_learnable);
    }
    const std::string f = base + "/ffn/";
    const std::size_t hidden = d * static_cast<std::size_t>(config_.ffn_ratio);
    params_.add(f + "norm_g", Tensor::full({d}, 1.0));
    params_.add(f + "norm_b", Tensor::zeros({d}));
    params_.add(f + "w1", normal_init(rng, {d, hidden}, wscale));
    params_.add(f + "b1", Tensor::zeros({hidden}));
    params_.add(f + "w2", normal_init(rng, {hidden, d}, 1.0 / std::sqrt(static_cast<double>(hidden))));
    params_.add(f + "b2", Tensor::zeros({d}));
  }

  params_.add("deconv/kernel",
              normal_init(rng, {d, static_cast<std::size_t>(config_.triplane_dim), 2, 2},
                          1.0 / std::sqrt(static_cast<double>(d))));

  const std::size_t d_t = static_cast<std::size_t>(config_.triplane_dim);
  const std::size_t ph = static_cast<std::size_t>(config_.point_decoder_hidden);
  params_.add("decoder/w1", normal_init(rng, {d_t, ph}, 1.0 / std::sqrt(static_cast<double>(d_t))));
  params_.add("decoder/b1", Tensor::zeros({ph}));
  params_.add("decoder/w2", normal_init(rng, {ph, 4}, 1.0 / std::sqrt(static_cast<double>(ph))));
  params_.add("decoder/b2", Tensor::zeros({4}));
}

TokenSet ReconstructionModel::patch_embed(const Image& image) const {
  const int p = config_.patch_size;
  if (image.width % p != 0 || image.height % p != 0) {
    throw GeometryError("patch_embed: image extent not divisible by the patch size");
  }
  const int cols = image.width / p;
  const int rows = image.height / p;
  const std::size_t patch_count = static_cast<std::size_t>(rows) * cols;
  const std::size_t patch_in = 3 * static_cast<std::size_t>(p) * p;

  Tensor patches = Tensor::zeros({patch_count, patch_in});
  double* pp = patches.data();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double* dst = pp + (static_cast<std::size_t>(r) * cols + c) * patch_in;
      for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
          const double* px = image.pixel(c * p + x, r * p + y);
          const std::size_t o = 3 * (static_cast<std::size_t>(y) * p + x);
          dst[o] = px[0];
          dst[o + 1] = px[1];
          dst[o + 2] = px[2];
        }
      }
    }
  }

  Tensor projected = ops::add_rowvec(ops::matmul(patches, params_.get("embed/proj_w")),
                                     params_.get("embed/proj_b"));
  TokenSet out;
  out.tokens = ops::concat_rows({params_.get("embed/cls"), projected});
  out.lines.assign(patch_count + 1, std::nullopt);
  out.cls.assign(patch_count + 1, false);
  out.cls[0] = true;
  return out;
}

TokenSet ReconstructionModel::concat_plucker(const TokenSet& tokens,
                                             const std::vector<PluckerLine>& lines) const {
  std::size_t non_cls = 0;
  for (bool c : tokens.cls) {
    if (!c) ++non_cls;
  }
  if (non_cls != lines.size()) {
    throw ContractError("concat_plucker: line count " + std::to_string(lines.size()) +
                        " does not match non-CLS token count " + std::to_string(non_cls));
  }
  TokenSet out = tokens;
  std::size_t next_line = 0;
  for (std::size_t t = 0; t < out.count(); ++t) {
    if (!out.cls[t]) out.lines[t] = lines[next_line++];
  }
  if (!config_.plucker_encoding_enabled) return out;

  Tensor suffix = Tensor::zeros({tokens.count(), 6});
  double* ps = suffix.data();
  for (std::size_t t = 0; t < out.count(); ++t) {
    if (!out.lines[t]) continue;  // CLS rows stay zero
    const PluckerLine& l = *out.lines[t];
    for (int i = 0; i < 3; ++i) {
      ps[t * 6 + static_cast<std::size_t>(i)] = l.direction[i];
      ps[t * 6 + static_cast<std::size_t>(i) + 3] = l.moment[i];
    }
  }
  out.tokens = ops::concat_lastdim(tokens.tokens, suffix);
  return out;
}

Tensor ReconstructionModel::init_query_tokens(const std::vector<PluckerLine>& lines) const {
  if (!config_.pluckerf_input) {
    return params_.get("query/free");
  }
  Tensor input = Tensor::zeros({lines.size(), 6});
  double* pi = input.data();
  for (std::size_t t = 0; t < lines.size(); ++t) {
    for (int i = 0; i < 3; ++i) {
      pi[t * 6 + static_cast<std::size_t>(i)] = lines[t].direction[i];
      pi[t * 6 + static_cast<std::size_t>(i) + 3] = lines[t].moment[i];
    }
  }
  return ops::add_rowvec(ops::matmul(input, params_.get("query/proj_w")),
                         params_.get("query/proj_b"));
}

TokenSet ReconstructionModel::encode_views(const std::vector<const Image*>& images,
                                           const std::vector<Camera>& cameras) const {
  if (images.empty() || images.size() != cameras.size()) {
    throw ContractError("encode_views: need one camera per image");
  }
  std::vector<Tensor> blocks;
  TokenSet merged;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    if (img.width != img.height) {
      throw GeometryError("encode_views: images must be square");
    }
    TokenSet ts = patch_embed(img);
    const int e = img.width / config_.patch_size;
    ts = concat_plucker(ts, patch_rays(cameras[i], e));
    blocks.push_back(ts.tokens);
    merged.lines.insert(merged.lines.end(), ts.lines.begin(), ts.lines.end());
    merged.cls.insert(merged.cls.end(), ts.cls.begin(), ts.cls.end());
  }
  merged.tokens = blocks.size() == 1 ? blocks[0] : ops::concat_rows(blocks);
  return merged;
}

Tensor ReconstructionModel::gamma_tensor(const std::string& prefix) const {
  if (!config_.gamma_learnable) return Tensor::scalar(1.0);
  return ops::softplus(params_.get(prefix + "/gamma_raw"));
}

double ReconstructionModel::gamma_value(int layer, const std::string& kind) const {
  if (!config_.gamma_learnable) return 1.0;
  const double raw = params_.get("layer" + std::to_string(layer) + "/" + kind + "/gamma_raw").item();
  return std::max(raw, 0.0) + std::log1p(std::exp(-std::abs(raw)));
}

Tensor ReconstructionModel::attention_block(const Tensor& x, const Tensor& kv,
                                            const std::string& prefix,
                                            const DistanceBias* bias) const {
  const auto& p = [this, &prefix](const char* name) -> const Tensor& {
    return params_.get(prefix + "/" + name);
  };
  const std::size_t t = x.shape()[0];
  const std::size_t s = kv.shape()[0];
  const std::size_t d = static_cast<std::size_t>(config_.hidden_dim);
  const std::size_t h = static_cast<std::size_t>(config_.heads);
  const std::size_t dh = d / h;

  Tensor xn = ops::layer_norm(x, p("norm_g"), p("norm_b"));
  Tensor q = ops::add_rowvec(ops::matmul(xn, p("wq")), p("bq"));
  Tensor k = ops::add_rowvec(ops::matmul(kv, p("wk")), p("bk"));
  Tensor v = ops::add_rowvec(ops::matmul(kv, p("wv")), p("bv"));
  Tensor qh = ops::permute3(ops::reshape(q, {t, h, dh}), 1, 0, 2);
  Tensor kh = ops::permute3(ops::reshape(k, {s, h, dh}), 1, 0, 2);
  Tensor vh = ops::permute3(ops::reshape(v, {s, h, dh}), 1, 0, 2);

  Tensor dist;
  Tensor gamma;
  if (bias) {
    dist = bias->to_tensor();
    gamma = gamma_tensor(prefix);
  }
  Tensor ctx = biased_attention(qh, kh, vh, dist, gamma);
  Tensor merged = ops::reshape(ops::permute3(ctx, 1, 0, 2), {t, d});
  Tensor out = ops::add_rowvec(ops::matmul(merged, p("wo")), p("bo"));
  return ops::add(x, out);
}

Tensor ReconstructionModel::ffn_block(const Tensor& x, const std::string& prefix) const {
  const auto& p = [this, &prefix](const char* name) -> const Tensor& {
    return params_.get(prefix + "/" + name);
  };
  Tensor xn = ops::layer_norm(x, p("norm_g"), p("norm_b"));
  Tensor h = ops::gelu_tanh(ops::add_rowvec(ops::matmul(xn, p("w1")), p("b1")));
  Tensor out = ops::add_rowvec(ops::matmul(h, p("w2")), p("b2"));
  return ops::add(x, out);
}

Tensor ReconstructionModel::decoder_forward(const TokenSet& image_tokens,
                                            const Tensor& query_tokens, const DistanceBias& d_pp,
                                            const DistanceBias& d_ip) const {
  const std::size_t t = static_cast<std::size_t>(config_.query_token_count());
  if (query_tokens.shape()[0] != t) {
    throw DimensionError("decoder_forward: query token count must be 3N^2");
  }
  const std::size_t s = image_tokens.tokens.shape()[0];
  if (config_.bias_enabled) {
    if (d_pp.rows != t || d_pp.cols != t) {
      throw DimensionError("decoder_forward: D_PP must be 3N^2 x 3N^2");
    }
    if (d_ip.rows != t || d_ip.cols != s) {
      throw DimensionError("decoder_forward: D_IP must be 3N^2 x image tokens");
    }
  }
  Tensor x = query_tokens;
  for (int layer = 0; layer < config_.layers; ++layer) {
    const std::string base = "layer" + std::to_string(layer);
    x = attention_block(x, x, base + "/self", config_.bias_enabled ? &d_pp : nullptr);
    x = attention_block(x, image_tokens.tokens, base + "/cross",
                        config_.bias_enabled ? &d_ip : nullptr);
    x = ffn_block(x, base + "/ffn");
  }
  return x;
}

TriplaneField ReconstructionModel::tokens_to_triplane(const Tensor& tokens) const {
  const std::size_t n = static_cast<std::size_t>(config_.grid_size);
  const std::size_t d = static_cast<std::size_t>(config_.hidden_dim);
  if (tokens.rank() != 2 || tokens.shape()[0] != 3 * n * n || tokens.shape()[1] != d) {
    throw DimensionError("tokens_to_triplane: expected [3N^2, d_D], got " +
                         shape_str(tokens.shape()));
  }
  const Tensor& kernel = params_.get("deconv/kernel");
  TriplaneField field;
  field.size = config_.triplane_size();
  field.feature_dim = config_.triplane_dim;
  Tensor* grids[3] = {&field.t_xy, &field.t_yz, &field.t_zx};
  for (int plane = 0; plane < 3; ++plane) {
    Tensor slab = ops::slice_rows(tokens, static_cast<std::size_t>(plane) * n * n, n * n);
    Tensor chw = ops::permute3(ops::reshape(slab, {n, n, d}), 2, 0, 1);
    Tensor up = ops::transposed_conv_2x(chw, kernel);
    *grids[plane] = ops::permute3(up, 1, 2, 0);
  }
  field.mlp_w1 = params_.get("decoder/w1");
  field.mlp_b1 = params_.get("decoder/b1");
  field.mlp_w2 = params_.get("decoder/w2");
  field.mlp_b2 = params_.get("decoder/b2");
  field.validate();
  return field;
}

TriplaneField ReconstructionModel::infer_field(const std::vector<const Image*>& images,
                                               const std::vector<Camera>& cameras,
                                               const DistanceBias& d_pp,
                                               const DistanceBias& d_ip) const {
  TokenSet image_tokens = encode_views(images, cameras);
  Tensor queries = init_query_tokens(triplane_lines(config_.grid_size));
  Tensor decoded = decoder_forward(image_tokens, queries, d_pp, d_ip);
  return tokens_to_triplane(decoded);
}

}  // namespace plkrf
