#include "plkrf/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "plkrf/checkpoint.hpp"
#include "plkrf/error.hpp"
#include "plkrf/tape.hpp"

namespace plkrf {

void TrainConfig::validate() const {
  if (input_views < 1) throw ConfigError("TrainConfig: need at least one input view");
  if (target_views < 0) throw ConfigError("TrainConfig: target view count cannot be negative");
  if (perceptual_weight < 0.0) throw ConfigError("TrainConfig: perceptual weight cannot be negative");
  if (rays_per_view < 1 || samples_per_ray < 1 || grad_accum < 1) {
    throw ConfigError("TrainConfig: rays, samples and grad_accum must be positive");
  }
}

Tensor reconstruction_loss(const std::vector<Tensor>& rendered, const std::vector<Tensor>& truth,
                           double alpha, const PerceptualHook* hook) {
  if (rendered.empty() || rendered.size() != truth.size()) {
    throw ContractError("reconstruction_loss: rendered/truth lists must pair up");
  }
  Tensor total;
  for (std::size_t v = 0; v < rendered.size(); ++v) {
    if (rendered[v].shape() != truth[v].shape()) {
      throw ContractError("reconstruction_loss: view " + std::to_string(v) + " shape mismatch");
    }
    Tensor view_loss = ops::mse(rendered[v], truth[v]);
    if (alpha > 0.0 && hook && hook->term) {
      view_loss = ops::add(view_loss, ops::scale(hook->term(rendered[v], truth[v]), alpha));
    }
    total = total.defined() ? ops::add(total, view_loss) : view_loss;
  }
  return ops::scale(total, 1.0 / static_cast<double>(rendered.size()));
}

std::vector<Camera> canonicalize_cameras(const std::vector<Camera>& cameras) {
  if (cameras.empty()) throw ContractError("canonicalize_cameras: empty camera list");
  const Mat3 r0_inv = cameras[0].rotation.transpose();
  std::vector<Camera> out = cameras;
  for (Camera& cam : out) {
    cam.rotation = r0_inv * cam.rotation;
    cam.center = r0_inv * cam.center;
  }
  return out;
}

SceneRenderer::SceneRenderer(const ReconstructionModel& model,
                             const std::vector<const Image*>& input_images,
                             const std::vector<Camera>& input_cameras, RaySampling sampling)
    : sampling_(sampling) {
  if (input_images.empty() || input_images.size() != input_cameras.size()) {
    throw ContractError("SceneRenderer: need one camera per input image");
  }
  world_rotation_ = input_cameras[0].rotation.transpose();
  const std::vector<Camera> canonical = canonicalize_cameras(input_cameras);

  const std::vector<PluckerLine> queries = triplane_lines(model.config().grid_size);
  DistanceBias d_pp = distance_matrix(queries, queries, {});
  TokenSet tokens = model.encode_views(input_images, canonical);
  std::vector<PluckerLine> key_lines;
  std::vector<bool> cls_flags;
  key_lines.reserve(tokens.count());
  for (std::size_t t = 0; t < tokens.count(); ++t) {
    key_lines.push_back(tokens.lines[t].value_or(PluckerLine{Vec3(0, 0, 1), Vec3::Zero()}));
    cls_flags.push_back(tokens.cls[t]);
  }
  DistanceBias d_ip = distance_matrix(queries, key_lines, cls_flags);
  Tensor decoded = model.decoder_forward(tokens, model.init_query_tokens(queries), d_pp, d_ip);
  field_ = model.tokens_to_triplane(decoded);
}

Image SceneRenderer::render(const Camera& target_camera) const {
  Camera canonical = target_camera;
  canonical.rotation = world_rotation_ * target_camera.rotation;
  canonical.center = world_rotation_ * target_camera.center;
  return render_image(canonical, field_, sampling_);
}

Trainer::Trainer(ReconstructionModel& model, const TrainConfig& config)
    : model_(model), config_(config), rng_(config.seed) {
  config_.validate();
  optimizer_.beta1 = config_.beta1;
  optimizer_.beta2 = config_.beta2;
  optimizer_.weight_decay = config_.weight_decay;
  optimizer_.base_lr = config_.base_lr;
  optimizer_.warmup_steps = config_.warmup_steps;
  optimizer_.total_steps = config_.total_steps;
}

const DistanceBias& Trainer::plane_plane_bias() {
  if (!have_d_pp_) {
    const std::vector<PluckerLine> queries = triplane_lines(model_.config().grid_size);
    d_pp_ = distance_matrix(queries, queries, {});
    have_d_pp_ = true;
  }
  return d_pp_;
}

const DistanceBias& Trainer::image_plane_bias(const std::string& cache_key,
                                              const std::vector<const Image*>& images,
                                              const std::vector<Camera>& canonical_cameras) {
  auto it = d_ip_cache_.find(cache_key);
  if (it != d_ip_cache_.end()) return it->second;
  if (d_ip_cache_.size() > 512) d_ip_cache_.clear();

  const std::vector<PluckerLine> queries = triplane_lines(model_.config().grid_size);
  std::vector<PluckerLine> key_lines;
  std::vector<bool> cls_flags;
  const int patch = model_.config().patch_size;
  for (std::size_t i = 0; i < images.size(); ++i) {
    key_lines.push_back(PluckerLine{Vec3(0, 0, 1), Vec3::Zero()});  // CLS placeholder
    cls_flags.push_back(true);
    const int e = images[i]->width / patch;
    for (const PluckerLine& l : patch_rays(canonical_cameras[i], e)) {
      key_lines.push_back(l);
      cls_flags.push_back(false);
    }
  }
  DistanceBias bias = distance_matrix(queries, key_lines, cls_flags);
  return d_ip_cache_.emplace(cache_key, std::move(bias)).first->second;
}

double Trainer::train_step(const SceneInstance& scene) {
  const int n = config_.input_views;
  const int k = config_.target_views;
  const std::size_t need = static_cast<std::size_t>(n + k);
  if (scene.views.size() < need) {
    throw DataError("train_step: scene " + scene.id + " has " +
                    std::to_string(scene.views.size()) + " views, needs " + std::to_string(need));
  }

  const std::vector<std::size_t> picked = rng_.sample_without_replacement(scene.views.size(), need);
  std::vector<Camera> selected;
  selected.reserve(need);
  for (std::size_t v : picked) selected.push_back(scene.views[v].camera);
  const std::vector<Camera> canonical = canonicalize_cameras(selected);

  std::vector<const Image*> input_images;
  std::vector<Camera> input_cams(canonical.begin(), canonical.begin() + n);
  std::ostringstream key;
  key << scene.id;
  for (int i = 0; i < n; ++i) {
    input_images.push_back(&scene.views[picked[static_cast<std::size_t>(i)]].image);
    key << ":" << picked[static_cast<std::size_t>(i)];
  }

  const DistanceBias& d_pp = plane_plane_bias();
  const DistanceBias& d_ip = image_plane_bias(key.str(), input_images, input_cams);

  RaySampling sampling;
  sampling.samples_per_ray = config_.samples_per_ray;
  sampling.stratified = true;
  sampling.background = config_.background;

  Tape tape;
  double loss_value = 0.0;
  {
    Tape::Scope scope(tape);
    TriplaneField field = model_.infer_field(input_images, input_cams, d_pp, d_ip);

    std::vector<Tensor> rendered;
    std::vector<Tensor> truth;
    for (std::size_t s = 0; s < need; ++s) {
      const View& view = scene.views[picked[s]];
      const Camera& cam = canonical[s];
      const std::size_t pixels = view.image.pixel_count();
      std::vector<Ray> rays;
      Tensor target = Tensor::zeros({static_cast<std::size_t>(config_.rays_per_view), 3});
      double* pt = target.data();
      rays.reserve(static_cast<std::size_t>(config_.rays_per_view));
      for (int r = 0; r < config_.rays_per_view; ++r) {
        const std::size_t p = static_cast<std::size_t>(rng_.uniform_index(pixels));
        const int x = static_cast<int>(p % static_cast<std::size_t>(view.image.width));
        const int y = static_cast<int>(p / static_cast<std::size_t>(view.image.width));
        rays.push_back(pixel_ray(cam, x + 0.5, y + 0.5));
        const double* px = view.image.pixel(x, y);
        pt[3 * r] = px[0];
        pt[3 * r + 1] = px[1];
        pt[3 * r + 2] = px[2];
      }
      rendered.push_back(render_rays(field, rays, sampling, &rng_));
      truth.push_back(std::move(target));
    }

    const double alpha = hook_.alpha_at ? hook_.alpha_at(step_) : config_.perceptual_weight;
    Tensor loss = reconstruction_loss(rendered, truth, alpha, &hook_);
    if (config_.grad_accum > 1) loss = ops::scale(loss, 1.0 / config_.grad_accum);
    loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      throw NumericError("train_step: non-finite loss at step " + std::to_string(step_));
    }
    backward(loss, tape);
  }

  step_ += 1;
  if (step_ % config_.grad_accum == 0) {
    std::vector<Tensor> params = model_.params().trainable();
    adamw_step(params, optimizer_);
    model_.params().zero_grads();
  }
  return loss_value * (config_.grad_accum > 1 ? config_.grad_accum : 1);
}

void Trainer::write_checkpoint(const std::filesystem::path& out_dir, const std::string& tag) const {
  const std::filesystem::path dir = out_dir / ("checkpoint_" + tag);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory: " + dir.string());
  save_state(dir);
}

Trainer::RunResult Trainer::run(const std::vector<SceneInstance>& dataset,
                                const std::filesystem::path& out_dir) {
  if (dataset.empty()) throw DataError("run: dataset is empty");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir.string());

  std::ofstream log(out_dir / "train_log.csv");
  if (!log) throw IoError("cannot open training log: " + (out_dir / "train_log.csv").string());
  log << "step,lr,loss";
  for (int layer = 0; layer < model_.config().layers; ++layer) {
    log << ",gamma_self_" << layer << ",gamma_cross_" << layer;
  }
  log << "\n";
  log.precision(12);

  write_checkpoint(out_dir, "000000");
  if (config_.debug_dump_distances) {
    // Reserved debug names; D_IP here is for the first scene's first n views.
    const SceneInstance& scene = dataset[0];
    std::vector<const Image*> imgs;
    std::vector<Camera> cams;
    for (int i = 0; i < config_.input_views && i < static_cast<int>(scene.views.size()); ++i) {
      imgs.push_back(&scene.views[static_cast<std::size_t>(i)].image);
      cams.push_back(scene.views[static_cast<std::size_t>(i)].camera);
    }
    const std::vector<Camera> canonical = canonicalize_cameras(cams);
    NamedTensors dump;
    dump.emplace_back("debug/D_PP", plane_plane_bias().to_tensor());
    dump.emplace_back("debug/D_IP", image_plane_bias("debug", imgs, canonical).to_tensor());
    save_checkpoint(out_dir / "distances.plkrf", dump);
  }

  RunResult result;
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  while (step_ < config_.total_steps) {
    if (cursor >= order.size()) {
      rng_.shuffle(order);
      cursor = 0;
    }
    const double lr = optimizer_.lr_at(optimizer_.step);
    const double loss = train_step(dataset[order[cursor++]]);
    result.final_loss = loss;
    log << step_ << "," << lr << "," << loss;
    for (int layer = 0; layer < model_.config().layers; ++layer) {
      log << "," << model_.gamma_value(layer, "self") << "," << model_.gamma_value(layer, "cross");
    }
    log << "\n";
    if (config_.checkpoint_interval > 0 && step_ % config_.checkpoint_interval == 0 &&
        step_ < config_.total_steps) {
      std::ostringstream tag;
      tag.width(6);
      tag.fill('0');
      tag << step_;
      write_checkpoint(out_dir, tag.str());
    }
  }
  result.steps = step_;
  if (step_ > 0) write_checkpoint(out_dir, "final");
  return result;
}

void Trainer::save_state(const std::filesystem::path& dir) const {
  save_checkpoint(dir / "model.plkrf", model_.params().named());

  NamedTensors optim;
  optim.emplace_back("step", Tensor::scalar(static_cast<double>(optimizer_.step)));
  optim.emplace_back("trainer_step", Tensor::scalar(static_cast<double>(step_)));
  std::vector<Tensor> trainable = model_.params().trainable();
  std::vector<std::string> trainable_names;
  for (const auto& [name, tensor] : model_.params().named()) {
    if (tensor.requires_grad()) trainable_names.push_back(name);
  }
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    const Shape& shape = trainable[i].shape();
    if (i < optimizer_.m.size()) {
      optim.emplace_back("m/" + trainable_names[i],
                         Tensor::from_data(shape, optimizer_.m[i]));
      optim.emplace_back("v/" + trainable_names[i],
                         Tensor::from_data(shape, optimizer_.v[i]));
    }
  }
  save_checkpoint(dir / "optim.plkrf", optim);

  std::ofstream rng_file(dir / "rng.txt");
  if (!rng_file) throw IoError("cannot write rng state: " + (dir / "rng.txt").string());
  rng_file << rng_.serialize() << "\n";
}

void Trainer::load_state(const std::filesystem::path& dir) {
  const NamedTensors model_entries = load_checkpoint(dir / "model.plkrf");
  for (const auto& [name, tensor] : model_entries) {
    Tensor& param = model_.params().get(name);
    if (param.shape() != tensor.shape()) {
      throw DataError("checkpoint parameter " + name + " has shape " + shape_str(tensor.shape()) +
                      ", expected " + shape_str(param.shape()));
    }
    std::copy(tensor.data(), tensor.data() + tensor.numel(), param.data());
    param.quantize_storage();
  }

  const NamedTensors optim_entries = load_checkpoint(dir / "optim.plkrf");
  std::map<std::string, Tensor> by_name(optim_entries.begin(), optim_entries.end());
  if (!by_name.count("step") || !by_name.count("trainer_step")) {
    throw DataError("optimizer checkpoint is missing step counters: " + dir.string());
  }
  optimizer_.step = static_cast<std::int64_t>(by_name.at("step").item());
  step_ = static_cast<std::int64_t>(by_name.at("trainer_step").item());

  std::vector<std::string> trainable_names;
  for (const auto& [name, tensor] : model_.params().named()) {
    if (tensor.requires_grad()) trainable_names.push_back(name);
  }
  if (optimizer_.step == 0) {
    // Fresh state: moment buffers are created lazily on the first step.
    optimizer_.m.clear();
    optimizer_.v.clear();
  } else {
    optimizer_.m.assign(trainable_names.size(), {});
    optimizer_.v.assign(trainable_names.size(), {});
    for (std::size_t i = 0; i < trainable_names.size(); ++i) {
      const auto m_it = by_name.find("m/" + trainable_names[i]);
      const auto v_it = by_name.find("v/" + trainable_names[i]);
      if (m_it == by_name.end() || v_it == by_name.end()) {
        throw DataError("optimizer checkpoint is missing moments for " + trainable_names[i]);
      }
      optimizer_.m[i].assign(m_it->second.data(), m_it->second.data() + m_it->second.numel());
      optimizer_.v[i].assign(v_it->second.data(), v_it->second.data() + v_it->second.numel());
    }
  }

  std::ifstream rng_file(dir / "rng.txt");
  if (!rng_file) throw IoError("cannot read rng state: " + (dir / "rng.txt").string());
  std::string state((std::istreambuf_iterator<char>(rng_file)), std::istreambuf_iterator<char>());
  rng_.deserialize(state);
}

}  // namespace plkrf
