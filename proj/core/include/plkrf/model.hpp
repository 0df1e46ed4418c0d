#pragma once

#include <optional>
#include <string>
#include <vector>

#include "plkrf/checkpoint.hpp"
#include "plkrf/geometry.hpp"
#include "plkrf/image.hpp"
#include "plkrf/renderer.hpp"
#include "plkrf/rng.hpp"

namespace plkrf {

struct ModelConfig {
  int layers = 8;
  int hidden_dim = 512;       // d_D
  int heads = 8;
  int grid_size = 8;          // N; the triplane is M = 2N
  int triplane_dim = 16;      // d_T
  int patch_size = 14;        // P
  int image_feature_dim = 384;  // d_I
  int ffn_ratio = 4;
  int point_decoder_hidden = 32;
  bool bias_enabled = true;
  bool plucker_encoding_enabled = true;
  bool gamma_learnable = true;
  bool pluckerf_input = true;   // identity-projected line tokens vs free tokens
  bool embedder_frozen = false;

  int triplane_size() const { return 2 * grid_size; }
  int query_token_count() const { return 3 * grid_size * grid_size; }
  int image_token_dim() const {
    return image_feature_dim + (plucker_encoding_enabled ? 6 : 0);
  }
  void validate() const;
};

// Token block with per-token geometry. The embedder emits exactly one CLS
// token (no line) followed by patch tokens in row-major patch order.
struct TokenSet {
  Tensor tokens;  // [count, dim]
  std::vector<std::optional<PluckerLine>> lines;
  std::vector<bool> cls;

  std::size_t count() const { return cls.size(); }
};

// Ordered named parameters; order defines optimizer and checkpoint layout.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor tensor, bool trainable = true);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor> trainable();  // requires_grad tensors, stable order
  std::vector<Tensor> all();
  NamedTensors named() const;
  void zero_grads();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::vector<bool> trainable_;
};

// Single-head distance-biased attention:
// softmax(Q K^T / sqrt(d_h) - gamma * D) V. Accepts [q,d] operands or
// batched [h,q,d] with D shared across heads. gamma is a nonnegative scalar
// tensor; pass an undefined Tensor to skip the bias term entirely.
Tensor biased_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                        const Tensor& dist, const Tensor& gamma);

// The images-to-feature-grid network: patch embedder (one linear projection
// plus CLS), Plucker-coordinate token suffixes, identity-initialized query
// projection, and `layers` blocks of biased self-attention, biased
// cross-attention, and feed-forward, all pre-norm with residuals.
class ReconstructionModel {
 public:
  ReconstructionModel(const ModelConfig& config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Patches -> linear projection -> tokens, with the learned CLS prepended.
  TokenSet patch_embed(const Image& image) const;

  // Appends (d, m) to each non-CLS token; CLS gets six zeros. No-op when
  // plucker_encoding_enabled is false.
  TokenSet concat_plucker(const TokenSet& tokens, const std::vector<PluckerLine>& lines) const;

  // Query tokens from the triplane lines (or the free learnable tokens).
  Tensor init_query_tokens(const std::vector<PluckerLine>& lines) const;

  // Full encoder for n posed views: per-view embed + Plucker concat,
  // concatenated in input order.
  TokenSet encode_views(const std::vector<const Image*>& images,
                        const std::vector<Camera>& cameras) const;

  Tensor decoder_forward(const TokenSet& image_tokens, const Tensor& query_tokens,
                         const DistanceBias& d_pp, const DistanceBias& d_ip) const;

  // [3N^2, d_D] -> three [M,M,d_T] grids via the shared bias-free 2x2
  // transposed convolution. The result carries the point-decoder MLP handles.
  TriplaneField tokens_to_triplane(const Tensor& tokens) const;

  // encode_views + query init + decoder + triplane in one call.
  TriplaneField infer_field(const std::vector<const Image*>& images,
                            const std::vector<Camera>& cameras, const DistanceBias& d_pp,
                            const DistanceBias& d_ip) const;

  // Effective gamma value for a layer ("self" or "cross"), after softplus.
  double gamma_value(int layer, const std::string& kind) const;

 private:
  Tensor attention_block(const Tensor& x, const Tensor& kv, const std::string& prefix,
                         const DistanceBias* bias) const;
  Tensor ffn_block(const Tensor& x, const std::string& prefix) const;
  Tensor gamma_tensor(const std::string& prefix) const;

  ModelConfig config_;
  ParamStore params_;
};

}  // namespace plkrf
