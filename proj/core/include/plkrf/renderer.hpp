#pragma once

#include <array>
#include <optional>
#include <vector>

#include "plkrf/geometry.hpp"
#include "plkrf/image.hpp"
#include "plkrf/ops.hpp"
#include "plkrf/rng.hpp"

namespace plkrf {

// Three orthogonal feature grids over [-1,1]^3 plus the point-decoder MLP.
// Grids are [M,M,d_T]; grid index order matches the plane name (T_xy is
// indexed [x_idx][y_idx]). During training these tensors are tape outputs, so
// rendering stays differentiable end to end.
struct TriplaneField {
  Tensor t_xy, t_yz, t_zx;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // d_T -> hidden -> 4 (rgb + density)
  int size = 0;                           // M
  int feature_dim = 0;                    // d_T

  void validate() const;
};

struct RaySampling {
  int samples_per_ray = 64;
  bool stratified = false;  // jittered strata (training); midpoints otherwise
  std::array<double, 3> background = {1.0, 1.0, 1.0};
};

// Slab intersection with the [-1,1]^3 box; t_near clamps to 0 for origins
// inside the box. Returns nullopt on a miss. Expects a unit direction.
std::optional<std::pair<double, double>> ray_box_clip(const Vec3& origin, const Vec3& direction);

// Sum of the three plane samples at (p_x,p_y), (p_y,p_z), (p_z,p_x). One row
// per query point.
Tensor point_features(const TriplaneField& field, const std::vector<Vec3>& points);

struct DecodedPoints {
  Tensor rgb;    // [n,3] in [0,1]
  Tensor sigma;  // [n,1] nonnegative
};
// MLP + sigmoid on rgb, softplus on density.
DecodedPoints decode_points(const TriplaneField& field, const Tensor& features);

struct CompositeResult {
  Tensor rgb;      // [R,3]
  Tensor opacity;  // [R]  (sum of per-sample weights)
};
// Emission-absorption quadrature with exact per-segment transmittance:
// alpha_i = 1 - exp(-sigma_i delta_i), T_i = exp(-cumsum_excl(sigma delta)),
// rgb = sum T_i alpha_i c_i + T_final * background.
CompositeResult composite(const Tensor& colors, const Tensor& sigmas, const Tensor& deltas,
                          const std::array<double, 3>& background);

// Differentiable render of a ray batch; rays that miss the box return the
// background constant. jitter_rng enables stratified sampling.
Tensor render_rays(const TriplaneField& field, const std::vector<Ray>& rays,
                   const RaySampling& sampling, Rng* jitter_rng = nullptr);

// Full-frame render with deterministic midpoint sampling through pixel
// centers.
Image render_image(const Camera& camera, const TriplaneField& field, const RaySampling& sampling);

}  // namespace plkrf
