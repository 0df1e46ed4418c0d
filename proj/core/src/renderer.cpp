#include "plkrf/renderer.hpp"

#include <cmath>
#include <limits>

#include "plkrf/error.hpp"

namespace plkrf {

void TriplaneField::validate() const {
  const Shape expect{static_cast<std::size_t>(size), static_cast<std::size_t>(size),
                     static_cast<std::size_t>(feature_dim)};
  if (t_xy.shape() != expect || t_yz.shape() != expect || t_zx.shape() != expect) {
    throw DimensionError("TriplaneField: grids must all be [M,M,d_T]");
  }
  if (mlp_w1.shape()[0] != static_cast<std::size_t>(feature_dim) ||
      mlp_w2.shape()[1] != 4) {
    throw DimensionError("TriplaneField: decoder MLP must map d_T -> hidden -> 4");
  }
}

std::optional<std::pair<double, double>> ray_box_clip(const Vec3& origin, const Vec3& direction) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    if (std::abs(direction[axis]) < 1e-15) {
      if (origin[axis] < -1.0 || origin[axis] > 1.0) return std::nullopt;
      continue;
    }
    double t0 = (-1.0 - origin[axis]) / direction[axis];
    double t1 = (1.0 - origin[axis]) / direction[axis];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_far < t_near || t_far < 0.0) return std::nullopt;
  return std::make_pair(std::max(t_near, 0.0), t_far);
}

Tensor point_features(const TriplaneField& field, const std::vector<Vec3>& points) {
  std::vector<std::array<double, 2>> xy(points.size());
  std::vector<std::array<double, 2>> yz(points.size());
  std::vector<std::array<double, 2>> zx(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points[i];
    xy[i] = {p.x(), p.y()};
    yz[i] = {p.y(), p.z()};
    zx[i] = {p.z(), p.x()};
  }
  Tensor f = ops::add(ops::sample_plane(field.t_xy, xy), ops::sample_plane(field.t_yz, yz));
  return ops::add(f, ops::sample_plane(field.t_zx, zx));
}

DecodedPoints decode_points(const TriplaneField& field, const Tensor& features) {
  Tensor h = ops::add_rowvec(ops::matmul(features, field.mlp_w1), field.mlp_b1);
  h = ops::gelu_tanh(h);
  Tensor out = ops::add_rowvec(ops::matmul(h, field.mlp_w2), field.mlp_b2);
  DecodedPoints decoded;
  decoded.rgb = ops::sigmoid(ops::slice_lastdim(out, 0, 3));
  decoded.sigma = ops::softplus(ops::slice_lastdim(out, 3, 1));
  return decoded;
}

CompositeResult composite(const Tensor& colors, const Tensor& sigmas, const Tensor& deltas,
                          const std::array<double, 3>& background) {
  if (sigmas.rank() != 2 || deltas.shape() != sigmas.shape()) {
    throw DimensionError("composite: sigmas/deltas must be matching [R,S]");
  }
  for (double d : deltas.values()) {
    if (!(d > 0.0)) throw ContractError("composite: deltas must be positive");
  }
  Tensor tau = ops::mul(sigmas, deltas);
  Tensor transmittance = ops::exp(ops::scale(ops::cumsum_exclusive_lastdim(tau), -1.0));
  Tensor one = Tensor::full(tau.shape(), 1.0);
  Tensor alpha = ops::sub(one, ops::exp(ops::scale(tau, -1.0)));
  Tensor weights = ops::mul(transmittance, alpha);
  Tensor t_final = ops::exp(ops::scale(ops::sum_lastdim(tau), -1.0));
  CompositeResult result;
  result.rgb = ops::composite_colors(weights, colors, t_final, background);
  result.opacity = ops::sum_lastdim(weights);
  return result;
}

Tensor render_rays(const TriplaneField& field, const std::vector<Ray>& rays,
                   const RaySampling& sampling, Rng* jitter_rng) {
  if (sampling.samples_per_ray < 1) throw ContractError("render_rays: need at least one sample");
  const std::size_t ray_count = rays.size();
  const int s = sampling.samples_per_ray;

  std::vector<std::size_t> hit_rows;
  std::vector<Vec3> points;
  std::vector<double> deltas;
  hit_rows.reserve(ray_count);
  for (std::size_t r = 0; r < ray_count; ++r) {
    const auto clip = ray_box_clip(rays[r].origin, rays[r].direction);
    if (!clip) continue;
    hit_rows.push_back(r);
    const double span = (clip->second - clip->first) / s;
    std::vector<double> ts(static_cast<std::size_t>(s));
    for (int i = 0; i < s; ++i) {
      const double u = (sampling.stratified && jitter_rng) ? jitter_rng->uniform() : 0.5;
      ts[static_cast<std::size_t>(i)] = clip->first + (i + u) * span;
    }
    for (int i = 0; i < s; ++i) {
      points.push_back(rays[r].origin + ts[static_cast<std::size_t>(i)] * rays[r].direction);
      const double next = i + 1 < s ? ts[static_cast<std::size_t>(i) + 1] : clip->second;
      double delta = next - ts[static_cast<std::size_t>(i)];
      if (delta <= 0.0) delta = 1e-12;  // degenerate jitter collision
      deltas.push_back(delta);
    }
  }

  Tensor canvas = Tensor::zeros({ray_count, 3});
  {
    double* pc = canvas.data();
    for (std::size_t r = 0; r < ray_count; ++r) {
      for (int ch = 0; ch < 3; ++ch) pc[r * 3 + ch] = sampling.background[static_cast<std::size_t>(ch)];
    }
  }
  if (hit_rows.empty()) return canvas;

  const std::size_t hits = hit_rows.size();
  Tensor features = point_features(field, points);
  DecodedPoints decoded = decode_points(field, features);
  Tensor colors = ops::reshape(decoded.rgb, {hits, static_cast<std::size_t>(s), 3});
  Tensor sigmas = ops::reshape(decoded.sigma, {hits, static_cast<std::size_t>(s)});
  Tensor delta_t = Tensor::from_data({hits, static_cast<std::size_t>(s)}, std::move(deltas));
  CompositeResult composed = composite(colors, sigmas, delta_t, sampling.background);
  return ops::scatter_rows(canvas, composed.rgb, hit_rows);
}

Image render_image(const Camera& camera, const TriplaneField& field, const RaySampling& sampling) {
  Image img = Image::filled(camera.width, camera.height,
                            sampling.background[0], sampling.background[1], sampling.background[2]);
  RaySampling eval_sampling = sampling;
  eval_sampling.stratified = false;
  // Render in row bands to bound peak memory.
  const int band = std::max(1, 4096 / std::max(1, camera.width));
  for (int y0 = 0; y0 < camera.height; y0 += band) {
    const int y1 = std::min(camera.height, y0 + band);
    std::vector<Ray> rays;
    rays.reserve(static_cast<std::size_t>(y1 - y0) * camera.width);
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < camera.width; ++x) {
        rays.push_back(pixel_ray(camera, x + 0.5, y + 0.5));
      }
    }
    Tensor rgb = render_rays(field, rays, eval_sampling, nullptr);
    const double* pr = rgb.data();
    std::size_t row = 0;
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < camera.width; ++x, ++row) {
        double* px = img.pixel(x, y);
        px[0] = pr[row * 3];
        px[1] = pr[row * 3 + 1];
        px[2] = pr[row * 3 + 2];
      }
    }
  }
  return img;
}

}  // namespace plkrf
