#include <doctest.h>

#include <cmath>

#include "plkrf/data.hpp"
#include "plkrf/error.hpp"
#include "plkrf/grad_check.hpp"
#include "plkrf/renderer.hpp"
#include "plkrf/rng.hpp"
#include "plkrf/tape.hpp"

using namespace plkrf;

namespace {

TriplaneField random_field(Rng& rng, int m, int d_t, int hidden, double scale = 0.5) {
  TriplaneField f;
  f.size = m;
  f.feature_dim = d_t;
  auto rand = [&rng, scale](Shape s) {
    Tensor t = Tensor::zeros(std::move(s));
    for (double& v : t.values()) v = scale * rng.normal();
    return t;
  };
  const auto mm = static_cast<std::size_t>(m);
  const auto dd = static_cast<std::size_t>(d_t);
  const auto hh = static_cast<std::size_t>(hidden);
  f.t_xy = rand({mm, mm, dd});
  f.t_yz = rand({mm, mm, dd});
  f.t_zx = rand({mm, mm, dd});
  f.mlp_w1 = rand({dd, hh});
  f.mlp_b1 = Tensor::zeros({hh});
  f.mlp_w2 = rand({hh, 4});
  f.mlp_b2 = Tensor::zeros({4});
  return f;
}

Camera front_camera(int size, double radius = 3.0) {
  Camera cam;
  cam.width = cam.height = size;
  const double f = 0.9 * size;
  cam.intrinsics << f, 0, size / 2.0, 0, f, size / 2.0, 0, 0, 1;
  cam.rotation = look_at_rotation(Vec3(0, 0, -radius), Vec3::Zero());
  cam.center = Vec3(0, 0, -radius);
  return cam;
}

}  // namespace

TEST_CASE("sample_plane node centers and midpoints") {
  Rng rng(50);
  Tensor grid = Tensor::zeros({4, 4, 2});
  for (double& v : grid.values()) v = rng.normal();
  const int m = 4;
  auto node_center = [m](int idx) { return -1.0 + 2.0 * (idx + 0.5) / m; };

  // Query at a node center returns that node's feature.
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      Tensor got = ops::sample_plane(grid, {{node_center(i), node_center(j)}});
      for (std::size_t c = 0; c < 2; ++c) {
        CHECK(std::abs(got.at({0, c}) - grid.at({static_cast<std::size_t>(i),
                                                 static_cast<std::size_t>(j), c})) <= 1e-12);
      }
    }
  }

  // Midpoint of four nodes returns their mean.
  const double a = (node_center(1) + node_center(2)) / 2.0;
  Tensor mid = ops::sample_plane(grid, {{a, a}});
  for (std::size_t c = 0; c < 2; ++c) {
    const double mean = (grid.at({1, 1, c}) + grid.at({1, 2, c}) + grid.at({2, 1, c}) +
                         grid.at({2, 2, c})) / 4.0;
    CHECK(mid.at({0, c}) == doctest::Approx(mean).epsilon(1e-12));
  }

  // Clamped queries equal the edge value.
  Tensor corner = ops::sample_plane(grid, {{-1.0, -1.0}});
  Tensor beyond = ops::sample_plane(grid, {{-1.0, node_center(0) - 0.2}});
  CHECK(corner.at({0, 0}) == grid.at({0, 0, 0}));
  CHECK(beyond.at({0, 0}) == grid.at({0, 0, 0}));
}

TEST_CASE("point_features sums the three plane projections") {
  Rng rng(51);
  TriplaneField field = random_field(rng, 4, 3, 4);
  const Vec3 p(0.3, -0.2, 0.6);
  Tensor f = point_features(field, {p});
  Tensor fxy = ops::sample_plane(field.t_xy, {{p.x(), p.y()}});
  Tensor fyz = ops::sample_plane(field.t_yz, {{p.y(), p.z()}});
  Tensor fzx = ops::sample_plane(field.t_zx, {{p.z(), p.x()}});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(f.at({0, c}) ==
          doctest::Approx(fxy.at({0, c}) + fyz.at({0, c}) + fzx.at({0, c})).epsilon(1e-14));
  }

  // Zero grids produce zero features.
  TriplaneField zero = random_field(rng, 4, 3, 4, 0.0);
  Tensor fz = point_features(zero, {p});
  for (double v : fz.values()) CHECK(v == 0.0);

  // With only T_xy nonzero, features ignore p_z inside a cell column.
  TriplaneField only_xy = random_field(rng, 4, 3, 4, 0.0);
  for (double& v : only_xy.t_xy.values()) v = rng.normal();
  Tensor f1 = point_features(only_xy, {{0.3, -0.2, 0.1}});
  Tensor f2 = point_features(only_xy, {{0.3, -0.2, 0.9}});
  for (std::size_t c = 0; c < 3; ++c) CHECK(f1.at({0, c}) == f2.at({0, c}));
}

TEST_CASE("decode_points activations at zero and extreme inputs") {
  Rng rng(52);
  TriplaneField field = random_field(rng, 4, 3, 4, 0.0);  // zero weights
  Tensor features = Tensor::zeros({1, 3});
  DecodedPoints out = decode_points(field, features);
  for (std::size_t c = 0; c < 3; ++c) CHECK(out.rgb.at({0, c}) == 0.5);
  CHECK(out.sigma.at({0, 0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  // A -1000 density pre-activation underflows to exactly zero, not NaN.
  field.mlp_b2.data()[3] = -1000.0;
  DecodedPoints tiny = decode_points(field, features);
  CHECK(tiny.sigma.at({0, 0}) == 0.0);
  CHECK(std::isfinite(tiny.sigma.at({0, 0})));
}

TEST_CASE("ray_box_clip hand cases") {
  const auto hit = ray_box_clip(Vec3(0, 0, -2), Vec3(0, 0, 1));
  REQUIRE(hit.has_value());
  CHECK(hit->first == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(hit->second == doctest::Approx(3.0).epsilon(1e-15));

  CHECK(!ray_box_clip(Vec3(0, 5, 0), Vec3(0, 0, 1)).has_value());

  const auto inside = ray_box_clip(Vec3(0.2, -0.1, 0.0), Vec3(1, 0, 0));
  REQUIRE(inside.has_value());
  CHECK(inside->first == 0.0);

  CHECK(!ray_box_clip(Vec3(0, 0, 5), Vec3(0, 0, 1)).has_value());
}

TEST_CASE("composite hand cases and conservation") {
  // All-zero density: background, zero opacity.
  Tensor colors = Tensor::full({1, 4, 3}, 0.2);
  Tensor sigmas = Tensor::zeros({1, 4});
  Tensor deltas = Tensor::full({1, 4}, 0.25);
  CompositeResult zero = composite(colors, sigmas, deltas, {0.1, 0.2, 0.3});
  CHECK(zero.rgb.at({0, 0}) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(zero.rgb.at({0, 2}) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(zero.opacity.at({0}) == 0.0);

  // An effectively opaque first sample wins.
  Tensor sig_opaque = Tensor::from_data({1, 4}, {1e9, 0.0, 0.0, 0.0});
  Tensor col = Tensor::zeros({1, 4, 3});
  col.data()[0] = 0.7;
  col.data()[1] = 0.6;
  col.data()[2] = 0.5;
  CompositeResult opaque = composite(col, sig_opaque, deltas, {1, 1, 1});
  CHECK(std::abs(opaque.rgb.at({0, 0}) - 0.7) <= 1e-9);
  CHECK(std::abs(opaque.opacity.at({0}) - 1.0) <= 1e-9);

  // Constant sigma over unit length converges to 1 - exp(-1).
  const int r = 64;
  Tensor c1 = Tensor::full({1, static_cast<std::size_t>(r), 3}, 1.0);
  Tensor s1 = Tensor::full({1, static_cast<std::size_t>(r)}, 1.0);
  Tensor d1 = Tensor::full({1, static_cast<std::size_t>(r)}, 1.0 / r);
  CompositeResult constant = composite(c1, s1, d1, {0, 0, 0});
  CHECK(std::abs(constant.rgb.at({0, 0}) - (1.0 - std::exp(-1.0))) <= 2e-3);

  CHECK_THROWS_AS(composite(colors, sigmas, Tensor::zeros({1, 4}), {0, 0, 0}), ContractError);
}

TEST_CASE("conservation and monotone transmittance on random rays") {
  Rng rng(53);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t s = 1 + rng.uniform_index(16);
    Tensor sigmas = Tensor::zeros({1, s});
    Tensor deltas = Tensor::zeros({1, s});
    Tensor colors = Tensor::zeros({1, s, 3});
    for (double& v : sigmas.values()) v = std::abs(rng.normal()) * 10.0;
    for (double& v : deltas.values()) v = rng.uniform(1e-4, 0.5);
    for (double& v : colors.values()) v = rng.uniform();
    CompositeResult out = composite(colors, sigmas, deltas, {0, 0, 0});
    double tau = 0.0;
    double prev_t = 1.0;
    for (std::size_t i = 0; i < s; ++i) {
      const double t_i = std::exp(-tau);
      CHECK(t_i <= prev_t + 1e-15);  // monotone transmittance
      prev_t = t_i;
      tau += sigmas.at({0, i}) * deltas.at({0, i});
    }
    const double t_final = std::exp(-tau);
    CHECK(std::abs(out.opacity.at({0}) + t_final - 1.0) <= 1e-12);
  }
}

TEST_CASE("render_rays falls back to background on misses") {
  Rng rng(54);
  TriplaneField field = random_field(rng, 4, 3, 4);
  std::vector<Ray> rays{
      {Vec3(0, 5, 0), Vec3(0, 0, 1)},   // miss
      {Vec3(0, 0, -3), Vec3(0, 0, 1)},  // hit
  };
  RaySampling sampling;
  sampling.samples_per_ray = 8;
  sampling.background = {1, 0, 0};
  Tensor out = render_rays(field, rays, sampling);
  CHECK(out.at({0, 0}) == 1.0);
  CHECK(out.at({0, 1}) == 0.0);
  CHECK(out.at({1, 0}) != 1.0);
}

TEST_CASE("render_image of a zero-density field is uniform background") {
  Rng rng(55);
  TriplaneField field = random_field(rng, 4, 3, 4);
  field.mlp_b2.data()[3] = -1000.0;  // sigma == 0 everywhere
  std::fill(field.mlp_w2.data() + 3, field.mlp_w2.data() + 4, 0.0);
  for (std::size_t h = 0; h < field.mlp_w2.shape()[0]; ++h) field.mlp_w2.data()[h * 4 + 3] = 0.0;
  RaySampling sampling;
  sampling.samples_per_ray = 8;
  sampling.background = {1, 1, 1};
  const Image img = render_image(front_camera(16), field, sampling);
  for (double v : img.rgb) CHECK(v == 1.0);
}

TEST_CASE("hand-built box field matches the analytic silhouette within a pixel") {
  // Grids encode a [-0.5,0.5]^3 indicator: +1 inside the plane's 2D box,
  // -5 outside. The decoder thresholds the 3-plane sum at 2.5.
  const int m = 64;
  const double half = 0.5;
  TriplaneField field;
  field.size = m;
  field.feature_dim = 1;
  auto grid = [&](auto&&) {
    Tensor g = Tensor::zeros({static_cast<std::size_t>(m), static_cast<std::size_t>(m), 1});
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        const double a = -1.0 + 2.0 * (i + 0.5) / m;
        const double b = -1.0 + 2.0 * (j + 0.5) / m;
        const bool inside = std::abs(a) <= half && std::abs(b) <= half;
        g.data()[(static_cast<std::size_t>(i) * m + j)] = inside ? 1.0 : -5.0;
      }
    }
    return g;
  };
  field.t_xy = grid(0);
  field.t_yz = grid(0);
  field.t_zx = grid(0);
  field.mlp_w1 = Tensor::from_data({1, 1}, {1.0});
  field.mlp_b1 = Tensor::from_data({1}, {-2.5});
  field.mlp_w2 = Tensor::from_data({1, 4}, {0.0, 0.0, 0.0, 2000.0});
  field.mlp_b2 = Tensor::from_data({4}, {-2.0, 3.0, -2.0, -40.0});  // rgb ~ (0.12, 0.95, 0.12)

  Camera cam = front_camera(64);
  RaySampling sampling;
  sampling.samples_per_ray = 256;
  const Image neural = render_image(cam, field, sampling);

  const std::vector<Primitive> box{{Primitive::Kind::Box, Vec3::Zero(), Vec3::Constant(half),
                                    {0.0, 0.0, 0.0}}};
  const Image analytic = render_primitives_analytic(box, cam);

  auto covered = [](const Image& img, int x, int y) {
    const double* px = img.pixel(x, y);
    return !(px[0] > 0.98 && px[1] > 0.98 && px[2] > 0.98);
  };
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (covered(neural, x, y) == covered(analytic, x, y)) continue;
      // Disagreement allowed only within one pixel of the silhouette edge.
      bool near_edge = false;
      for (int dy = -1; dy <= 1 && !near_edge; ++dy) {
        for (int dx = -1; dx <= 1 && !near_edge; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= 64 || ny >= 64) continue;
          if (covered(analytic, nx, ny) != covered(analytic, x, y)) near_edge = true;
        }
      }
      CHECK(near_edge);
    }
  }
}

TEST_CASE("doubling samples barely changes a smooth converged render") {
  Rng rng(56);
  TriplaneField field = random_field(rng, 8, 4, 8, 0.3);
  Camera cam = front_camera(16);
  RaySampling s64;
  s64.samples_per_ray = 64;
  RaySampling s128;
  s128.samples_per_ray = 128;
  const Image a = render_image(cam, field, s64);
  const Image b = render_image(cam, field, s128);
  double max_delta = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    max_delta = std::max(max_delta, std::abs(a.rgb[i] - b.rgb[i]));
  }
  CHECK(max_delta <= 1e-2);
}

TEST_CASE("render-and-MSE gradients match finite differences end to end") {
  Rng rng(57);
  TriplaneField field = random_field(rng, 4, 3, 4, 0.4);
  Camera cam = front_camera(2);
  std::vector<Ray> rays;
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) rays.push_back(pixel_ray(cam, x + 0.5, y + 0.5));
  }
  Tensor target = Tensor::zeros({4, 3});
  for (double& v : target.values()) v = rng.uniform();
  RaySampling sampling;
  sampling.samples_per_ray = 4;

  auto loss_for = [&](const Tensor&) {
    Tensor rendered = render_rays(field, rays, sampling);
    return ops::mse(rendered, target);
  };
  CHECK(grad_check(loss_for, field.t_xy) <= 1e-4);
  CHECK(grad_check(loss_for, field.t_yz) <= 1e-4);
  CHECK(grad_check(loss_for, field.t_zx) <= 1e-4);
  CHECK(grad_check(loss_for, field.mlp_w1) <= 1e-4);
  CHECK(grad_check(loss_for, field.mlp_b1) <= 1e-4);
  CHECK(grad_check(loss_for, field.mlp_w2) <= 1e-4);
  CHECK(grad_check(loss_for, field.mlp_b2) <= 1e-4);
}
