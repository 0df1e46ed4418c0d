#include <doctest.h>

#include <cmath>
#include <numbers>

#include "plkrf/error.hpp"
#include "plkrf/geometry.hpp"
#include "plkrf/rng.hpp"

using namespace plkrf;

namespace {

Vec3 random_unit(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  while (v.norm() < 1e-6) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

Vec3 random_point(Rng& rng, double scale = 2.0) {
  return {rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale)};
}

Camera simple_camera(double f, int size) {
  Camera cam;
  cam.width = size;
  cam.height = size;
  cam.intrinsics << f, 0, size / 2.0, 0, f, size / 2.0, 0, 0, 1;
  return cam;
}

Mat3 axis_angle(const Vec3& axis, double deg) {
  return Eigen::AngleAxisd(deg * std::numbers::pi / 180.0, axis.normalized()).toRotationMatrix();
}

}  // namespace

TEST_CASE("ray_to_plucker hand cases") {
  PluckerLine l = ray_to_plucker(Vec3(0, 0, 0), Vec3(0, 0, 5));
  CHECK((l.direction - Vec3(0, 0, 1)).norm() <= 1e-15);
  CHECK(l.moment.norm() <= 1e-15);

  PluckerLine l2 = ray_to_plucker(Vec3(1, 0, 0), Vec3(0, 0, 1));
  CHECK((l2.direction - Vec3(0, 0, 1)).norm() <= 1e-15);
  CHECK((l2.moment - Vec3(0, -1, 0)).norm() <= 1e-15);

  CHECK_THROWS_AS(ray_to_plucker(Vec3(1, 2, 3), Vec3(0, 0, 1e-13)), GeometryError);
}

TEST_CASE("plucker invariants: unit direction, origin invariance, incidence") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec3 o = random_point(rng);
    const Vec3 d = random_unit(rng) * rng.uniform(0.1, 5.0);
    const PluckerLine a = ray_to_plucker(o, d);
    CHECK(std::abs(a.direction.norm() - 1.0) <= 1e-12);
    CHECK(std::abs(a.direction.dot(a.moment)) <= 1e-12);
    const double shift = rng.uniform(-20.0, 20.0);
    const PluckerLine b = ray_to_plucker(o + shift * a.direction, d);
    CHECK((a.direction - b.direction).norm() <= 1e-12);
    CHECK((a.moment - b.moment).norm() <= 1e-12);
  }
  // The spec's "o + 3 d" case verbatim.
  const Vec3 o(0.3, -1.2, 0.7);
  const Vec3 d(0.5, 0.2, -0.8);
  const PluckerLine a = ray_to_plucker(o, d);
  const PluckerLine b = ray_to_plucker(o + 3.0 * a.direction, d);
  CHECK((a.moment - b.moment).norm() <= 1e-12);
}

TEST_CASE("line_distance hand cases") {
  const PluckerLine x_axis = ray_to_plucker(Vec3(0, 0, 0), Vec3(1, 0, 0));
  CHECK(line_distance(x_axis, x_axis) == 0.0);

  const PluckerLine offset_y = ray_to_plucker(Vec3(0, 0, 1), Vec3(0, 1, 0));
  CHECK(line_distance(x_axis, offset_y) == doctest::Approx(1.0).epsilon(1e-12));

  const PluckerLine z1 = ray_to_plucker(Vec3(0, 0, 0), Vec3(0, 0, 1));
  const PluckerLine z2 = ray_to_plucker(Vec3(1, 0, 0), Vec3(0, 0, 1));
  CHECK(line_distance(z1, z2) == doctest::Approx(1.0).epsilon(1e-12));

  // Anti-parallel pair through the same offset.
  const PluckerLine z2_rev = ray_to_plucker(Vec3(1, 0, 0), Vec3(0, 0, -1));
  CHECK(line_distance(z1, z2_rev) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("line_distance matches the least-squares oracle") {
  Rng rng(7);
  double max_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec3 o1 = random_point(rng);
    const Vec3 o2 = random_point(rng);
    const Vec3 d1 = random_unit(rng);
    const Vec3 d2 = random_unit(rng);
    const double got = line_distance(ray_to_plucker(o1, d1), ray_to_plucker(o2, d2));
    const double want = line_distance_least_squares(o1, d1, o2, d2);
    max_err = std::max(max_err, std::abs(got - want));
  }
  CHECK(max_err <= 1e-9);
}

TEST_CASE("line_distance near the parallel threshold agrees with the oracle") {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const Vec3 o1 = random_point(rng);
    const Vec3 o2 = random_point(rng);
    const Vec3 d1 = random_unit(rng);
    // Perturbations straddling eps_par on |d1 x d2|.
    const double eps = std::pow(10.0, rng.uniform(-12.0, -6.0));
    Vec3 perp = d1.cross(random_unit(rng));
    while (perp.norm() < 1e-6) perp = d1.cross(random_unit(rng));
    perp.normalize();
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const Vec3 d2 = (sign * d1 + eps * perp).normalized();
    const double got = line_distance(ray_to_plucker(o1, d1), ray_to_plucker(o2, d2));
    const double want = line_distance_least_squares(o1, d1, o2, d2);
    CHECK(std::abs(got - want) <= 1e-6);
  }
}

TEST_CASE("line_distance symmetry and zero-iff-intersecting") {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const PluckerLine a = ray_to_plucker(random_point(rng), random_unit(rng));
    const PluckerLine b = ray_to_plucker(random_point(rng), random_unit(rng));
    CHECK(std::abs(line_distance(a, b) - line_distance(b, a)) <= 1e-12);
  }
  // Intersecting pairs built through a shared point.
  for (int trial = 0; trial < 500; ++trial) {
    const Vec3 meet = random_point(rng);
    const Vec3 d1 = random_unit(rng);
    const Vec3 d2 = random_unit(rng);
    if (d1.cross(d2).norm() < 1e-3) continue;
    const PluckerLine a = ray_to_plucker(meet - 2.0 * d1, d1);
    const PluckerLine b = ray_to_plucker(meet + 1.5 * d2, d2);
    CHECK(line_distance(a, b) <= 1e-7);
  }
}

TEST_CASE("pixel_ray hand cases") {
  Camera cam;
  cam.width = 4;
  cam.height = 4;
  cam.intrinsics << 2.0, 0, 0, 0, 2.0, 0, 0, 0, 1;
  const Ray r = pixel_ray(cam, 0, 0);
  CHECK((r.direction - Vec3(0, 0, 1)).norm() <= 1e-15);
  CHECK(r.origin.norm() == 0.0);

  Camera cam2 = simple_camera(57.3, 64);
  cam2.rotation = axis_angle(Vec3(0.3, -0.5, 1.0), 71.0);
  cam2.center = Vec3(1, 2, 3);
  const Ray rp = pixel_ray(cam2, 32.0, 32.0);
  CHECK((rp.direction - cam2.rotation * Vec3(0, 0, 1)).norm() <= 1e-12);
  CHECK((rp.origin - cam2.center).norm() == 0.0);

  Camera singular = cam2;
  singular.intrinsics(0, 0) = 0.0;
  CHECK_THROWS_AS(pixel_ray(singular, 1, 1), GeometryError);
}

TEST_CASE("pixel_ray triangulates a known 3D point") {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    Camera a = simple_camera(80.0, 64);
    Camera b = simple_camera(80.0, 64);
    a.rotation = axis_angle(random_unit(rng), rng.uniform(0.0, 180.0));
    b.rotation = axis_angle(random_unit(rng), rng.uniform(0.0, 180.0));
    a.center = random_point(rng, 3.0);
    b.center = random_point(rng, 3.0);
    const Vec3 target = random_point(rng, 0.5);

    auto project = [](const Camera& cam, const Vec3& x) {
      const Vec3 cam_pt = cam.rotation.transpose() * (x - cam.center);
      const Vec3 px = cam.intrinsics * cam_pt;
      return std::pair<double, double>{px.x() / px.z(), px.y() / px.z()};
    };
    const Vec3 in_a = a.rotation.transpose() * (target - a.center);
    const Vec3 in_b = b.rotation.transpose() * (target - b.center);
    if (in_a.z() < 0.2 || in_b.z() < 0.2) continue;  // behind the camera

    const auto [ua, va] = project(a, target);
    const auto [ub, vb] = project(b, target);
    const Ray ra = pixel_ray(a, ua, va);
    const Ray rb = pixel_ray(b, ub, vb);
    // Closest-point midpoint of the two rays recovers the target.
    const Vec3 w = ra.origin - rb.origin;
    const double bd = ra.direction.dot(rb.direction);
    const double denom = 1.0 - bd * bd;
    if (denom < 1e-9) continue;
    const double d1w = ra.direction.dot(w);
    const double d2w = rb.direction.dot(w);
    const double s = (bd * d2w - d1w) / denom;
    const double t = (d2w - bd * d1w) / denom;
    const Vec3 p1 = ra.origin + s * ra.direction;
    const Vec3 p2 = rb.origin + t * rb.direction;
    CHECK(((p1 + p2) / 2.0 - target).norm() <= 1e-8);
  }
}

TEST_CASE("patch_rays layout and counts") {
  Camera cam = simple_camera(50.0, 64);
  const auto single = patch_rays(cam, 1);
  REQUIRE(single.size() == 1);
  // Through the image center: same line as the principal ray.
  const Ray center = pixel_ray(cam, 32.0, 32.0);
  const PluckerLine center_line = ray_to_plucker(center.origin, center.direction);
  CHECK((single[0].direction - center_line.direction).norm() <= 1e-12);

  // Mirror symmetry of a symmetric camera.
  const auto four = patch_rays(cam, 2);
  REQUIRE(four.size() == 4);
  CHECK(four[0].direction.x() == doctest::Approx(-four[1].direction.x()));
  CHECK(four[0].direction.y() == doctest::Approx(four[1].direction.y()));
  CHECK(four[0].direction.y() == doctest::Approx(-four[2].direction.y()));

  Camera big = simple_camera(500.0, 448);
  CHECK(patch_rays(big, 32).size() == 1024);

  CHECK_THROWS_AS(patch_rays(simple_camera(50.0, 63), 2), GeometryError);
}

TEST_CASE("triplane_lines hand cases and ordering") {
  const auto n1 = triplane_lines(1);
  REQUIRE(n1.size() == 3);
  CHECK((n1[0].direction - Vec3(0, 0, 1)).norm() <= 1e-15);
  CHECK((n1[1].direction - Vec3(1, 0, 0)).norm() <= 1e-15);
  CHECK((n1[2].direction - Vec3(0, 1, 0)).norm() <= 1e-15);
  for (const auto& l : n1) CHECK(l.moment.norm() <= 1e-15);

  const auto n2 = triplane_lines(2);
  REQUIRE(n2.size() == 12);
  for (const auto& l : n2) {
    const Vec3 p = l.closest_point_to_origin();
    for (int axis = 0; axis < 3; ++axis) {
      if (std::abs(l.direction[axis]) < 0.5) {
        CHECK(std::abs(std::abs(p[axis]) - 0.5) <= 1e-12);
      }
    }
  }

  // Deterministic re-invocation.
  const auto again = triplane_lines(2);
  for (std::size_t i = 0; i < n2.size(); ++i) {
    CHECK((n2[i].direction - again[i].direction).norm() == 0.0);
    CHECK((n2[i].moment - again[i].moment).norm() == 0.0);
  }

  // Every line passes through the cube.
  for (int n : {1, 2, 5, 8}) {
    for (const auto& l : triplane_lines(n)) {
      const Vec3 p = l.closest_point_to_origin();
      CHECK(p.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("distance_matrix structure and CLS forcing") {
  const auto lines = triplane_lines(2);
  DistanceBias self = distance_matrix(lines, lines, {});
  CHECK(self.rows == 12);
  CHECK(self.cols == 12);
  for (std::size_t q = 0; q < self.rows; ++q) {
    CHECK(self.at(q, q) == 0.0);
    for (std::size_t k = 0; k < self.cols; ++k) {
      CHECK(self.at(q, k) >= 0.0);
      CHECK(self.at(q, k) == self.at(k, q));
    }
  }

  std::vector<bool> all_cls(lines.size(), true);
  DistanceBias zeroed = distance_matrix(lines, lines, all_cls);
  for (double v : zeroed.values) CHECK(v == 0.0);
}

TEST_CASE("distance_matrix column minima vanish for rays crossing the cube") {
  Camera cam = simple_camera(60.0, 64);
  cam.rotation = look_at_rotation(Vec3(3, 0, 0), Vec3::Zero());
  cam.center = Vec3(3, 0, 0);
  const auto queries = triplane_lines(8);
  const auto keys = patch_rays(cam, 8);
  DistanceBias bias = distance_matrix(queries, keys, {});
  for (std::size_t k = 0; k < keys.size(); ++k) {
    // Keys whose rays pass near the cube center must be near some grid line.
    const double dist_to_origin = line_distance(
        keys[k], PluckerLine{Vec3(0, 0, 1), Vec3::Zero()});
    if (dist_to_origin > 0.5) continue;
    double col_min = 1e300;
    for (std::size_t q = 0; q < queries.size(); ++q) col_min = std::min(col_min, bias.at(q, k));
    CHECK(col_min <= 2.0 / 8.0);
  }
}

TEST_CASE("relative_poses maps the first camera to the identity") {
  Camera cam = simple_camera(40.0, 32);
  cam.rotation = axis_angle(Vec3(1, 2, 3), 33.0);
  cam.center = Vec3(4, -5, 6);

  const auto single = relative_poses({cam});
  CHECK((single[0].rotation - Mat3::Identity()).norm() <= 1e-12);
  CHECK(single[0].center.norm() <= 1e-12);

  const auto pair = relative_poses({cam, cam});
  CHECK((pair[1].rotation - Mat3::Identity()).norm() <= 1e-12);
  CHECK(pair[1].center.norm() <= 1e-12);

  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    Camera a = simple_camera(40.0, 32);
    Camera b = simple_camera(40.0, 32);
    a.rotation = axis_angle(random_unit(rng), rng.uniform(0.0, 179.0));
    b.rotation = axis_angle(random_unit(rng), rng.uniform(0.0, 179.0));
    a.center = random_point(rng);
    b.center = random_point(rng);
    const auto rel = relative_poses({a, b});
    // Compose back with a's pose: R_a * rel, t = R_a * t_rel + t_a.
    const Mat3 recovered_r = a.rotation * rel[1].rotation;
    const Vec3 recovered_t = a.rotation * rel[1].center + a.center;
    CHECK((recovered_r - b.rotation).norm() <= 1e-10);
    CHECK((recovered_t - b.center).norm() <= 1e-10);
  }
}

TEST_CASE("rotation_angle hand and constructed cases") {
  const Mat3 id = Mat3::Identity();
  CHECK(rotation_angle_deg(id, id) == 0.0);
  CHECK(rotation_angle_deg(id, axis_angle(Vec3(0, 1, 0), 90.0)) == doctest::Approx(90.0).epsilon(1e-12));

  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const Mat3 base = axis_angle(random_unit(rng), rng.uniform(0.0, 179.0));
    const double theta = rng.uniform(0.5, 179.5);
    const Mat3 rotated = base * axis_angle(random_unit(rng), theta);
    CHECK(std::abs(rotation_angle_deg(base, rotated) - theta) <= 1e-9);
  }
}

TEST_CASE("the distance oracle catches an injected sign error") {
  const auto correct = [](const PluckerLine& a, const PluckerLine& b) {
    return line_distance(a, b);
  };
  CHECK(max_line_distance_error(correct, 2000, 99) <= 1e-7);

  // Mutant with the skew-branch sign flipped.
  const auto mutant = [](const PluckerLine& a, const PluckerLine& b) {
    const Vec3 cross = a.direction.cross(b.direction);
    if (cross.norm() > kParallelEps) {
      return std::abs(a.direction.dot(b.moment) - b.direction.dot(a.moment)) / cross.norm();
    }
    return line_distance(a, b);
  };
  CHECK(max_line_distance_error(mutant, 2000, 99) > 1e-3);
}

TEST_CASE("camera validation catches bad inputs") {
  Camera cam = simple_camera(50.0, 32);
  cam.validate();
  Camera bad = cam;
  bad.rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(bad.validate(), GeometryError);
  Camera bad_k = cam;
  bad_k.intrinsics(1, 0) = 0.5;
  CHECK_THROWS_AS(bad_k.validate(), GeometryError);
}
