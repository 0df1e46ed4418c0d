#include "plkrf/geometry.hpp"

#include <cmath>
#include <numbers>

#include "plkrf/error.hpp"
#include "plkrf/rng.hpp"

namespace plkrf {

void Camera::validate() const {
  if ((rotation.transpose() * rotation - Mat3::Identity()).norm() > 1e-9 ||
      std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw GeometryError("camera rotation is not a proper rotation matrix");
  }
  if (std::abs(intrinsics(1, 0)) > 0 || std::abs(intrinsics(2, 0)) > 0 ||
      std::abs(intrinsics(2, 1)) > 0 || intrinsics(0, 0) <= 0 || intrinsics(1, 1) <= 0) {
    throw GeometryError("camera intrinsics must be upper-triangular with positive focals");
  }
}

Tensor DistanceBias::to_tensor() const {
  return Tensor::from_data({rows, cols}, values);
}

PluckerLine ray_to_plucker(const Vec3& origin, const Vec3& direction) {
  const double norm = direction.norm();
  if (norm <= 1e-12) throw GeometryError("ray_to_plucker: degenerate (near-zero) direction");
  const Vec3 d = direction / norm;
  return {d, origin.cross(d)};
}

double line_distance(const PluckerLine& a, const PluckerLine& b) {
  const Vec3 cross = a.direction.cross(b.direction);
  const double cross_norm = cross.norm();
  if (cross_norm > kParallelEps) {
    return std::abs(a.direction.dot(b.moment) + b.direction.dot(a.moment)) / cross_norm;
  }
  // Parallel (or anti-parallel): project the moments onto the plane
  // perpendicular to the shared direction. The d1·d2 factor aligns m2's sign.
  const double align = a.direction.dot(b.direction);
  return (a.direction.cross(a.moment - align * b.moment)).norm();
}

double line_distance_least_squares(const Vec3& o1, const Vec3& d1, const Vec3& o2,
                                   const Vec3& d2) {
  // min_{s,t} ‖(o1 + s d1) - (o2 + t d2)‖ equals the norm of o1 - o2 with its
  // span(d1, d2) component projected out. The projection (Gram-Schmidt) form
  // stays accurate for near-parallel pairs, where solving the normal
  // equations loses every significant digit; extended precision covers the
  // residual cancellation. The parallel fallback engages at the same
  // cross-product threshold as line_distance, since the infinite-line
  // distance is discontinuous at exact parallelism.
  using Scalar = long double;
  using LVec = Eigen::Matrix<Scalar, 3, 1>;
  const LVec q1 = d1.cast<Scalar>().normalized();
  const LVec u2 = d2.cast<Scalar>().normalized();
  const LVec w = (o1 - o2).cast<Scalar>();
  LVec v = u2 - u2.dot(q1) * q1;  // ‖v‖ = ‖d1 x d2‖ for unit directions
  constexpr Scalar kParallelEpsSq = static_cast<Scalar>(kParallelEps) * kParallelEps;
  LVec residual = w - w.dot(q1) * q1;
  if (v.squaredNorm() > kParallelEpsSq) {
    const LVec q2 = v.normalized();
    residual -= residual.dot(q2) * q2;
  }
  return static_cast<double>(residual.norm());
}

double max_line_distance_error(const LineDistanceFn& fn, int trials, std::uint64_t seed,
                               double log_cross_min, double log_cross_max) {
  Rng rng(seed);
  auto random_unit = [&rng] {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    while (v.norm() < 1e-6) v = Vec3(rng.normal(), rng.normal(), rng.normal());
    return Vec3(v.normalized());
  };
  auto random_point = [&rng] {
    return Vec3(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
  };
  double max_err = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const Vec3 o1 = random_point();
    const Vec3 o2 = random_point();
    const Vec3 d1 = random_unit();
    Vec3 d2;
    const int kind = trial % 8;
    if (kind == 0 || kind == 1) {
      // Near-parallel pair with controlled cross-product norm.
      Vec3 perp = d1.cross(random_unit());
      while (perp.norm() < 1e-6) perp = d1.cross(random_unit());
      perp.normalize();
      const double eps = std::pow(10.0, rng.uniform(log_cross_min, log_cross_max));
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      d2 = (sign * d1 + eps * perp).normalized();
    } else if (kind == 2) {
      d2 = rng.uniform() < 0.5 ? Vec3(-d1) : d1;  // exactly (anti-)parallel
    } else {
      d2 = random_unit();
    }
    const double got = fn(ray_to_plucker(o1, d1), ray_to_plucker(o2, d2));
    const double want = line_distance_least_squares(o1, d1, o2, d2);
    max_err = std::max(max_err, std::abs(got - want));
  }
  return max_err;
}

Ray pixel_ray(const Camera& camera, double u, double v) {
  const double det = camera.intrinsics.determinant();
  if (std::abs(det) < 1e-12) throw GeometryError("pixel_ray: singular intrinsics");
  const Vec3 homogeneous(u, v, 1.0);
  const Vec3 cam_dir = camera.intrinsics.inverse() * homogeneous;
  const Vec3 world_dir = camera.rotation * cam_dir / cam_dir.norm();
  return {camera.center, world_dir};
}

std::vector<PluckerLine> patch_rays(const Camera& camera, int patch_grid) {
  if (patch_grid < 1) throw GeometryError("patch_rays: patch grid must be positive");
  if (camera.width % patch_grid != 0 || camera.height % patch_grid != 0) {
    throw GeometryError("patch_rays: image extent not divisible by the patch grid");
  }
  const double patch_w = static_cast<double>(camera.width) / patch_grid;
  const double patch_h = static_cast<double>(camera.height) / patch_grid;
  std::vector<PluckerLine> lines;
  lines.reserve(static_cast<std::size_t>(patch_grid) * patch_grid);
  for (int row = 0; row < patch_grid; ++row) {
    for (int col = 0; col < patch_grid; ++col) {
      const double u = (col + 0.5) * patch_w;
      const double v = (row + 0.5) * patch_h;
      const Ray ray = pixel_ray(camera, u, v);
      lines.push_back(ray_to_plucker(ray.origin, ray.direction));
    }
  }
  return lines;
}

std::vector<PluckerLine> triplane_lines(int grid_size) {
  if (grid_size < 1) throw GeometryError("triplane_lines: grid size must be positive");
  const int n = grid_size;
  // Line orientation per plane; distances do not depend on the sign.
  const Vec3 plane_dir[3] = {Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  std::vector<PluckerLine> lines;
  lines.reserve(static_cast<std::size_t>(3) * n * n);
  auto center = [n](int idx) { return -1.0 + 2.0 * (idx + 0.5) / static_cast<double>(n); };
  for (int plane = 0; plane < 3; ++plane) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double a = center(i);
        const double b = center(j);
        Vec3 point;
        switch (plane) {
          case 0: point = Vec3(a, b, 0.0); break;   // T_xy: (x, y)
          case 1: point = Vec3(0.0, a, b); break;   // T_yz: (y, z)
          default: point = Vec3(b, 0.0, a); break;  // T_zx: (z, x)
        }
        lines.push_back(ray_to_plucker(point, plane_dir[plane]));
      }
    }
  }
  return lines;
}

DistanceBias distance_matrix(const std::vector<PluckerLine>& queries,
                             const std::vector<PluckerLine>& keys,
                             const std::vector<bool>& cls_flags) {
  if (!cls_flags.empty() && cls_flags.size() != keys.size()) {
    throw ContractError("distance_matrix: cls flag count must match key count");
  }
  DistanceBias bias;
  bias.rows = queries.size();
  bias.cols = keys.size();
  bias.values.assign(bias.rows * bias.cols, 0.0);
  bias.cls_cols.assign(keys.size(), false);
  for (std::size_t k = 0; k < cls_flags.size(); ++k) bias.cls_cols[k] = cls_flags[k];
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t k = 0; k < keys.size(); ++k) {
      bias.values[q * bias.cols + k] =
          bias.cls_cols[k] ? 0.0 : line_distance(queries[q], keys[k]);
    }
  }
  return bias;
}

std::vector<Camera> relative_poses(const std::vector<Camera>& cameras) {
  if (cameras.empty()) throw ContractError("relative_poses: empty camera list");
  const Mat3 r0_inv = cameras[0].rotation.transpose();
  const Vec3 t0 = cameras[0].center;
  std::vector<Camera> out = cameras;
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    out[i].rotation = r0_inv * cameras[i].rotation;
    out[i].center = r0_inv * (cameras[i].center - t0);
  }
  return out;
}

double rotation_angle_deg(const Mat3& r1, const Mat3& r2) {
  const double trace = (r1.transpose() * r2).trace();
  const double c = std::clamp((trace - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

Mat3 look_at_rotation(const Vec3& position, const Vec3& target, const Vec3& up) {
  Vec3 forward = target - position;
  const double norm = forward.norm();
  if (norm <= 1e-12) throw GeometryError("look_at_rotation: position coincides with target");
  forward /= norm;
  Vec3 right = forward.cross(up);
  if (right.norm() <= 1e-9) right = forward.cross(Vec3(0, 1, 0));
  right.normalize();
  Mat3 r;
  r.col(0) = right;
  r.col(1) = forward.cross(right);  // image y points world-down
  r.col(2) = forward;
  return r;
}

}  // namespace plkrf
