#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "plkrf/tensor.hpp"

namespace plkrf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// A 3D line as (direction, moment) with unit direction and moment = origin x
// direction. Invariant to the choice of origin along the line.
struct PluckerLine {
  Vec3 direction;
  Vec3 moment;

  // Point on the line closest to the world origin.
  Vec3 closest_point_to_origin() const { return direction.cross(moment); }
};

// Pinhole camera. `rotation` maps camera frame to world, `center` is the
// camera position in world units; the camera looks along its +z axis.
struct Camera {
  Mat3 intrinsics = Mat3::Identity();
  Mat3 rotation = Mat3::Identity();
  Vec3 center = Vec3::Zero();
  int width = 0;
  int height = 0;

  // Throws GeometryError when R is not a proper rotation or K is not an
  // upper-triangular matrix with positive focal entries.
  void validate() const;
};

// Pairwise line distances used as attention bias. Entries are nonnegative;
// columns flagged as CLS tokens are forced to zero.
struct DistanceBias {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major rows x cols
  std::vector<bool> cls_cols;

  double at(std::size_t q, std::size_t k) const { return values[q * cols + k]; }
  Tensor to_tensor() const;
};

// direction/‖direction‖ and moment = origin x d. Throws GeometryError on a
// near-zero direction.
PluckerLine ray_to_plucker(const Vec3& origin, const Vec3& direction);

// Closest distance between two lines: |d1·m2 + d2·m1| / ‖d1 x d2‖ for
// non-parallel pairs, ‖d1 x (m1 - (d1·d2) m2)‖ when ‖d1 x d2‖ <= eps_parallel.
inline constexpr double kParallelEps = 1e-9;
double line_distance(const PluckerLine& a, const PluckerLine& b);

// Independent check oracle: parameterize both lines by a point and direction
// and minimize ‖(o1 + s d1) - (o2 + t d2)‖ in closed form.
double line_distance_least_squares(const Vec3& o1, const Vec3& d1, const Vec3& o2, const Vec3& d2);

// Max |fn - least_squares| over random line pairs: generic pairs, exactly
// (anti-)parallel pairs, and near-parallel pairs whose cross-product norm is
// log-uniform in [10^log_cross_min, 10^log_cross_max]. Used by the self
// check; taking fn as a parameter lets tests verify the oracle catches
// deliberately broken distance functions. Both formulas are ill-conditioned
// as the cross norm approaches the parallel threshold, so callers pick the
// band to match the tolerance they are asserting.
using LineDistanceFn = std::function<double(const PluckerLine&, const PluckerLine&)>;
double max_line_distance_error(const LineDistanceFn& fn, int trials, std::uint64_t seed,
                               double log_cross_min = -7.0, double log_cross_max = -3.0);

// World ray through pixel (u, v): direction R K^-1 (u,v,1) normalized, origin
// at the camera center. Throws GeometryError on singular intrinsics.
struct Ray {
  Vec3 origin;
  Vec3 direction;
};
Ray pixel_ray(const Camera& camera, double u, double v);

// One line per patch of an E x E patch grid, through the patch-center pixel,
// row-major to match the embedder's token order.
std::vector<PluckerLine> patch_rays(const Camera& camera, int patch_grid);

// The 3N^2 query lines: for each plane (xy, yz, zx) and pixel (i, j)
// row-major, the line orthogonal to that plane through the pixel center
// -1 + 2(idx+0.5)/N on each in-plane axis of the [-1,1]^3 box.
std::vector<PluckerLine> triplane_lines(int grid_size);

// Pairwise distances with CLS-flagged key columns forced to zero.
DistanceBias distance_matrix(const std::vector<PluckerLine>& queries,
                             const std::vector<PluckerLine>& keys,
                             const std::vector<bool>& cls_flags);

// Poses re-expressed in the first camera's frame: camera 0 becomes identity
// rotation / zero center.
std::vector<Camera> relative_poses(const std::vector<Camera>& cameras);

// Geodesic angle between two rotations, in degrees.
double rotation_angle_deg(const Mat3& r1, const Mat3& r2);

// Helper shared by data generation and tests: camera at `position` looking at
// `target` with the given vertical up hint, y axis pointing image-down.
Mat3 look_at_rotation(const Vec3& position, const Vec3& target, const Vec3& up = Vec3(0, 0, 1));

}  // namespace plkrf
