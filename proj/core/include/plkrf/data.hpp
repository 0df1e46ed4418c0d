#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "plkrf/geometry.hpp"
#include "plkrf/image.hpp"

namespace plkrf {

struct View {
  Image image;
  Camera camera;
};

// One posed object: the train/eval unit. All views share resolution and
// intrinsics.
struct SceneInstance {
  std::string id;
  std::vector<View> views;
  std::string split;  // train / val / test
};

// Flat-shaded primitive for synthetic scenes. Axis-aligned box or sphere.
struct Primitive {
  enum class Kind { Box, Sphere } kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Constant(0.2);  // radius in .x() for spheres
  std::array<double, 3> color = {0.5, 0.5, 0.5};
};

// Generator settings for the synthetic dataset. Primitives stay inside
// [-1,1]^3 so the renderer's box always covers the scene.
struct SynthSpec {
  int min_primitives = 1;
  int max_primitives = 3;
  bool boxes = true;
  bool spheres = true;
  std::vector<std::array<double, 3>> palette = {
      {0.85, 0.15, 0.15}, {0.15, 0.55, 0.85}, {0.95, 0.75, 0.10},
      {0.20, 0.70, 0.30}, {0.55, 0.25, 0.75}, {0.10, 0.10, 0.10}};
  double placement_bound = 0.55;  // |center| per axis
  double min_size = 0.15;
  double max_size = 0.35;
  double camera_radius = 3.0;
  double camera_elevation_deg = 20.0;  // ring elevation; <0 samples a sphere
  int view_count = 8;
  int resolution = 64;
  double focal_scale = 0.9;  // focal = scale * resolution
  std::uint64_t seed = 0;
  int train_scenes = 20;
  int val_scenes = 2;
  int test_scenes = 2;
};

// Analytic ray-cast render of primitives: nearest hit, flat color, white
// background. Independent of the neural renderer; serves as its oracle.
Image render_primitives_analytic(const std::vector<Primitive>& primitives, const Camera& camera);

// Deterministic scene from (spec, seed): primitives, ring/sphere cameras
// looking at the origin, analytic renders.
SceneInstance generate_scene(const SynthSpec& spec, std::uint64_t seed);
std::vector<Primitive> generate_primitives(const SynthSpec& spec, std::uint64_t seed);

// SRN-layout directory i/o. Layout per instance directory:
//   intrinsics.txt  focal cx cy 0 / barycenter xyz / [scale] / height width
//   pose/NNNNNN.txt 16 reals, row-major 4x4 camera-to-world
//   rgb/NNNNNN.png  8-bit RGB
// Pose and rgb files pair by sorted filename.
void save_srn_instance(const std::filesystem::path& instance_dir, const SceneInstance& scene);
std::vector<SceneInstance> load_srn(const std::filesystem::path& root, const std::string& split);
SceneInstance load_srn_instance(const std::filesystem::path& instance_dir);

// 10 log10(1 / MSE) over all channels, +inf when the images are identical.
double psnr(const Image& a, const Image& b);

// Mean local SSIM on channel-mean grayscale, 11x11 Gaussian window with
// sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, valid window positions only.
double ssim(const Image& a, const Image& b);

// Views rotated >= 90 degrees (geodesic, inclusive) from every input view,
// excluding the inputs themselves.
std::vector<std::size_t> extrapolated_subset(const std::vector<Camera>& cameras,
                                             const std::vector<std::size_t>& input_indices);

}  // namespace plkrf
