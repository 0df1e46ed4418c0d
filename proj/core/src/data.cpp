#include "plkrf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "plkrf/error.hpp"
#include "plkrf/parallel.hpp"
#include "plkrf/rng.hpp"

namespace plkrf {

namespace {

// Nearest positive hit of a ray against one primitive, or nullopt.
std::optional<double> hit_primitive(const Primitive& prim, const Vec3& origin, const Vec3& dir) {
  if (prim.kind == Primitive::Kind::Sphere) {
    const double radius = prim.half_extent.x();
    const Vec3 oc = origin - prim.center;
    const double b = oc.dot(dir);
    const double c = oc.squaredNorm() - radius * radius;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double sqrt_disc = std::sqrt(disc);
    double t = -b - sqrt_disc;
    if (t < 1e-9) t = -b + sqrt_disc;
    if (t < 1e-9) return std::nullopt;
    return t;
  }
  // Axis-aligned box via slab intersection.
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double lo = prim.center[axis] - prim.half_extent[axis];
    const double hi = prim.center[axis] + prim.half_extent[axis];
    if (std::abs(dir[axis]) < 1e-15) {
      if (origin[axis] < lo || origin[axis] > hi) return std::nullopt;
      continue;
    }
    double t0 = (lo - origin[axis]) / dir[axis];
    double t1 = (hi - origin[axis]) / dir[axis];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_far < t_near) return std::nullopt;
  const double t = t_near > 1e-9 ? t_near : t_far;
  if (t < 1e-9) return std::nullopt;
  return t;
}

}  // namespace

Image render_primitives_analytic(const std::vector<Primitive>& primitives, const Camera& camera) {
  Image img = Image::filled(camera.width, camera.height, 1.0, 1.0, 1.0);
  parallel_for(static_cast<std::size_t>(camera.height), [&](std::size_t y0, std::size_t y1) {
    for (std::size_t y = y0; y < y1; ++y) {
      for (int x = 0; x < camera.width; ++x) {
        const Ray ray = pixel_ray(camera, x + 0.5, static_cast<double>(y) + 0.5);
        double best_t = std::numeric_limits<double>::infinity();
        const Primitive* best = nullptr;
        for (const Primitive& prim : primitives) {
          const auto t = hit_primitive(prim, ray.origin, ray.direction);
          if (t && *t < best_t) {
            best_t = *t;
            best = &prim;
          }
        }
        if (best) {
          double* px = img.pixel(x, static_cast<int>(y));
          px[0] = best->color[0];
          px[1] = best->color[1];
          px[2] = best->color[2];
        }
      }
    }
  });
  return img;
}

std::vector<Primitive> generate_primitives(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.min_primitives < 0 || spec.max_primitives < spec.min_primitives) {
    throw ContractError("generate_primitives: invalid primitive count range");
  }
  if (!spec.boxes && !spec.spheres && spec.max_primitives > 0) {
    throw ContractError("generate_primitives: no primitive kinds enabled");
  }
  Rng rng(seed);
  const int count = spec.min_primitives +
                    static_cast<int>(rng.uniform_index(
                        static_cast<std::uint64_t>(spec.max_primitives - spec.min_primitives + 1)));
  std::vector<Primitive> prims;
  prims.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Primitive p;
    if (spec.boxes && spec.spheres) {
      p.kind = rng.uniform() < 0.5 ? Primitive::Kind::Box : Primitive::Kind::Sphere;
    } else {
      p.kind = spec.boxes ? Primitive::Kind::Box : Primitive::Kind::Sphere;
    }
    const double size = rng.uniform(spec.min_size, spec.max_size);
    if (p.kind == Primitive::Kind::Sphere) {
      p.half_extent = Vec3::Constant(size);
    } else {
      p.half_extent = Vec3(rng.uniform(spec.min_size, spec.max_size),
                           rng.uniform(spec.min_size, spec.max_size),
                           rng.uniform(spec.min_size, spec.max_size));
    }
    for (int axis = 0; axis < 3; ++axis) {
      const double slack = std::min(spec.placement_bound, 0.98 - p.half_extent[axis]);
      p.center[axis] = rng.uniform(-slack, slack);
    }
    // Keep the whole primitive inside the unit sphere so any rotation of the
    // world frame leaves it inside the [-1,1]^3 render box.
    const double reach = p.half_extent.norm();
    const double max_center = std::max(0.0, 0.95 - reach);
    if (p.center.norm() > max_center) {
      p.center *= p.center.norm() > 0 ? max_center / p.center.norm() : 0.0;
    }
    p.color = spec.palette[rng.uniform_index(spec.palette.size())];
    prims.push_back(p);
  }
  return prims;
}

SceneInstance generate_scene(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.view_count < 1) throw ContractError("generate_scene: view count must be positive");
  if (spec.resolution < 1) throw ContractError("generate_scene: resolution must be positive");
  SceneInstance scene;
  scene.id = "synth_" + std::to_string(seed);
  std::vector<Primitive> prims = generate_primitives(spec, seed);

  Camera base;
  base.width = spec.resolution;
  base.height = spec.resolution;
  const double f = spec.focal_scale * spec.resolution;
  base.intrinsics << f, 0, spec.resolution / 2.0, 0, f, spec.resolution / 2.0, 0, 0, 1;

  Rng cam_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  scene.views.reserve(static_cast<std::size_t>(spec.view_count));
  for (int v = 0; v < spec.view_count; ++v) {
    Camera cam = base;
    Vec3 pos;
    if (spec.camera_elevation_deg >= 0.0) {
      const double azimuth = 2.0 * std::numbers::pi * v / spec.view_count;
      const double elevation = spec.camera_elevation_deg * std::numbers::pi / 180.0;
      pos = spec.camera_radius * Vec3(std::cos(azimuth) * std::cos(elevation),
                                      std::sin(azimuth) * std::cos(elevation),
                                      std::sin(elevation));
    } else {
      // Random viewpoints on the sphere, biased away from the poles.
      const double azimuth = cam_rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double z = cam_rng.uniform(-0.6, 0.9);
      const double rxy = std::sqrt(1.0 - z * z);
      pos = spec.camera_radius * Vec3(rxy * std::cos(azimuth), rxy * std::sin(azimuth), z);
    }
    cam.rotation = look_at_rotation(pos, Vec3::Zero());
    cam.center = pos;
    cam.validate();
    scene.views.push_back({render_primitives_analytic(prims, cam), cam});
  }
  return scene;
}

namespace {

std::string view_name(std::size_t index) {
  std::ostringstream os;
  os.width(6);
  os.fill('0');
  os << index;
  return os.str();
}

std::vector<double> read_all_reals(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::vector<double> values;
  double v;
  while (in >> v) values.push_back(v);
  return values;
}

}  // namespace

void save_srn_instance(const std::filesystem::path& instance_dir, const SceneInstance& scene) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(instance_dir / "pose", ec);
  fs::create_directories(instance_dir / "rgb", ec);
  if (ec) throw IoError("cannot create instance directory: " + instance_dir.string());
  if (scene.views.empty()) throw ContractError("save_srn_instance: scene has no views");

  const Camera& cam0 = scene.views[0].camera;
  std::ofstream intr(instance_dir / "intrinsics.txt");
  if (!intr) throw IoError("cannot write: " + (instance_dir / "intrinsics.txt").string());
  intr.precision(17);
  intr << cam0.intrinsics(0, 0) << " " << cam0.intrinsics(0, 2) << " " << cam0.intrinsics(1, 2)
       << " 0.\n";
  intr << "0. 0. 0.\n";
  intr << "1.\n";
  intr << cam0.height << " " << cam0.width << "\n";

  for (std::size_t v = 0; v < scene.views.size(); ++v) {
    const View& view = scene.views[v];
    std::ofstream pose(instance_dir / "pose" / (view_name(v) + ".txt"));
    if (!pose) throw IoError("cannot write pose file in " + instance_dir.string());
    pose.precision(17);
    // Row-major 4x4 camera-to-world on one line.
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose << view.camera.rotation(r, c) << " ";
      pose << view.camera.center[r] << " ";
    }
    pose << "0 0 0 1\n";
    write_png(instance_dir / "rgb" / (view_name(v) + ".png"), view.image);
  }
}

SceneInstance load_srn_instance(const std::filesystem::path& instance_dir) {
  namespace fs = std::filesystem;
  const fs::path intr_path = instance_dir / "intrinsics.txt";
  const std::vector<double> intr = read_all_reals(intr_path);
  // focal cx cy 0 / barycenter / height width, with an optional scale line.
  if (intr.size() != 9 && intr.size() != 10) {
    throw DataError("unrecognized intrinsics layout (" + std::to_string(intr.size()) +
                    " values): " + intr_path.string());
  }
  const double focal = intr[0];
  const double cx = intr[1];
  const double cy = intr[2];
  const int height = static_cast<int>(intr[intr.size() - 2]);
  const int width = static_cast<int>(intr[intr.size() - 1]);
  if (focal <= 0 || width <= 0 || height <= 0) {
    throw DataError("invalid intrinsics values: " + intr_path.string());
  }

  std::vector<fs::path> pose_files;
  std::vector<fs::path> rgb_files;
  if (!fs::is_directory(instance_dir / "pose") || !fs::is_directory(instance_dir / "rgb")) {
    throw DataError("instance is missing pose/ or rgb/: " + instance_dir.string());
  }
  for (const auto& e : fs::directory_iterator(instance_dir / "pose")) {
    if (e.path().extension() == ".txt") pose_files.push_back(e.path());
  }
  for (const auto& e : fs::directory_iterator(instance_dir / "rgb")) {
    if (e.path().extension() == ".png") rgb_files.push_back(e.path());
  }
  std::sort(pose_files.begin(), pose_files.end());
  std::sort(rgb_files.begin(), rgb_files.end());
  if (pose_files.size() != rgb_files.size()) {
    throw DataError("pose/rgb count mismatch in " + instance_dir.string());
  }

  SceneInstance scene;
  scene.id = instance_dir.filename().string();
  scene.views.reserve(pose_files.size());
  for (std::size_t v = 0; v < pose_files.size(); ++v) {
    const std::vector<double> pose = read_all_reals(pose_files[v]);
    if (pose.size() != 16) {
      throw DataError("pose file must hold 16 values, got " + std::to_string(pose.size()) + ": " +
                      pose_files[v].string());
    }
    View view;
    view.camera.width = width;
    view.camera.height = height;
    view.camera.intrinsics << focal, 0, cx, 0, focal, cy, 0, 0, 1;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) view.camera.rotation(r, c) = pose[static_cast<std::size_t>(r) * 4 + c];
      view.camera.center[r] = pose[static_cast<std::size_t>(r) * 4 + 3];
    }
    view.camera.validate();
    view.image = read_png(rgb_files[v]);
    if (view.image.width != width || view.image.height != height) {
      throw DataError("image size disagrees with intrinsics: " + rgb_files[v].string());
    }
    scene.views.push_back(std::move(view));
  }
  return scene;
}

std::vector<SceneInstance> load_srn(const std::filesystem::path& root, const std::string& split) {
  namespace fs = std::filesystem;
  const fs::path split_dir = root / split;
  std::vector<SceneInstance> scenes;
  if (!fs::exists(split_dir)) return scenes;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(split_dir)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  scenes.reserve(dirs.size());
  for (const fs::path& dir : dirs) {
    SceneInstance scene = load_srn_instance(dir);
    scene.split = split;
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ContractError("psnr: image sizes differ");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = a.rgb[i] - b.rgb[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.rgb.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ContractError("ssim: image sizes differ");
  }
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  if (a.width < kWindow || a.height < kWindow) {
    throw ContractError("ssim: image smaller than the 11x11 window");
  }

  const std::size_t n = a.pixel_count();
  std::vector<double> ga(n), gb(n);
  for (std::size_t p = 0; p < n; ++p) {
    ga[p] = (a.rgb[3 * p] + a.rgb[3 * p + 1] + a.rgb[3 * p + 2]) / 3.0;
    gb[p] = (b.rgb[3 * p] + b.rgb[3 * p + 1] + b.rgb[3 * p + 2]) / 3.0;
  }

  double kernel[kWindow];
  double ksum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - (kWindow - 1) / 2.0;
    kernel[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;

  const int w = a.width;
  const int h = a.height;
  double total = 0.0;
  std::size_t count = 0;
  for (int y = 0; y + kWindow <= h; ++y) {
    for (int x = 0; x + kWindow <= w; ++x) {
      double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
      for (int dy = 0; dy < kWindow; ++dy) {
        for (int dx = 0; dx < kWindow; ++dx) {
          const double wgt = kernel[dy] * kernel[dx];
          const double va = ga[static_cast<std::size_t>(y + dy) * w + (x + dx)];
          const double vb = gb[static_cast<std::size_t>(y + dy) * w + (x + dx)];
          mu_a += wgt * va;
          mu_b += wgt * vb;
          aa += wgt * va * va;
          bb += wgt * vb * vb;
          ab += wgt * va * vb;
        }
      }
      const double var_a = aa - mu_a * mu_a;
      const double var_b = bb - mu_b * mu_b;
      const double cov = ab - mu_a * mu_b;
      const double val = ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
                         ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
      total += val;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::vector<std::size_t> extrapolated_subset(const std::vector<Camera>& cameras,
                                             const std::vector<std::size_t>& input_indices) {
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < cameras.size(); ++v) {
    if (std::find(input_indices.begin(), input_indices.end(), v) != input_indices.end()) continue;
    bool far_from_all = true;
    for (std::size_t in : input_indices) {
      if (rotation_angle_deg(cameras[v].rotation, cameras[in].rotation) < 90.0) {
        far_from_all = false;
        break;
      }
    }
    if (far_from_all) out.push_back(v);
  }
  return out;
}

}  // namespace plkrf
