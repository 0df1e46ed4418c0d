#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "plkrf/data.hpp"
#include "plkrf/model.hpp"
#include "plkrf/optimizer.hpp"
#include "plkrf/renderer.hpp"

namespace plkrf {

struct TrainConfig {
  int input_views = 2;   // n
  int target_views = 2;  // k
  double perceptual_weight = 0.0;  // alpha; the perceptual term ships disabled
  std::int64_t total_steps = 2000;
  std::int64_t warmup_steps = 2500;
  double base_lr = 4e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  int rays_per_view = 128;
  int samples_per_ray = 64;
  int grad_accum = 1;
  std::int64_t checkpoint_interval = 0;  // 0: initial + final checkpoints only
  std::array<double, 3> background = {1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
  bool debug_dump_distances = false;

  void validate() const;
};

// Optional perceptual loss plug-in. `term` must return a scalar tensor;
// `alpha_at` overrides the constant weight with a step-indexed schedule.
struct PerceptualHook {
  std::function<Tensor(const Tensor& rendered, const Tensor& truth)> term;
  std::function<double(std::int64_t step)> alpha_at;
};

// Mean over views of MSE(rendered, truth) plus alpha times the perceptual
// term. Lists must pair up with matching shapes.
Tensor reconstruction_loss(const std::vector<Tensor>& rendered, const std::vector<Tensor>& truth,
                           double alpha, const PerceptualHook* hook = nullptr);

// Cameras re-expressed in the first camera's orientation with the world
// origin kept fixed: rotation R0^T R_i, center R0^T t_i. This keeps the
// object (dataset convention: centered at the origin) inside the renderer's
// [-1,1]^3 box while making the pipeline independent of the first camera's
// absolute orientation.
std::vector<Camera> canonicalize_cameras(const std::vector<Camera>& cameras);

// Infers the field once for a set of input views, then renders arbitrary
// target cameras in the same canonical frame.
class SceneRenderer {
 public:
  SceneRenderer(const ReconstructionModel& model, const std::vector<const Image*>& input_images,
                const std::vector<Camera>& input_cameras, RaySampling sampling);

  Image render(const Camera& target_camera) const;

 private:
  TriplaneField field_;
  Mat3 world_rotation_;
  RaySampling sampling_;
};

class Trainer {
 public:
  Trainer(ReconstructionModel& model, const TrainConfig& config);

  // One optimization step on one scene: sample n input + k target views,
  // canonicalize poses, forward, ray-batch losses on all n+k views, backward,
  // scheduled AdamW update. Returns the loss value.
  double train_step(const SceneInstance& scene);

  struct RunResult {
    std::int64_t steps = 0;
    double final_loss = 0.0;
  };
  // Shuffled-scene loop with CSV logging (step, lr, loss, per-layer gammas)
  // and periodic checkpoints under out_dir.
  RunResult run(const std::vector<SceneInstance>& dataset, const std::filesystem::path& out_dir);

  void save_state(const std::filesystem::path& dir) const;
  void load_state(const std::filesystem::path& dir);

  ReconstructionModel& model() { return model_; }
  OptimizerState& optimizer() { return optimizer_; }
  Rng& rng() { return rng_; }
  std::int64_t step() const { return step_; }
  void set_perceptual_hook(PerceptualHook hook) { hook_ = std::move(hook); }

  const DistanceBias& plane_plane_bias();
  const DistanceBias& image_plane_bias(const std::string& cache_key,
                                       const std::vector<const Image*>& images,
                                       const std::vector<Camera>& canonical_cameras);

 private:
  void write_checkpoint(const std::filesystem::path& out_dir, const std::string& tag) const;

  ReconstructionModel& model_;
  TrainConfig config_;
  OptimizerState optimizer_;
  Rng rng_;
  std::int64_t step_ = 0;
  PerceptualHook hook_;
  bool have_d_pp_ = false;
  DistanceBias d_pp_;
  std::map<std::string, DistanceBias> d_ip_cache_;
};

}  // namespace plkrf
