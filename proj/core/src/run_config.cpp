#include "plkrf/run_config.hpp"

#include <nlohmann/json.hpp>
#include <fstream>

#include "plkrf/error.hpp"

namespace plkrf {

using nlohmann::json;

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
  }
}

void get_path(const json& j, const char* key, std::filesystem::path& out) {
  std::string s = out.string();
  get_if(j, key, s);
  out = s;
}

void get_color(const json& j, const char* key, std::array<double, 3>& out) {
  if (j.contains(key)) {
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 3) throw ConfigError(std::string("config field '") + key + "' needs 3 values");
    out = {v[0], v[1], v[2]};
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  if (j.contains("model")) {
    const json& m = j.at("model");
    get_if(m, "layers", c.model.layers);
    get_if(m, "hidden_dim", c.model.hidden_dim);
    get_if(m, "heads", c.model.heads);
    get_if(m, "grid_size", c.model.grid_size);
    get_if(m, "triplane_dim", c.model.triplane_dim);
    get_if(m, "patch_size", c.model.patch_size);
    get_if(m, "image_feature_dim", c.model.image_feature_dim);
    get_if(m, "ffn_ratio", c.model.ffn_ratio);
    get_if(m, "point_decoder_hidden", c.model.point_decoder_hidden);
    get_if(m, "bias_enabled", c.model.bias_enabled);
    get_if(m, "plucker_encoding_enabled", c.model.plucker_encoding_enabled);
    get_if(m, "gamma_learnable", c.model.gamma_learnable);
    get_if(m, "pluckerf_input", c.model.pluckerf_input);
    get_if(m, "embedder_frozen", c.model.embedder_frozen);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    get_if(t, "input_views", c.train.input_views);
    get_if(t, "target_views", c.train.target_views);
    get_if(t, "perceptual_weight", c.train.perceptual_weight);
    get_if(t, "total_steps", c.train.total_steps);
    get_if(t, "warmup_steps", c.train.warmup_steps);
    get_if(t, "base_lr", c.train.base_lr);
    get_if(t, "weight_decay", c.train.weight_decay);
    get_if(t, "beta1", c.train.beta1);
    get_if(t, "beta2", c.train.beta2);
    get_if(t, "rays_per_view", c.train.rays_per_view);
    get_if(t, "samples_per_ray", c.train.samples_per_ray);
    get_if(t, "grad_accum", c.train.grad_accum);
    get_if(t, "checkpoint_interval", c.train.checkpoint_interval);
    get_color(t, "background", c.train.background);
    get_if(t, "seed", c.train.seed);
    get_if(t, "debug_dump_distances", c.train.debug_dump_distances);
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    get_if(s, "min_primitives", c.synth.min_primitives);
    get_if(s, "max_primitives", c.synth.max_primitives);
    get_if(s, "boxes", c.synth.boxes);
    get_if(s, "spheres", c.synth.spheres);
    get_if(s, "placement_bound", c.synth.placement_bound);
    get_if(s, "min_size", c.synth.min_size);
    get_if(s, "max_size", c.synth.max_size);
    get_if(s, "camera_radius", c.synth.camera_radius);
    get_if(s, "camera_elevation_deg", c.synth.camera_elevation_deg);
    get_if(s, "view_count", c.synth.view_count);
    get_if(s, "resolution", c.synth.resolution);
    get_if(s, "focal_scale", c.synth.focal_scale);
    get_if(s, "seed", c.synth.seed);
    get_if(s, "train_scenes", c.synth.train_scenes);
    get_if(s, "val_scenes", c.synth.val_scenes);
    get_if(s, "test_scenes", c.synth.test_scenes);
  }
  get_path(j, "dataset_root", c.dataset_root);
  get_path(j, "checkpoint_dir", c.checkpoint_dir);
  get_path(j, "output_dir", c.output_dir);
  get_if(j, "workers", c.workers);
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["model"] = {{"layers", model.layers},
                {"hidden_dim", model.hidden_dim},
                {"heads", model.heads},
                {"grid_size", model.grid_size},
                {"triplane_dim", model.triplane_dim},
                {"patch_size", model.patch_size},
                {"image_feature_dim", model.image_feature_dim},
                {"ffn_ratio", model.ffn_ratio},
                {"point_decoder_hidden", model.point_decoder_hidden},
                {"bias_enabled", model.bias_enabled},
                {"plucker_encoding_enabled", model.plucker_encoding_enabled},
                {"gamma_learnable", model.gamma_learnable},
                {"pluckerf_input", model.pluckerf_input},
                {"embedder_frozen", model.embedder_frozen}};
  j["train"] = {{"input_views", train.input_views},
                {"target_views", train.target_views},
                {"perceptual_weight", train.perceptual_weight},
                {"total_steps", train.total_steps},
                {"warmup_steps", train.warmup_steps},
                {"base_lr", train.base_lr},
                {"weight_decay", train.weight_decay},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"rays_per_view", train.rays_per_view},
                {"samples_per_ray", train.samples_per_ray},
                {"grad_accum", train.grad_accum},
                {"checkpoint_interval", train.checkpoint_interval},
                {"background", train.background},
                {"seed", train.seed},
                {"debug_dump_distances", train.debug_dump_distances}};
  j["synth"] = {{"min_primitives", synth.min_primitives},
                {"max_primitives", synth.max_primitives},
                {"boxes", synth.boxes},
                {"spheres", synth.spheres},
                {"placement_bound", synth.placement_bound},
                {"min_size", synth.min_size},
                {"max_size", synth.max_size},
                {"camera_radius", synth.camera_radius},
                {"camera_elevation_deg", synth.camera_elevation_deg},
                {"view_count", synth.view_count},
                {"resolution", synth.resolution},
                {"focal_scale", synth.focal_scale},
                {"seed", synth.seed},
                {"train_scenes", synth.train_scenes},
                {"val_scenes", synth.val_scenes},
                {"test_scenes", synth.test_scenes}};
  j["dataset_root"] = dataset_root.string();
  j["checkpoint_dir"] = checkpoint_dir.string();
  j["output_dir"] = output_dir.string();
  j["workers"] = workers;
  return j;
}

void apply_dotted_override(json& j, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("override has an empty key segment: '" + assignment + "'");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig RunConfig::load(const std::filesystem::path& config_file,
                          const std::vector<std::string>& dotted_overrides) {
  json j = json::object();
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) throw ConfigError("cannot open config file: " + config_file.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!text.empty()) {
      json parsed = json::parse(text, nullptr, false);
      if (parsed.is_discarded()) throw ConfigError("config file is not valid JSON: " + config_file.string());
      j = std::move(parsed);
    }
  }
  for (const std::string& o : dotted_overrides) apply_dotted_override(j, o);
  return from_json(j);
}

void RunConfig::echo_to(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config echo: " + path.string());
  out << to_json().dump(2) << "\n";
}

}  // namespace plkrf
