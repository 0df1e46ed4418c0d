#pragma once

#include <nlohmann/json_fwd.hpp>
#include <filesystem>
#include <string>
#include <vector>

#include "plkrf/data.hpp"
#include "plkrf/model.hpp"
#include "plkrf/training.hpp"

namespace plkrf {

// Full run settings: model + training + synthetic-data + paths. Every field
// has a default, so an empty JSON config is valid. Dotted-key overrides
// ("model.layers=4") take precedence over the config file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthSpec synth;
  std::filesystem::path dataset_root;
  std::filesystem::path checkpoint_dir = "runs";
  std::filesystem::path output_dir = "out";
  int workers = 0;  // 0: use all hardware threads; 1 is reference mode

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  static RunConfig load(const std::filesystem::path& config_file,
                        const std::vector<std::string>& dotted_overrides);

  // Writes the effective merged config (used for provenance echo).
  void echo_to(const std::filesystem::path& path) const;
};

// Applies "a.b.c=value" onto a JSON document; values parse as JSON when
// possible, otherwise as strings. Throws ConfigError on malformed input.
void apply_dotted_override(nlohmann::json& j, const std::string& assignment);

}  // namespace plkrf
