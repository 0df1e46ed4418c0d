#include <doctest.h>

#include <nlohmann/json.hpp>
#include <filesystem>
#include <fstream>

#include "plkrf/error.hpp"
#include "plkrf/run_config.hpp"

using namespace plkrf;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_CASE("empty config yields defaults") {
  const fs::path dir = fs::temp_directory_path() / "plkrf_cfg_test";
  fs::create_directories(dir);
  const fs::path empty = dir / "empty.json";
  std::ofstream(empty) << "";
  const RunConfig cfg = RunConfig::load(empty, {});
  CHECK(cfg.model.layers == 8);
  CHECK(cfg.model.hidden_dim == 512);
  CHECK(cfg.model.heads == 8);
  CHECK(cfg.model.patch_size == 14);
  CHECK(cfg.train.input_views == 2);
  CHECK(cfg.train.target_views == 2);
  CHECK(cfg.train.warmup_steps == 2500);
  CHECK(cfg.train.weight_decay == 0.05);
  CHECK(cfg.train.beta1 == 0.9);
  CHECK(cfg.train.beta2 == 0.95);
  CHECK(cfg.train.perceptual_weight == 0.0);
}

TEST_CASE("dotted overrides take precedence over the file") {
  const fs::path dir = fs::temp_directory_path() / "plkrf_cfg_test";
  fs::create_directories(dir);
  const fs::path file = dir / "base.json";
  std::ofstream(file) << R"({"model": {"layers": 4}, "train": {"base_lr": 0.001}})";
  const RunConfig cfg = RunConfig::load(
      file, {"model.layers=2", "model.bias_enabled=false", "train.seed=77",
             "dataset_root=/tmp/ds"});
  CHECK(cfg.model.layers == 2);
  CHECK(cfg.model.bias_enabled == false);
  CHECK(cfg.train.base_lr == 0.001);
  CHECK(cfg.train.seed == 77);
  CHECK(cfg.dataset_root == fs::path("/tmp/ds"));
}

TEST_CASE("config echo round-trips") {
  RunConfig cfg;
  cfg.model.layers = 3;
  cfg.train.rays_per_view = 99;
  cfg.synth.view_count = 12;
  const RunConfig back = RunConfig::from_json(cfg.to_json());
  CHECK(back.model.layers == 3);
  CHECK(back.train.rays_per_view == 99);
  CHECK(back.synth.view_count == 12);
  CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("malformed overrides and files raise config errors") {
  json j = json::object();
  CHECK_THROWS_AS(apply_dotted_override(j, "no_equals_sign"), ConfigError);
  CHECK_THROWS_AS(apply_dotted_override(j, "=value"), ConfigError);
  CHECK_THROWS_AS(apply_dotted_override(j, "a..b=1"), ConfigError);

  const fs::path dir = fs::temp_directory_path() / "plkrf_cfg_test";
  fs::create_directories(dir);
  const fs::path bad = dir / "bad.json";
  std::ofstream(bad) << "{not json";
  CHECK_THROWS_AS(RunConfig::load(bad, {}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(dir / "missing.json", {}), ConfigError);
}

TEST_CASE("string values pass through overrides") {
  json j = json::object();
  apply_dotted_override(j, "output_dir=results/run one");
  CHECK(j["output_dir"] == "results/run one");
  apply_dotted_override(j, "train.total_steps=2000");
  CHECK(j["train"]["total_steps"] == 2000);
}
