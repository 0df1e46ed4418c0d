#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

// End-to-end runs of the installed binary: gen-data -> train -> render ->
// eval -> selfcheck, exercising exit codes and on-disk artifacts.

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return PLKRF_CLI_PATH; }

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "plkrf_cli_test";
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string common_flags(const fs::path& root) {
  return " --workers 1"
         " --set synth.resolution=16 --set synth.view_count=6"
         " --set synth.train_scenes=2 --set synth.val_scenes=0 --set synth.test_scenes=1"
         " --set model.layers=1 --set model.hidden_dim=16 --set model.heads=2"
         " --set model.grid_size=2 --set model.triplane_dim=4 --set model.patch_size=8"
         " --set model.image_feature_dim=8 --set model.ffn_ratio=2"
         " --set model.point_decoder_hidden=8"
         " --set train.total_steps=2 --set train.warmup_steps=1"
         " --set train.rays_per_view=8 --set train.samples_per_ray=4"
         " --set dataset_root=" + (root / "data").string() +
         " --set checkpoint_dir=" + (root / "run").string();
}

}  // namespace

TEST_CASE("cli pipeline: gen-data, train, render, eval, selfcheck") {
  const fs::path root = work_dir();
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string flags = common_flags(root);

  REQUIRE(run("gen-data" + flags) == 0);
  CHECK(fs::exists(root / "data" / "train" / "scene_0000" / "intrinsics.txt"));
  CHECK(fs::exists(root / "data" / "test" / "scene_0000" / "rgb" / "000000.png"));

  // Determinism: regenerating into a second root is byte-identical.
  const fs::path root2 = work_dir() / "again";
  std::string flags2 = common_flags(root2);
  REQUIRE(run("gen-data" + flags2) == 0);
  CHECK(file_bytes(root / "data" / "train" / "scene_0000" / "rgb" / "000000.png") ==
        file_bytes(root2 / "data" / "train" / "scene_0000" / "rgb" / "000000.png"));

  REQUIRE(run("train" + flags) == 0);
  const fs::path ckpt = root / "run" / "checkpoint_final";
  CHECK(fs::exists(ckpt / "model.plkrf"));
  CHECK(fs::exists(root / "run" / "train_log.csv"));
  CHECK(fs::exists(root / "run" / "config.json"));

  const std::string render_args = "render --checkpoint " + ckpt.string() + " --scene " +
                                  (root / "data" / "test" / "scene_0000").string() +
                                  " --inputs 0,3 --views 1 --out " + (root / "renders").string();
  REQUIRE(run(render_args) == 0);
  CHECK(fs::exists(root / "renders" / "view_0001.png"));
  // Re-render is byte-identical.
  REQUIRE(run(render_args) == 0);
  const std::string first = file_bytes(root / "renders" / "view_0001.png");
  REQUIRE(run(render_args) == 0);
  CHECK(file_bytes(root / "renders" / "view_0001.png") == first);

  REQUIRE(run("render --checkpoint " + ckpt.string() + " --scene " +
              (root / "data" / "test" / "scene_0000").string() + " --inputs 0,3 --orbit 1 --out " +
              (root / "orbit").string()) == 0);
  CHECK(fs::exists(root / "orbit" / "orbit_0000.png"));

  REQUIRE(run("eval --checkpoint " + ckpt.string() + " --split test --inputs 0,3 --out " +
              (root / "eval").string()) == 0);
  CHECK(fs::exists(root / "eval" / "metrics.csv"));
  CHECK(fs::exists(root / "eval" / "summary.json"));

  // Self-eval reports the +inf sentinel and SSIM 1.
  REQUIRE(run("eval --checkpoint " + ckpt.string() + " --split test --inputs 0,3 --self-eval --out " +
              (root / "self_eval").string()) == 0);
  std::ifstream csv(root / "self_eval" / "metrics.csv");
  std::string header, row;
  std::getline(csv, header);
  REQUIRE(std::getline(csv, row));
  CHECK(row.find("inf") != std::string::npos);
  CHECK(row.find(",1,") != std::string::npos);

  CHECK(run("selfcheck") == 0);
}

TEST_CASE("cli exit codes") {
  const fs::path root = work_dir() / "codes";
  fs::remove_all(root);
  fs::create_directories(root);

  // Unknown subcommand / bad flags: argument error from the parser.
  CHECK(run("definitely-not-a-command") != 0);

  // Missing dataset: data error (3).
  CHECK(run("train --set dataset_root=" + (root / "nope").string()) == 3);

  // Malformed override: config error (2).
  CHECK(run("gen-data --set not_an_assignment") == 2);

  // Unknown view id: argument/config error (2).
  const fs::path data_root = work_dir();
  const fs::path ckpt = data_root / "run" / "checkpoint_final";
  if (fs::exists(ckpt)) {
    CHECK(run("render --checkpoint " + ckpt.string() + " --scene " +
              (data_root / "data" / "test" / "scene_0000").string() +
              " --inputs 0,3 --views 99") == 2);
  }
}
