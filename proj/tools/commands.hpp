#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "plkrf/run_config.hpp"

namespace plkrf::cli {

struct CommonArgs {
  std::filesystem::path config_file;
  std::vector<std::string> overrides;
  int workers = 0;  // 0: all hardware threads

  // Applies PLKRF_SEED and the worker count, then loads the merged config.
  RunConfig resolve() const;
};

int cmd_gen_data(const CommonArgs& args);
int cmd_train(const CommonArgs& args, const std::filesystem::path& resume);
int cmd_render(const CommonArgs& args, const std::filesystem::path& checkpoint,
               const std::filesystem::path& scene_dir, const std::string& views_csv, int orbit,
               const std::string& inputs_csv, const std::filesystem::path& out_dir);
int cmd_eval(const CommonArgs& args, const std::filesystem::path& checkpoint,
             const std::string& split, const std::string& inputs_csv,
             const std::filesystem::path& out_dir, bool self_eval);
int cmd_selfcheck();

}  // namespace plkrf::cli
