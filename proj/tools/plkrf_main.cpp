#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"
#include "plkrf/error.hpp"

// Exit codes: 0 success, 2 argument/config error, 3 data/ingestion error,
// 4 numeric failure.

int main(int argc, char** argv) {
  CLI::App app{"plkrf: few-view 3D reconstruction with line-distance-biased attention"};
  app.require_subcommand(1);

  plkrf::cli::CommonArgs common;
  auto add_common = [&common](CLI::App* cmd) {
    cmd->add_option("--config", common.config_file, "JSON config file");
    cmd->add_option("--set", common.overrides, "dotted-key override, e.g. model.layers=4");
    cmd->add_option("--workers", common.workers, "worker threads (1 = reference mode)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic SRN-layout dataset");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "train a model on an SRN-layout dataset");
  add_common(train);
  std::filesystem::path resume;
  train->add_option("--resume", resume, "checkpoint directory to resume from");

  CLI::App* render = app.add_subcommand("render", "render views from a checkpoint");
  add_common(render);
  std::filesystem::path ckpt, scene_dir, out_dir = "renders";
  std::string views_csv, inputs_csv;
  int orbit = 0;
  render->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  render->add_option("--scene", scene_dir, "SRN instance directory")->required();
  render->add_option("--views", views_csv, "comma-separated view ids");
  render->add_option("--orbit", orbit, "render an evenly spaced camera ring of this size");
  render->add_option("--inputs", inputs_csv, "comma-separated input view ids");
  render->add_option("--out", out_dir, "output directory");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  add_common(eval);
  std::filesystem::path eval_ckpt, eval_out = "eval";
  std::string split = "test", eval_inputs;
  bool self_eval = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval->add_option("--split", split, "dataset split (train/val/test)");
  eval->add_option("--inputs", eval_inputs, "comma-separated input view ids");
  eval->add_option("--out", eval_out, "output directory");
  eval->add_flag("--self-eval", self_eval, "debug: score ground truth against itself");

  CLI::App* selfcheck = app.add_subcommand("selfcheck", "run built-in numeric checks");
  (void)selfcheck;

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return plkrf::cli::cmd_gen_data(common);
    if (train->parsed()) return plkrf::cli::cmd_train(common, resume);
    if (render->parsed()) {
      return plkrf::cli::cmd_render(common, ckpt, scene_dir, views_csv, orbit, inputs_csv, out_dir);
    }
    if (eval->parsed()) {
      return plkrf::cli::cmd_eval(common, eval_ckpt, split, eval_inputs, eval_out, self_eval);
    }
    if (selfcheck->parsed()) return plkrf::cli::cmd_selfcheck();
  } catch (const plkrf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const plkrf::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const plkrf::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const plkrf::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const plkrf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
