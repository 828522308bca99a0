// cmscore: synthetic audio/sheet-music correspondence learning from the
// command line.

#include "cmscore/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::string augment;
  bool resume = false;
  bool matrix_dump = false;
  bool random_baseline = false;
  bool oracle = false;
  std::optional<int> piece;
  std::vector<std::string> sets;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Args& args) {
  auto* cmd = app.add_subcommand(name, help);
  cmd->add_option("--config", args.config, "flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "root seed");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_flag("--force", args.force, "replace a non-empty output directory");
  cmd->add_option("--set", args.sets, "key=value override, repeatable");
  return cmd;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cmscore: cross-modal sheet/audio embeddings on synthetic correspondences"};
  app.require_subcommand(1);
  Args args;

  auto* gen = add_command(app, "gen-data", "render a synthetic dataset", args);
  gen->add_option("--augment", args.augment, "none: one font at 120 bpm; full: three fonts over the tempo grid")
      ->check(CLI::IsMember({"none", "full"}));
  auto* train = add_command(app, "train", "train both pathways", args);
  train->add_option("--augment", args.augment, "toggle every augmentation")->check(CLI::IsMember({"none", "full"}));
  train->add_flag("--resume", args.resume, "continue from last.bin in --out (or the configured checkpoint)");
  auto* eval = add_command(app, "eval-retrieval", "audio-to-sheet retrieval on the test split", args);
  eval->add_flag("--random-baseline", args.random_baseline, "score random unit embeddings instead of a model");
  eval->add_flag("--oracle", args.oracle, "query with the index embeddings themselves");
  auto* identify = add_command(app, "identify", "piece identification by top-k voting", args);
  identify->add_option("--piece,--recording", args.piece, "only the recording of this test piece");
  auto* align = add_command(app, "align", "DTW and linear-baseline alignment of test recordings", args);
  align->add_option("--piece", args.piece, "only this test piece");
  align->add_flag("--matrix-dump", args.matrix_dump, "write each cost matrix as text");
  auto* ablate = add_command(app, "ablate", "augmentation ablation grid", args);
  ablate->add_option("--augment", args.augment, "base augmentation preset")->check(CLI::IsMember({"none", "full"}));

  CLI11_PARSE(app, argc, argv);

  try {
    cmscore::RunConfig cfg;
    if (!args.config.empty()) cfg = cmscore::load_config(args.config);
    if (!args.augment.empty()) cmscore::apply_augment_preset(cfg, args.augment);
    for (const auto& s : args.sets) cmscore::apply_override(cfg, s);
    if (args.seed) cfg.seed = *args.seed;
    if (!args.out.empty()) cfg.out = args.out;

    cmscore::CommandOptions opts;
    opts.force = args.force;
    opts.resume = args.resume;
    opts.matrix_dump = args.matrix_dump;
    opts.random_baseline = args.random_baseline;
    opts.oracle = args.oracle;
    opts.piece = args.piece;

    const auto* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    if (name == "gen-data") {
      cmscore::run_gen_data(cfg, opts, std::cout);
    } else if (name == "train") {
      cmscore::run_train(cfg, opts, std::cout);
    } else if (name == "eval-retrieval") {
      cmscore::run_eval_retrieval(cfg, opts, std::cout);
    } else if (name == "identify") {
      cmscore::run_identify(cfg, opts, std::cout);
    } else if (name == "align") {
      cmscore::run_align(cfg, opts, std::cout);
    } else {
      cmscore::run_ablate(cfg, opts, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "cmscore: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
