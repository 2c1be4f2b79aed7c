#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mdat/metrics.hpp"
#include "mdat/pipeline.hpp"
#include "mdat/text_io.hpp"
#include "mdat/trials.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> lambda;
  std::string condition;
  std::string stages;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Config file (key = value lines)");
  cmd->add_option("--seed", f.seed, "Root seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--lambda", f.lambda, "Adversarial weight");
  cmd->add_option("--condition", f.condition, "DAT, MS-DAT, MT-DAT or MDAT, optional :codes or :kmeans");
}

mdat::ExperimentConfig resolve(const CommonFlags& f) {
  mdat::ExperimentConfig cfg;
  if (!f.config.empty()) cfg = mdat::load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (f.lambda) cfg.train.lambda = *f.lambda;
  if (!f.condition.empty() && f.condition != "all") mdat::apply_condition(cfg, f.condition);
  if (!f.stages.empty()) mdat::apply_config_entry(cfg, "stages", f.stages);
  return cfg;
}

void print_metrics(const char* name, const mdat::MetricSummary& m) {
  std::printf("%-10s EER %.2f%%  DCF10 %.3f  DCF08 %.3f\n", name, m.eer, m.dcf10, m.dcf08);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-domain adversarial training for speaker embeddings"};
  app.set_version_flag("--version", std::string(mdat::kVersion));
  app.require_subcommand(1);

  CommonFlags flags;
  std::vector<std::pair<mdat::Stage, CLI::App*>> stage_cmds;
  for (mdat::Stage s : mdat::all_stages()) {
    auto* cmd = app.add_subcommand(std::string(mdat::to_string(s)), "Run the " + std::string(mdat::to_string(s)) + " stage");
    add_common(cmd, flags);
    stage_cmds.emplace_back(s, cmd);
  }
  std::string score_file;
  for (auto& [s, cmd] : stage_cmds)
    if (s == mdat::Stage::Eval)
      cmd->add_option("--scores", score_file, "Evaluate a keyed score file instead of the run directory");

  auto* run = app.add_subcommand("run", "Run the pipeline (--condition all runs every condition)");
  add_common(run, flags);
  run->add_option("--stages", flags.stages, "Comma-separated stage list");
  bool print_config = false;
  run->add_flag("--print-config", print_config, "Print the resolved config and exit");

  std::vector<std::string> report_files;
  auto* compare = app.add_subcommand("compare", "Tabulate reports; the first report's baseline is the reference");
  compare->add_option("reports", report_files, "report.json files")->required()->expected(1, -1);

  CLI11_PARSE(app, argc, argv);

  std::string stage_name = "config";
  try {
    if (compare->parsed()) {
      stage_name = "compare";
      std::vector<mdat::Report> reports;
      for (const auto& p : report_files) reports.push_back(mdat::read_report(p));
      std::cout << mdat::format_comparison(mdat::compare_conditions(reports));
      return 0;
    }

    const auto cfg = resolve(flags);
    if (run->parsed()) {
      if (print_config) {
        std::cout << mdat::format_config(cfg);
        return 0;
      }
      stage_name = "run";
      if (flags.condition == "all") {
        const auto reports = mdat::run_condition_matrix(cfg);
        std::cout << mdat::format_comparison(mdat::compare_conditions(reports));
      } else {
        const auto r = mdat::run_experiment(cfg);
        std::cout << r.label() << "\n";
        print_metrics("no-adapt", r.baseline);
        print_metrics("adapted", r.adapted);
      }
      return 0;
    }

    for (auto& [s, cmd] : stage_cmds) {
      if (!cmd->parsed()) continue;
      stage_name = std::string(mdat::to_string(s));
      if (s == mdat::Stage::Eval && !score_file.empty()) {
        const auto m = mdat::evaluate(mdat::read_scores(score_file), cfg.dcf10, cfg.dcf08);
        print_metrics("scores", m);
        return 0;
      }
      mdat::run_stage(s, cfg);
      if (s == mdat::Stage::Eval) {
        const auto r = mdat::read_report(mdat::Artifacts{cfg.out_dir}.report());
        print_metrics("no-adapt", r.baseline);
        print_metrics("adapted", r.adapted);
      }
    }
  } catch (const mdat::StageError& e) {
    std::cerr << "mdat: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "mdat: stage '" << stage_name << "': " << e.what() << "\n";
    return 1;
  }
  return 0;
}
