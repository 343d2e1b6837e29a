// Command-line driver: train / eval / sweep / table / run / config.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "imgap/config.hpp"
#include "imgap/errors.hpp"
#include "imgap/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRun = 2;

struct Overrides {
  std::string config;
  std::string method;
  std::string out;
  std::int64_t budget = 0;
  std::vector<std::uint64_t> seeds;
};

imgap::ExperimentConfig resolve(const Overrides& o) {
  imgap::ExperimentConfig cfg = imgap::load_config(o.config);
  if (!o.method.empty()) cfg.method = imgap::parse_method(o.method);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.budget > 0) cfg.budget = o.budget;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  cfg.validate();
  return cfg;
}

void print_result(const imgap::MethodResult& r) { std::cout << imgap::to_json(r).dump() << '\n'; }

int run_table(const std::string& runs, const std::string& out) {
  const auto table = imgap::build_table(imgap::load_results(runs));
  imgap::Json j = imgap::Json::array();
  for (const auto& row : table) j.push_back(imgap::to_json(row));
  const std::string path = out.empty() ? (imgap::fs::path(runs) / "table.json").string() : out;
  std::ofstream f(path);
  if (!f) throw imgap::RunError("cannot write " + path);
  f << j.dump(2) << '\n';
  std::cout << imgap::format_table(table);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teacher-student imitation-gap experiments on the TunnelVision gridworld"};
  app.require_subcommand(1);

  Overrides train_o;
  std::uint64_t train_seed = 1;
  auto* train = app.add_subcommand("train", "Train one method for one seed");
  train->add_option("--config", train_o.config, "Experiment config (JSON)");
  train->add_option("--method", train_o.method, "ours | ours_no_align | ours_no_stab | bc | sitt");
  train->add_option("--seed", train_seed, "Run seed")->default_val(1);
  train->add_option("--budget", train_o.budget, "Override the environment-step budget");
  train->add_option("--out", train_o.out, "Override the output directory");

  std::string ckpt;
  int episodes = 100;
  std::optional<std::uint64_t> eval_seed;
  auto* eval = app.add_subcommand("eval", "Evaluate a saved checkpoint");
  eval->add_option("--checkpoint", ckpt, "checkpoint.json written by train")->required();
  eval->add_option("--episodes", episodes, "Evaluation episodes")->default_val(100);
  eval->add_option("--seed", eval_seed, "Evaluation seed (defaults to the run seed)");

  Overrides sweep_o;
  std::vector<double> alphas;
  auto* sweep = app.add_subcommand("sweep", "Run SITT over a list of alphas");
  sweep->add_option("--config", sweep_o.config, "Experiment config (JSON)");
  sweep->add_option("--alphas", alphas, "Comma-separated alphas (defaults to sitt.sweep)")->delimiter(',');
  sweep->add_option("--seeds", sweep_o.seeds, "Comma-separated seeds")->delimiter(',');
  sweep->add_option("--budget", sweep_o.budget, "Override the environment-step budget");
  sweep->add_option("--out", sweep_o.out, "Override the output directory");

  std::string runs_dir;
  std::string table_out;
  auto* table = app.add_subcommand("table", "Aggregate completed runs into the results table");
  table->add_option("--runs", runs_dir, "Directory containing run outputs")->required();
  table->add_option("--out", table_out, "Table JSON path (default <runs>/table.json)");

  Overrides all_o;
  auto* run = app.add_subcommand("run", "Run every method over every seed, the SITT sweep, then the table");
  run->add_option("--config", all_o.config, "Experiment config (JSON)");
  run->add_option("--seeds", all_o.seeds, "Comma-separated seeds")->delimiter(',');
  run->add_option("--budget", all_o.budget, "Override the environment-step budget");
  run->add_option("--out", all_o.out, "Override the output directory");

  Overrides show_o;
  auto* show = app.add_subcommand("config", "Print the resolved configuration (defaults, file, env overrides)");
  show->add_option("--config", show_o.config, "Experiment config (JSON)");
  show->add_option("--method", show_o.method, "ours | ours_no_align | ours_no_stab | bc | sitt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) {
      const auto cfg = resolve(train_o);
      print_result(imgap::run_and_save(cfg, train_seed));
      return kExitOk;
    }
    if (*eval) {
      std::cout << imgap::evaluate_checkpoint(ckpt, episodes, eval_seed).dump() << '\n';
      return kExitOk;
    }
    if (*sweep) {
      auto cfg = resolve(sweep_o);
      cfg.method = imgap::Method::Sitt;
      if (alphas.empty()) alphas = cfg.sitt.sweep;
      imgap::Json summary = imgap::Json::array();
      for (double a : alphas) {
        cfg.sitt.alpha = a;
        cfg.validate();
        std::vector<imgap::MethodResult> per_alpha;
        for (auto seed : cfg.seeds) {
          per_alpha.push_back(imgap::run_and_save(cfg, seed));
          print_result(per_alpha.back());
        }
        const auto row = imgap::aggregate(per_alpha);
        summary.push_back({{"method", "sitt"}, {"alpha", a}, {"seeds", cfg.seeds}, {"sr_teacher", row.sr_teacher},
                           {"sr_student", row.sr_student}, {"gap", row.gap}, {"config_hash", row.config_hash}});
      }
      imgap::fs::create_directories(cfg.output_dir);
      std::ofstream(imgap::fs::path(cfg.output_dir) / "sweep.json") << summary.dump(2) << '\n';
      std::cout << summary.dump() << '\n';
      return kExitOk;
    }
    if (*table) return run_table(runs_dir, table_out);
    if (*show) {
      std::cout << imgap::to_json(resolve(show_o)).dump(2) << '\n';
      return kExitOk;
    }
    if (*run) {
      auto cfg = resolve(all_o);
      for (imgap::Method m : {imgap::Method::Bc, imgap::Method::OursNoAlign, imgap::Method::OursNoStab,
                              imgap::Method::Ours}) {
        cfg.method = m;
        for (auto seed : cfg.seeds) print_result(imgap::run_and_save(cfg, seed));
      }
      cfg.method = imgap::Method::Sitt;
      for (double a : cfg.sitt.sweep) {
        cfg.sitt.alpha = a;
        for (auto seed : cfg.seeds) print_result(imgap::run_and_save(cfg, seed));
      }
      return run_table(cfg.output_dir, "");
    }
  } catch (const imgap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kExitRun;
  }
  return kExitOk;
}
