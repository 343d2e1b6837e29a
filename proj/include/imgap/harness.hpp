#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imgap/baselines.hpp"
#include "imgap/checkpoint.hpp"
#include "imgap/config.hpp"
#include "imgap/curves.hpp"
#include "imgap/evaluation.hpp"
#include "imgap/trainer.hpp"

namespace imgap {

namespace fs = std::filesystem;

struct MethodResult {
  std::string method;
  std::uint64_t seed = 0;
  double sr_teacher = 0.0;
  double sr_student = 0.0;
  double gap = 0.0;
  std::string config_hash;
  std::optional<double> alpha;
  std::int64_t env_steps = 0;
};

inline Json to_json(const MethodResult& r) {
  Json j{{"method", r.method},     {"seed", r.seed},       {"sr_teacher", r.sr_teacher}, {"sr_student", r.sr_student},
         {"gap", r.gap},           {"config_hash", r.config_hash}, {"env_steps", r.env_steps}};
  if (r.alpha) j["alpha"] = *r.alpha;
  return j;
}

inline MethodResult method_result_from_json(const Json& j) {
  MethodResult r;
  r.method = j.at("method").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.sr_teacher = j.at("sr_teacher").get<double>();
  r.sr_student = j.at("sr_student").get<double>();
  r.gap = j.at("gap").get<double>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.env_steps = j.value("env_steps", std::int64_t{0});
  if (j.contains("alpha")) r.alpha = j["alpha"].get<double>();
  return r;
}

inline std::string format_alpha(double a) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", a);
  return buf;
}

/// <output_dir>/<method>[-a<alpha>]-<hash>/seed-<n>
inline fs::path run_directory(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::string group = method_name(cfg.method);
  if (cfg.method == Method::Sitt) group += "-a" + format_alpha(cfg.sitt.alpha);
  group += "-" + config_hash(cfg);
  return fs::path(cfg.output_dir) / group / ("seed-" + std::to_string(seed));
}

struct RunOutput {
  MethodResult result;
  CurveSeries curves;
  Checkpoint checkpoint;
};

/// Trains one (method, seed) pair. Curve rows are passed to `on_row` as soon as
/// they are produced.
inline RunOutput run_method(const ExperimentConfig& cfg, std::uint64_t seed, const RowCallback& on_row = {}) {
  cfg.validate();
  RunOutput out;
  out.result.method = method_name(cfg.method);
  out.result.seed = seed;
  out.result.config_hash = config_hash(cfg);
  Json meta_cfg = to_json(cfg);
  out.checkpoint.meta = {{"method", out.result.method}, {"seed", seed}, {"config", meta_cfg}};

  EvalResult ev;
  switch (cfg.method) {
    case Method::Ours:
    case Method::OursNoAlign:
    case Method::OursNoStab: {
      SharedEmbeddingRun r = train_shared_embedding(cfg.shared_embedding(), cfg.run(), seed, on_row);
      ev = r.final_eval;
      out.curves = std::move(r.curves);
      out.result.env_steps = r.state.env_steps;
      out.checkpoint.nets.emplace("teacher_encoder", r.state.encoders.teacher);
      out.checkpoint.nets.emplace("student_encoder", r.state.encoders.student);
      out.checkpoint.nets.emplace("policy", r.state.policy);
      out.checkpoint.nets.emplace("value", r.state.value);
      out.checkpoint.scalars["log_tau"] = r.state.encoders.log_tau;
      break;
    }
    case Method::Bc:
    case Method::Sitt: {
      BaselineRun r = cfg.method == Method::Bc ? train_bc(cfg.baseline_nets(), cfg.bc, cfg.run(), seed, on_row)
                                               : train_sitt(cfg.baseline_nets(), cfg.sitt, cfg.run(), seed, on_row);
      if (cfg.method == Method::Sitt) out.result.alpha = cfg.sitt.alpha;
      ev = r.final_eval;
      out.curves = std::move(r.curves);
      out.result.env_steps = r.env_steps;
      out.checkpoint.nets.emplace("teacher_policy", r.teacher_policy);
      out.checkpoint.nets.emplace("teacher_value", r.teacher_value);
      out.checkpoint.nets.emplace("student", r.student);
      break;
    }
  }
  out.result.sr_teacher = ev.sr_teacher;
  out.result.sr_student = ev.sr_student;
  out.result.gap = imitation_gap(ev.sr_teacher, ev.sr_student);
  return out;
}

/// Trains and writes curve.csv (appended row by row), result.json and
/// checkpoint.json into the run directory.
inline MethodResult run_and_save(const ExperimentConfig& cfg, std::uint64_t seed) {
  const fs::path dir = run_directory(cfg, seed);
  fs::create_directories(dir);
  {
    std::ofstream cfg_out(dir / "config.json");
    cfg_out << to_json(cfg).dump(2) << '\n';
  }
  std::ofstream curve(dir / "curve.csv", std::ios::trunc);
  if (!curve) throw RunError("cannot write " + (dir / "curve.csv").string());
  curve << kCurveHeader << '\n' << std::flush;
  RunOutput out = run_method(cfg, seed, [&curve](const CurveRow& row) { curve << to_csv_line(row) << '\n' << std::flush; });
  out.checkpoint.meta["result"] = to_json(out.result);
  out.checkpoint.save((dir / "checkpoint.json").string());
  std::ofstream res(dir / "result.json");
  res << to_json(out.result).dump(2) << '\n';
  return out.result;
}

/// Teacher and student actors reconstructed from a checkpoint.
struct CheckpointActors {
  std::shared_ptr<Checkpoint> ckpt;
  BatchActor teacher;
  BatchActor student;
};

inline CheckpointActors actors_from_checkpoint(Checkpoint c, EvalMode mode = EvalMode::Greedy, std::uint64_t seed = 0) {
  auto ck = std::make_shared<Checkpoint>(std::move(c));
  CheckpointActors a{ck, {}, {}};
  if (ck->nets.count("teacher_encoder")) {
    const Mlp* te = &ck->net("teacher_encoder");
    const Mlp* se = &ck->net("student_encoder");
    const Mlp* pol = &ck->net("policy");
    a.teacher = policy_actor(View::Teacher, [ck, te, pol](const Matrix& o) { return mlp_forward(*pol, encode_batch(*te, o).z); }, mode, seed);
    a.student = policy_actor(View::Student, [ck, se, pol](const Matrix& o) { return mlp_forward(*pol, encode_batch(*se, o).z); }, mode, seed);
  } else {
    const Mlp* tp = &ck->net("teacher_policy");
    const Mlp* sp = &ck->net("student");
    a.teacher = policy_actor(View::Teacher, [ck, tp](const Matrix& o) { return mlp_forward(*tp, o); }, mode, seed);
    a.student = policy_actor(View::Student, [ck, sp](const Matrix& o) { return mlp_forward(*sp, o); }, mode, seed);
  }
  return a;
}

inline Json evaluate_checkpoint(const std::string& path, int episodes, std::optional<std::uint64_t> seed) {
  Checkpoint c = Checkpoint::load(path);
  const ExperimentConfig cfg = from_json(c.meta.at("config"));
  const std::uint64_t s = seed.value_or(c.meta.at("seed").get<std::uint64_t>());
  const std::uint64_t es = eval_seed(s);
  const CheckpointActors actors = actors_from_checkpoint(std::move(c), cfg.eval_mode, es);
  const double t = evaluate(actors.teacher, cfg.env, episodes, es);
  const double st = evaluate(actors.student, cfg.env, episodes, es);
  return {{"method", method_name(cfg.method)}, {"episodes", episodes}, {"seed", s},
          {"sr_teacher", t}, {"sr_student", st}, {"gap", imitation_gap(t, st)}};
}

struct TableRow {
  std::string method;
  double sr_teacher = 0.0;
  double sr_student = 0.0;
  double gap = 0.0;
  std::string config_hash;
  std::optional<double> alpha;
  std::vector<MethodResult> runs;
};

inline Json to_json(const TableRow& r) {
  Json per_seed = Json::array();
  for (const auto& m : r.runs) per_seed.push_back(to_json(m));
  Json j{{"method", r.method}, {"sr_teacher", r.sr_teacher}, {"sr_student", r.sr_student},
         {"gap", r.gap},       {"config_hash", r.config_hash}, {"runs", per_seed}};
  if (r.alpha) j["alpha"] = *r.alpha;
  return j;
}

inline TableRow aggregate(const std::vector<MethodResult>& runs) {
  TableRow row;
  row.method = runs.front().method;
  row.config_hash = runs.front().config_hash;
  row.alpha = runs.front().alpha;
  row.runs = runs;
  for (const auto& r : runs) {
    row.sr_teacher += r.sr_teacher;
    row.sr_student += r.sr_student;
  }
  row.sr_teacher /= static_cast<double>(runs.size());
  row.sr_student /= static_cast<double>(runs.size());
  row.gap = row.sr_teacher - row.sr_student;
  return row;
}

/// Groups results by (method, config hash) and keeps one group per method:
/// for SITT the group with the best mean student success, otherwise the group
/// with the most seeds. Rows follow the fixed table order.
inline std::vector<TableRow> build_table(const std::vector<MethodResult>& results) {
  std::map<std::pair<std::string, std::string>, std::vector<MethodResult>> groups;
  for (const auto& r : results) groups[{r.method, r.config_hash}].push_back(r);
  std::vector<TableRow> table;
  for (Method m : table_order()) {
    std::optional<TableRow> best;
    for (auto& [key, runs] : groups) {
      if (key.first != method_name(m)) continue;
      std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) { return a.seed < b.seed; });
      TableRow row = aggregate(runs);
      const bool better = !best || (m == Method::Sitt ? row.sr_student > best->sr_student
                                                      : row.runs.size() > best->runs.size());
      if (better) best = std::move(row);
    }
    if (best) table.push_back(std::move(*best));
  }
  return table;
}

inline std::vector<MethodResult> load_results(const fs::path& root) {
  std::vector<MethodResult> out;
  if (!fs::exists(root)) throw ConfigError("runs directory '" + root.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "result.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    const auto j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed result file " + f.string());
    out.push_back(method_result_from_json(j));
  }
  return out;
}

inline std::string display_name(const std::string& method) {
  if (method == "bc") return "BC";
  if (method == "sitt") return "SITT";
  if (method == "ours_no_align") return "Ours w/o alignment";
  if (method == "ours_no_stab") return "Ours w/o stability";
  if (method == "ours") return "Ours";
  return method;
}

inline std::string format_table(const std::vector<TableRow>& table) {
  std::string s = "Method                 T      S      Delta  seeds\n";
  for (const auto& r : table) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-20s  %.2f   %.2f   %.2f   %zu\n", display_name(r.method).c_str(), r.sr_teacher,
                  r.sr_student, r.gap, r.runs.size());
    s += buf;
  }
  return s;
}

}  // namespace imgap
