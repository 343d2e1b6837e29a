#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imgap/baselines.hpp"
#include "imgap/errors.hpp"
#include "imgap/grid_env.hpp"
#include "imgap/trainer.hpp"

extern char** environ;

namespace imgap {

using Json = nlohmann::json;

enum class Method { Ours, OursNoAlign, OursNoStab, Bc, Sitt };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Ours: return "ours";
    case Method::OursNoAlign: return "ours_no_align";
    case Method::OursNoStab: return "ours_no_stab";
    case Method::Bc: return "bc";
    case Method::Sitt: return "sitt";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::Ours, Method::OursNoAlign, Method::OursNoStab, Method::Bc, Method::Sitt})
    if (s == method_name(m)) return m;
  throw ConfigError("unknown method '" + s + "' (expected ours, ours_no_align, ours_no_stab, bc, sitt)");
}

/// Row order of the results table.
inline const std::vector<Method>& table_order() {
  static const std::vector<Method> order{Method::Bc, Method::Sitt, Method::OursNoAlign, Method::OursNoStab,
                                         Method::Ours};
  return order;
}

struct ExperimentConfig {
  EnvConfig env;
  Method method = Method::Ours;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::int64_t budget = 2000000;
  int eval_every = 25;
  int eval_episodes = 100;
  EvalMode eval_mode = EvalMode::Sample;
  std::string output_dir = "runs";

  // Shared across methods so architectures and interaction budgets match.
  std::vector<int> policy_hidden{64, 64};
  std::vector<int> value_hidden{64, 64};
  std::vector<int> student_hidden{64, 64};
  double policy_output_gain = 0.01;
  PpoConfig ppo{.lr = 1e-3};
  int num_envs = 8;
  int rollout_steps = 2048;
  double student_lr = 1e-3;
  int student_minibatch = 256;

  SharedEmbeddingConfig embedding;  // network/ppo/rollout fields are overwritten from the shared ones
  BcConfig bc;
  SittConfig sitt;

  RunConfig run() const { return {env, budget, eval_every, eval_episodes, eval_mode}; }

  SharedEmbeddingConfig shared_embedding() const {
    SharedEmbeddingConfig c = embedding;
    c.policy_hidden = policy_hidden;
    c.value_hidden = value_hidden;
    c.policy_output_gain = policy_output_gain;
    c.ppo = ppo;
    c.num_envs = num_envs;
    c.rollout_steps = rollout_steps;
    if (method == Method::OursNoAlign) c.weights.alignment = 0.0;
    if (method == Method::OursNoStab) c.weights.stability = 0.0;
    return c;
  }

  BaselineNets baseline_nets() const {
    BaselineNets n;
    n.policy_hidden = policy_hidden;
    n.value_hidden = value_hidden;
    n.student_hidden = student_hidden;
    n.ppo = ppo;
    n.policy_output_gain = policy_output_gain;
    n.student_lr = student_lr;
    n.student_minibatch = student_minibatch;
    n.num_envs = num_envs;
    n.rollout_steps = rollout_steps;
    return n;
  }

  void validate() const {
    env.validate();
    if (budget <= 0) throw ConfigError("budget must be positive");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (num_envs < 1 || rollout_steps < num_envs) throw ConfigError("rollout_steps must be >= num_envs >= 1");
    if (ppo.epochs < 1 || ppo.minibatch < 1) throw ConfigError("ppo epochs/minibatch must be positive");
    if (embedding.embedding_minibatch < 2) throw ConfigError("embedding minibatch must be >= 2");
    if (!(embedding.encoder.tau_init > 0.0)) throw ConfigError("tau_init must be positive");
    if (!(sitt.alpha >= 0.0)) throw ConfigError("sitt alpha must be >= 0");
    for (double a : sitt.sweep)
      if (!(a >= 0.0)) throw ConfigError("sitt sweep alphas must be >= 0");
    if (!(bc.teacher_fraction > 0.0 && bc.teacher_fraction < 1.0)) throw ConfigError("bc teacher_fraction must lie in (0,1)");
  }
};

inline Json cell_json(Cell c) { return Json::array({c.x, c.y}); }
inline Cell cell_from(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("cell must be [x, y]");
  return {j[0].get<int>(), j[1].get<int>()};
}

inline Json to_json(const ExperimentConfig& c) {
  const auto& e = c.embedding;
  return Json{
      {"env",
       {{"width", c.env.width},
        {"height", c.env.height},
        {"start", cell_json(c.env.start)},
        {"goal", cell_json(c.env.goal)},
        {"obstacle_density", c.env.obstacle_density},
        {"r_goal", c.env.r_goal},
        {"r_collision", c.env.r_collision},
        {"r_step", c.env.r_step},
        {"max_steps", c.env.max_steps},
        {"dead_end_free", c.env.dead_end_free}}},
      {"method", method_name(c.method)},
      {"seeds", c.seeds},
      {"budget", c.budget},
      {"eval_every", c.eval_every},
      {"eval_episodes", c.eval_episodes},
      {"eval_mode", c.eval_mode == EvalMode::Greedy ? "greedy" : "sample"},
      {"output_dir", c.output_dir},
      {"network",
       {{"policy_hidden", c.policy_hidden},
        {"value_hidden", c.value_hidden},
        {"student_hidden", c.student_hidden},
        {"policy_output_gain", c.policy_output_gain}}},
      {"ppo",
       {{"gamma", c.ppo.gamma},
        {"lambda", c.ppo.lambda},
        {"clip", c.ppo.clip},
        {"value_coef", c.ppo.value_coef},
        {"entropy_coef", c.ppo.entropy_coef},
        {"epochs", c.ppo.epochs},
        {"minibatch", c.ppo.minibatch},
        {"lr", c.ppo.lr},
        {"max_grad_norm", c.ppo.max_grad_norm},
        {"normalize_advantages", c.ppo.normalize_advantages},
        {"anneal_lr", c.ppo.anneal_lr},
        {"bootstrap_timeouts", c.ppo.bootstrap_timeouts}}},
      {"rollout", {{"num_envs", c.num_envs}, {"steps", c.rollout_steps}}},
      {"student", {{"lr", c.student_lr}, {"minibatch", c.student_minibatch}}},
      {"embedding",
       {{"hidden", e.encoder.hidden},
        {"dim", e.encoder.embedding_dim},
        {"tau_init", e.encoder.tau_init},
        {"lr", e.embedding_lr},
        {"anneal_lr", e.embedding_anneal_lr},
        {"epochs", e.embedding_epochs},
        {"minibatch", e.embedding_minibatch},
        {"max_grad_norm", e.embedding_max_grad_norm},
        {"replay", e.embedding_replay},
        {"asymmetric_critic", e.asymmetric_critic},
        {"weights",
         {{"contrastive", e.weights.contrastive},
          {"alignment", e.weights.alignment},
          {"stability", e.weights.stability}}}}},
      {"bc",
       {{"teacher_fraction", c.bc.teacher_fraction},
        {"student_epochs", c.bc.student_epochs},
        {"teacher_warn_threshold", c.bc.teacher_warn_threshold}}},
      {"sitt", {{"alpha", c.sitt.alpha}, {"sweep", c.sitt.sweep}, {"student_epochs", c.sitt.student_epochs}}},
  };
}

namespace detail {

/// Rejects keys in `user` that the schema (`defaults`) does not know.
inline void check_keys(const Json& user, const Json& defaults, const std::string& path) {
  if (!user.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    if (defaults[it.key()].is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + key + "' must be an object");
      check_keys(it.value(), defaults[it.key()], key);
    }
  }
}

template <typename T>
T get(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config key '") + key + "': " + ex.what());
  }
}

}  // namespace detail

/// Parses a config, filling unspecified keys from defaults. Unknown keys are errors.
inline ExperimentConfig from_json(const Json& user) {
  const Json defaults = to_json(ExperimentConfig{});
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  detail::check_keys(user, defaults, "");
  Json j = defaults;
  j.merge_patch(user);
  using detail::get;
  ExperimentConfig c;
  const Json& env = j["env"];
  c.env.width = get<int>(env, "width");
  c.env.height = get<int>(env, "height");
  c.env.start = cell_from(env["start"]);
  c.env.goal = cell_from(env["goal"]);
  c.env.obstacle_density = get<double>(env, "obstacle_density");
  c.env.r_goal = get<double>(env, "r_goal");
  c.env.r_collision = get<double>(env, "r_collision");
  c.env.r_step = get<double>(env, "r_step");
  c.env.max_steps = get<int>(env, "max_steps");
  c.env.dead_end_free = get<bool>(env, "dead_end_free");
  c.method = parse_method(get<std::string>(j, "method"));
  c.seeds = get<std::vector<std::uint64_t>>(j, "seeds");
  c.budget = get<std::int64_t>(j, "budget");
  c.eval_every = get<int>(j, "eval_every");
  c.eval_episodes = get<int>(j, "eval_episodes");
  const auto mode = get<std::string>(j, "eval_mode");
  if (mode != "greedy" && mode != "sample") throw ConfigError("eval_mode must be 'greedy' or 'sample'");
  c.eval_mode = mode == "greedy" ? EvalMode::Greedy : EvalMode::Sample;
  c.output_dir = get<std::string>(j, "output_dir");
  const Json& net = j["network"];
  c.policy_hidden = get<std::vector<int>>(net, "policy_hidden");
  c.value_hidden = get<std::vector<int>>(net, "value_hidden");
  c.student_hidden = get<std::vector<int>>(net, "student_hidden");
  c.policy_output_gain = get<double>(net, "policy_output_gain");
  const Json& ppo = j["ppo"];
  c.ppo.gamma = get<double>(ppo, "gamma");
  c.ppo.lambda = get<double>(ppo, "lambda");
  c.ppo.clip = get<double>(ppo, "clip");
  c.ppo.value_coef = get<double>(ppo, "value_coef");
  c.ppo.entropy_coef = get<double>(ppo, "entropy_coef");
  c.ppo.epochs = get<int>(ppo, "epochs");
  c.ppo.minibatch = get<int>(ppo, "minibatch");
  c.ppo.lr = get<double>(ppo, "lr");
  c.ppo.max_grad_norm = get<double>(ppo, "max_grad_norm");
  c.ppo.normalize_advantages = get<bool>(ppo, "normalize_advantages");
  c.ppo.anneal_lr = get<bool>(ppo, "anneal_lr");
  c.ppo.bootstrap_timeouts = get<bool>(ppo, "bootstrap_timeouts");
  c.num_envs = get<int>(j["rollout"], "num_envs");
  c.rollout_steps = get<int>(j["rollout"], "steps");
  c.student_lr = get<double>(j["student"], "lr");
  c.student_minibatch = get<int>(j["student"], "minibatch");
  const Json& emb = j["embedding"];
  c.embedding.encoder.hidden = get<std::vector<int>>(emb, "hidden");
  c.embedding.encoder.embedding_dim = get<int>(emb, "dim");
  c.embedding.encoder.tau_init = get<double>(emb, "tau_init");
  c.embedding.embedding_lr = get<double>(emb, "lr");
  c.embedding.embedding_anneal_lr = get<bool>(emb, "anneal_lr");
  c.embedding.embedding_epochs = get<int>(emb, "epochs");
  c.embedding.embedding_minibatch = get<int>(emb, "minibatch");
  c.embedding.embedding_max_grad_norm = get<double>(emb, "max_grad_norm");
  c.embedding.embedding_replay = get<int>(emb, "replay");
  c.embedding.asymmetric_critic = get<bool>(emb, "asymmetric_critic");
  c.embedding.weights.contrastive = get<double>(emb["weights"], "contrastive");
  c.embedding.weights.alignment = get<double>(emb["weights"], "alignment");
  c.embedding.weights.stability = get<double>(emb["weights"], "stability");
  c.bc.teacher_fraction = get<double>(j["bc"], "teacher_fraction");
  c.bc.student_epochs = get<int>(j["bc"], "student_epochs");
  c.bc.teacher_warn_threshold = get<double>(j["bc"], "teacher_warn_threshold");
  c.sitt.alpha = get<double>(j["sitt"], "alpha");
  c.sitt.sweep = get<std::vector<double>>(j["sitt"], "sweep");
  c.sitt.student_epochs = get<int>(j["sitt"], "student_epochs");
  c.validate();
  return c;
}

/// Applies overrides of the form IMGAP_<section>__<key>=<value> (case-insensitive
/// keys, "__" separating nesting levels). Values are parsed as JSON when
/// possible and used as strings otherwise.
inline Json apply_env_overrides(Json j, char** envp = environ, const std::string& prefix = "IMGAP_") {
  for (char** e = envp; e != nullptr && *e != nullptr; ++e) {
    const std::string entry(*e);
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string path = entry.substr(prefix.size(), eq - prefix.size());
    for (auto& ch : path) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    const std::string raw = entry.substr(eq + 1);
    Json value = Json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    Json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto sep = path.find("__", start);
      const std::string key = path.substr(start, sep == std::string::npos ? std::string::npos : sep - start);
      if (key.empty()) throw ConfigError("malformed override variable '" + entry.substr(0, eq) + "'");
      if (sep == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      if (!node->contains(key)) (*node)[key] = Json::object();
      node = &(*node)[key];
      start = sep + 2;
    }
  }
  return j;
}

inline ExperimentConfig load_config(const std::string& path, bool env_overrides = true) {
  Json j = Json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file '" + path + "' is not valid JSON");
  }
  if (env_overrides) j = apply_env_overrides(std::move(j));
  return from_json(j);
}

/// FNV-1a of the canonical JSON of everything that influences a run's
/// results (seeds and output location excluded).
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("seeds");
  j.erase("output_dir");
  if (c.method != Method::Sitt) j.erase("sitt");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace imgap
