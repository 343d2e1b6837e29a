#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imgap/errors.hpp"
#include "imgap/nn.hpp"

namespace imgap {

inline constexpr const char* kCheckpointFormat = "imgap-checkpoint-v1";

/// Named parameter arrays plus free-form metadata. Each array records its
/// layer sizes (the shape header) and its flat values. Doubles are written
/// in shortest round-trip form, so save/load is bit-exact.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Mlp> nets;
  std::map<std::string, double> scalars;

  nlohmann::json to_json() const {
    nlohmann::json arrays = nlohmann::json::object();
    for (const auto& [name, net] : nets) {
      const Vector& p = net.params();
      arrays[name] = {{"layer_sizes", net.sizes()},
                      {"activation", net.activation() == Activation::Tanh ? "tanh" : "relu"},
                      {"shape", {p.size()}},
                      {"data", std::vector<double>(p.data(), p.data() + p.size())}};
    }
    for (const auto& [name, v] : scalars) arrays[name] = {{"shape", nlohmann::json::array()}, {"data", {v}}};
    return {{"format", kCheckpointFormat}, {"meta", meta}, {"arrays", arrays}};
  }

  static Checkpoint from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != kCheckpointFormat) {
      throw ConfigError("checkpoint: unrecognized format");
    }
    Checkpoint c;
    c.meta = j.value("meta", nlohmann::json::object());
    for (const auto& [name, a] : j.at("arrays").items()) {
      const auto data = a.at("data").get<std::vector<double>>();
      if (!a.contains("layer_sizes")) {
        if (data.size() != 1) throw ConfigError("checkpoint: scalar '" + name + "' must hold one value");
        c.scalars[name] = data[0];
        continue;
      }
      const auto act = a.value("activation", "tanh") == "relu" ? Activation::Relu : Activation::Tanh;
      Mlp net(a.at("layer_sizes").get<std::vector<int>>(), act);
      if (static_cast<std::size_t>(net.num_params()) != data.size() ||
          a.at("shape").at(0).get<std::size_t>() != data.size()) {
        throw ConfigError("checkpoint: array '" + name + "' does not match its shape header");
      }
      net.params() = Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
      c.nets.emplace(name, std::move(net));
    }
    return c;
  }

  const Mlp& net(const std::string& name) const {
    const auto it = nets.find(name);
    if (it == nets.end()) throw ConfigError("checkpoint: missing array '" + name + "'");
    return it->second;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw RunError("checkpoint: cannot write '" + path + "'");
    out << to_json().dump() << '\n';
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("checkpoint: cannot read '" + path + "'");
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("checkpoint: '" + path + "' is not valid JSON");
    return from_json(j);
  }
};

}  // namespace imgap
