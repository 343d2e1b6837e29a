#pragma once

#include <array>
#include <cstdlib>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "imgap/errors.hpp"
#include "imgap/random.hpp"

namespace imgap {

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Compass orientation. North is toward y = 0.
enum class Orientation : std::uint8_t { N = 0, E = 1, S = 2, W = 3 };

enum class Terminal : std::uint8_t { Running, Success, Collision, Timeout };

/// Discrete action set: four moves that keep orientation, four turns that keep position.
enum class Action : std::uint8_t {
  MoveN = 0,
  MoveE,
  MoveS,
  MoveW,
  FaceN,
  FaceE,
  FaceS,
  FaceW,
};

inline constexpr int kNumActions = 8;
inline constexpr int kTeacherObsDim = 16;
inline constexpr int kStudentObsDim = 11;

using TeacherObs = std::array<double, kTeacherObsDim>;
using StudentObs = std::array<double, kStudentObsDim>;

struct ObsPair {
  TeacherObs teacher{};
  StudentObs student{};
};

struct EnvConfig {
  int width = 11;
  int height = 11;
  Cell start{1, 1};
  Cell goal{9, 9};
  double obstacle_density = 0.25;
  double r_goal = 1.0;
  double r_collision = -1.0;
  double r_step = 0.01;
  int max_steps = 200;
  /// Also reject maps with a dead end on the monotone start-to-goal region
  /// (see `dead_end_free`), so reactive agents never need to backtrack.
  bool dead_end_free = true;

  void validate() const {
    if (width < 5 || height < 5) throw ConfigError("env: grid must be at least 5x5");
    if (!(obstacle_density >= 0.0 && obstacle_density <= 0.45)) {
      throw ConfigError("env: obstacle_density must lie in [0, 0.45]");
    }
    auto inside = [&](Cell c) { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; };
    if (!inside(start) || !inside(goal)) throw ConfigError("env: start/goal outside grid");
    if (start == goal) throw ConfigError("env: start and goal coincide");
    if (max_steps < 1) throw ConfigError("env: max_steps must be positive");
  }
};

/// Unit step for each compass direction, indexed by Orientation.
inline constexpr std::array<Cell, 4> kHeading = {Cell{0, -1}, Cell{1, 0}, Cell{0, 1}, Cell{-1, 0}};

/// Teacher neighbor reading order: N, NE, E, SE, S, SW, W, NW.
inline constexpr std::array<Cell, 8> kNeighborOffsets = {
    Cell{0, -1}, Cell{1, -1}, Cell{1, 0},  Cell{1, 1},
    Cell{0, 1},  Cell{-1, 1}, Cell{-1, 0}, Cell{-1, -1}};

/// Indices into kNeighborOffsets seen by the student when facing `o`:
/// front-left diagonal, front, front-right diagonal.
constexpr std::array<int, 3> facing_cone(Orientation o) {
  const int f = 2 * static_cast<int>(o);
  return {(f + 7) % 8, f, (f + 1) % 8};
}

class MapLayout {
 public:
  MapLayout() = default;
  MapLayout(int width, int height, Cell start, Cell goal)
      : width_(width), height_(height), start_(start), goal_(goal),
        occupied_(static_cast<std::size_t>(width) * height, 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  Cell start() const { return start_; }
  Cell goal() const { return goal_; }

  bool inside(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }

  /// Off-grid cells count as occupied.
  bool occupied(Cell c) const {
    return !inside(c) || occupied_[static_cast<std::size_t>(c.y) * width_ + c.x] != 0;
  }

  void set_obstacle(Cell c, bool value = true) {
    occupied_.at(static_cast<std::size_t>(c.y) * width_ + c.x) = value ? 1 : 0;
  }

  std::vector<Cell> obstacles() const {
    std::vector<Cell> out;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        if (occupied({x, y})) out.push_back({x, y});
    return out;
  }

  const std::vector<std::uint8_t>& cells() const { return occupied_; }

  friend bool operator==(const MapLayout&, const MapLayout&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  Cell start_{};
  Cell goal_{};
  std::vector<std::uint8_t> occupied_;
};

/// 4-connected breadth-first shortest path from start to goal over free cells.
/// Returns the cell sequence including both endpoints, or nullopt if unreachable.
inline std::optional<std::vector<Cell>> shortest_path(const MapLayout& m, Cell from, Cell to) {
  if (m.occupied(from) || m.occupied(to)) return std::nullopt;
  const int w = m.width();
  std::vector<int> parent(static_cast<std::size_t>(w) * m.height(), -1);
  auto index = [w](Cell c) { return c.y * w + c.x; };
  std::deque<Cell> frontier{from};
  parent[index(from)] = index(from);
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop_front();
    if (c == to) break;
    for (const Cell d : kHeading) {
      const Cell n{c.x + d.x, c.y + d.y};
      if (m.occupied(n) || parent[index(n)] >= 0) continue;
      parent[index(n)] = index(c);
      frontier.push_back(n);
    }
  }
  if (parent[index(to)] < 0) return std::nullopt;
  std::vector<Cell> path{to};
  for (int i = index(to); i != index(from);) {
    i = parent[i];
    path.push_back({i % w, i / w});
  }
  return std::vector<Cell>(path.rbegin(), path.rend());
}

inline constexpr int kMaxMapRejections = 10000;

/// Samples i.i.d. obstacles until start and goal are connected. Attempt k uses
/// the sub-seed derive_seed(seed, k), so a layout depends only on (seed, cfg).
/// True when every cell reachable from `from` by steps toward `to` (inside
/// their bounding box) other than `to` itself has a free successor toward `to`.
/// Implies a monotone path exists.
inline bool dead_end_free(const MapLayout& m, Cell from, Cell to) {
  const int sx = to.x >= from.x ? 1 : -1;
  const int sy = to.y >= from.y ? 1 : -1;
  const int w = std::abs(to.x - from.x) + 1;
  const int h = std::abs(to.y - from.y) + 1;
  std::vector<char> reach(static_cast<std::size_t>(w * h), 0);
  reach[0] = !m.occupied(from);
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      if (!reach[static_cast<std::size_t>(j * w + i)] || (i == w - 1 && j == h - 1)) continue;
      bool exit = false;
      if (i + 1 < w && !m.occupied({from.x + sx * (i + 1), from.y + sy * j})) {
        reach[static_cast<std::size_t>(j * w + i + 1)] = 1;
        exit = true;
      }
      if (j + 1 < h && !m.occupied({from.x + sx * i, from.y + sy * (j + 1)})) {
        reach[static_cast<std::size_t>((j + 1) * w + i)] = 1;
        exit = true;
      }
      if (!exit) return false;
    }
  }
  return reach.back() != 0;
}

inline MapLayout generate_map(std::uint64_t seed, const EnvConfig& cfg) {
  cfg.validate();
  for (int attempt = 0; attempt < kMaxMapRejections; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    MapLayout m(cfg.width, cfg.height, cfg.start, cfg.goal);
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const bool blocked = rng.uniform() < cfg.obstacle_density;
        if (blocked && !(Cell{x, y} == cfg.start) && !(Cell{x, y} == cfg.goal)) {
          m.set_obstacle({x, y});
        }
      }
    }
    if (cfg.dead_end_free && !dead_end_free(m, cfg.start, cfg.goal)) continue;
    if (shortest_path(m, cfg.start, cfg.goal)) return m;
  }
  throw ConfigError("env: no solvable map after " + std::to_string(kMaxMapRejections) +
                    " samples; obstacle_density too high");
}

struct GridState {
  std::shared_ptr<const MapLayout> layout;
  Cell pos{};
  Orientation orientation = Orientation::E;
  int steps = 0;
  Terminal terminal = Terminal::Running;
};

inline TeacherObs obs_teacher(const GridState& s) {
  const MapLayout& m = *s.layout;
  TeacherObs o{};
  o[0] = static_cast<double>(s.pos.x) / m.width();
  o[1] = static_cast<double>(s.pos.y) / m.height();
  o[2 + static_cast<int>(s.orientation)] = 1.0;
  for (int k = 0; k < 8; ++k) {
    const Cell n{s.pos.x + kNeighborOffsets[k].x, s.pos.y + kNeighborOffsets[k].y};
    o[6 + k] = m.occupied(n) ? 1.0 : 0.0;
  }
  o[14] = static_cast<double>(m.goal().x - s.pos.x) / (m.width() - 1);
  o[15] = static_cast<double>(m.goal().y - s.pos.y) / (m.height() - 1);
  return o;
}

inline StudentObs obs_student(const GridState& s) {
  const MapLayout& m = *s.layout;
  StudentObs o{};
  o[0] = static_cast<double>(s.pos.x) / m.width();
  o[1] = static_cast<double>(s.pos.y) / m.height();
  o[2 + static_cast<int>(s.orientation)] = 1.0;
  const auto cone = facing_cone(s.orientation);
  for (int k = 0; k < 3; ++k) {
    const Cell d = kNeighborOffsets[cone[k]];
    o[6 + k] = m.occupied({s.pos.x + d.x, s.pos.y + d.y}) ? 1.0 : 0.0;
  }
  o[9] = static_cast<double>(m.goal().x - s.pos.x) / (m.width() - 1);
  o[10] = static_cast<double>(m.goal().y - s.pos.y) / (m.height() - 1);
  return o;
}

inline ObsPair observe(const GridState& s) { return {obs_teacher(s), obs_student(s)}; }

struct StepResult {
  GridState state;
  ObsPair obs;
  double reward = 0.0;
  bool done = false;
};

inline std::pair<GridState, ObsPair> reset(std::uint64_t seed, const EnvConfig& cfg) {
  GridState s;
  s.layout = std::make_shared<const MapLayout>(generate_map(seed, cfg));
  s.pos = cfg.start;
  s.orientation = Orientation::E;
  return {s, observe(s)};
}

inline StepResult step(const GridState& state, Action a, const EnvConfig& cfg) {
  if (state.terminal != Terminal::Running) {
    throw std::logic_error("step: episode already terminated");
  }
  GridState s = state;
  const int code = static_cast<int>(a);
  double reward = -cfg.r_step;
  if (code >= 4) {
    s.orientation = static_cast<Orientation>(code - 4);
  } else {
    const Cell d = kHeading[code];
    const Cell target{s.pos.x + d.x, s.pos.y + d.y};
    if (s.layout->occupied(target)) {
      reward = cfg.r_collision;
      s.terminal = Terminal::Collision;
    } else {
      s.pos = target;
      if (target == s.layout->goal()) {
        reward = cfg.r_goal;
        s.terminal = Terminal::Success;
      }
    }
  }
  ++s.steps;
  if (s.terminal == Terminal::Running && s.steps >= cfg.max_steps) s.terminal = Terminal::Timeout;
  StepResult out{s, observe(s), reward, s.terminal != Terminal::Running};
  return out;
}

/// Stateful wrapper holding one episode at a time.
class GridEnv {
 public:
  explicit GridEnv(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const ObsPair& reset(std::uint64_t seed) {
    std::tie(state_, obs_) = imgap::reset(seed, cfg_);
    return obs_;
  }

  StepResult step(Action a) {
    StepResult r = imgap::step(state_, a, cfg_);
    state_ = r.state;
    obs_ = r.obs;
    return r;
  }

  const GridState& state() const { return state_; }
  const ObsPair& obs() const { return obs_; }
  const EnvConfig& config() const { return cfg_; }

 private:
  EnvConfig cfg_;
  GridState state_;
  ObsPair obs_;
};

/// Agent that follows a BFS shortest path, turning to face each move first.
class OracleAgent {
 public:
  Action act(const GridState& s) {
    if (layout_ != s.layout || !on_path(s.pos)) {
      layout_ = s.layout;
      path_ = shortest_path(*s.layout, s.pos, s.layout->goal()).value_or(std::vector<Cell>{});
    }
    std::size_t i = 0;
    while (i < path_.size() && !(path_[i] == s.pos)) ++i;
    if (i + 1 >= path_.size()) return Action::MoveE;
    const Cell d{path_[i + 1].x - s.pos.x, path_[i + 1].y - s.pos.y};
    int dir = 0;
    while (!(kHeading[dir] == d)) ++dir;
    if (static_cast<int>(s.orientation) != dir) return static_cast<Action>(4 + dir);
    return static_cast<Action>(dir);
  }

 private:
  bool on_path(Cell c) const {
    for (const Cell& p : path_)
      if (p == c) return true;
    return false;
  }

  std::shared_ptr<const MapLayout> layout_;
  std::vector<Cell> path_;
};

inline const char* to_string(Action a) {
  static constexpr const char* names[] = {"MoveN", "MoveE", "MoveS", "MoveW",
                                          "FaceN", "FaceE", "FaceS", "FaceW"};
  return names[static_cast<int>(a)];
}

}  // namespace imgap
