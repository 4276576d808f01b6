#include "sokotl/planner.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace sokotl {

std::string_view to_string(SolveStatus s) noexcept {
  switch (s) {
    case SolveStatus::Solved: return "solved";
    case SolveStatus::Unsolvable: return "unsolvable";
    case SolveStatus::BudgetExceeded: return "budget_exceeded";
  }
  return "?";
}

bool is_dead_corner(const Grid& grid, int cell) noexcept {
  if (grid[cell] != Tile::Floor) return false;
  const bool vertical = grid[neighbor(cell, Action::Up)] == Tile::Wall || grid[neighbor(cell, Action::Down)] == Tile::Wall;
  const bool horizontal =
      grid[neighbor(cell, Action::Left)] == Tile::Wall || grid[neighbor(cell, Action::Right)] == Tile::Wall;
  return vertical && horizontal;
}

namespace {

// State key: 7 bits player, then up to three 7-bit box cells in ascending order.
constexpr int kCellBits = 7;
constexpr std::uint32_t kKeySpace = 1u << (kCellBits * (kMaxBoxes + 1));

struct Node {
  std::uint32_t key;
  std::int32_t parent;
  std::uint8_t action;
};

std::uint32_t pack(int player, const std::array<std::uint8_t, kMaxBoxes>& boxes, int n) {
  std::uint32_t k = static_cast<std::uint32_t>(player);
  for (int i = 0; i < n; ++i) k |= static_cast<std::uint32_t>(boxes[static_cast<std::size_t>(i)]) << (kCellBits * (i + 1));
  return k;
}

void unpack(std::uint32_t key, int n, int& player, std::array<std::uint8_t, kMaxBoxes>& boxes) {
  player = static_cast<int>(key & 0x7F);
  for (int i = 0; i < n; ++i)
    boxes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((key >> (kCellBits * (i + 1))) & 0x7F);
}

}  // namespace

struct Planner::Impl {
  std::vector<std::uint64_t> visited = std::vector<std::uint64_t>(kKeySpace / 64, 0);
  std::vector<Node> nodes;

  bool test_and_set(std::uint32_t k) {
    auto& w = visited[k >> 6];
    const std::uint64_t bit = 1ull << (k & 63);
    const bool was = (w & bit) != 0;
    w |= bit;
    return was;
  }

  void clear() {
    for (const auto& n : nodes) visited[n.key >> 6] = 0;
    nodes.clear();
  }

  SolveResult run(const GameState& start, std::size_t budget);
};

SolveResult Planner::Impl::run(const GameState& start, std::size_t budget) {
  SolveResult result;
  const Grid& grid = start.grid;
  const int n = start.box_count();

  if (start.solved()) {
    result.status = SolveStatus::Solved;
    return result;
  }
  for (auto b : start.boxes) {
    if (is_dead_corner(grid, b)) {
      result.status = SolveStatus::Unsolvable;
      return result;
    }
  }

  std::array<bool, kCells> dead{};
  std::array<bool, kCells> target{};
  for (int c = 0; c < kCells; ++c) {
    target[static_cast<std::size_t>(c)] = grid[c] == Tile::Target;
    if (grid[c] != Tile::Wall && c >= kBoardSize && c < kCells - kBoardSize) dead[static_cast<std::size_t>(c)] = is_dead_corner(grid, c);
  }

  std::array<std::uint8_t, kMaxBoxes> boxes{};
  for (int i = 0; i < n; ++i) boxes[static_cast<std::size_t>(i)] = start.boxes[i];
  const std::uint32_t root = pack(start.player, boxes, n);
  nodes.push_back({root, -1, 0});
  test_and_set(root);

  std::int32_t goal = -1;
  for (std::size_t head = 0; head < nodes.size() && goal < 0; ++head) {
    int player = 0;
    unpack(nodes[head].key, n, player, boxes);
    for (Action a : kAllActions) {
      const int dest = neighbor(player, a);
      if (grid[dest] == Tile::Wall) continue;
      auto next_boxes = boxes;
      int box_slot = -1;
      for (int i = 0; i < n; ++i)
        if (boxes[static_cast<std::size_t>(i)] == dest) box_slot = i;
      if (box_slot >= 0) {
        const int beyond = neighbor(dest, a);
        if (grid[beyond] == Tile::Wall) continue;
        bool blocked = false;
        for (int i = 0; i < n; ++i) blocked = blocked || boxes[static_cast<std::size_t>(i)] == beyond;
        if (blocked || dead[static_cast<std::size_t>(beyond)]) continue;
        next_boxes[static_cast<std::size_t>(box_slot)] = static_cast<std::uint8_t>(beyond);
        std::sort(next_boxes.begin(), next_boxes.begin() + n);
      }
      const std::uint32_t key = pack(dest, next_boxes, n);
      if (test_and_set(key)) continue;
      if (nodes.size() >= budget) {
        result.status = SolveStatus::BudgetExceeded;
        result.states_seen = nodes.size();
        return result;
      }
      nodes.push_back({key, static_cast<std::int32_t>(head), static_cast<std::uint8_t>(a)});
      if (box_slot >= 0) {
        bool all_on = true;
        for (int i = 0; i < n; ++i) all_on = all_on && target[next_boxes[static_cast<std::size_t>(i)]];
        if (all_on) {
          goal = static_cast<std::int32_t>(nodes.size() - 1);
          break;
        }
      }
    }
  }

  result.states_seen = nodes.size();
  if (goal < 0) {
    result.status = SolveStatus::Unsolvable;
    return result;
  }
  result.status = SolveStatus::Solved;
  for (std::int32_t i = goal; nodes[static_cast<std::size_t>(i)].parent >= 0; i = nodes[static_cast<std::size_t>(i)].parent)
    result.plan.actions.push_back(static_cast<Action>(nodes[static_cast<std::size_t>(i)].action));
  std::reverse(result.plan.actions.begin(), result.plan.actions.end());
  return result;
}

Planner::Planner() : impl_(std::make_unique<Impl>()) {}
Planner::~Planner() = default;
Planner::Planner(Planner&&) noexcept = default;
Planner& Planner::operator=(Planner&&) noexcept = default;

SolveResult Planner::solve(const GameState& start, std::size_t node_budget) {
  impl_->clear();
  auto r = impl_->run(start, node_budget);
  impl_->clear();
  return r;
}

SolveResult Planner::solve(const Level& level, std::size_t node_budget) {
  if (auto err = check_level(level)) throw LevelError("level '" + level.id + "': " + *err);
  GameState s;
  s.grid = level.grid;
  s.boxes = level.boxes;
  s.player = level.player;
  return solve(s, node_budget);
}

SolveResult solve_optimal(const Level& level, std::size_t node_budget) {
  thread_local Planner planner;
  return planner.solve(level, node_budget);
}

std::string plan_to_string(const Plan& plan) {
  std::string s;
  s.reserve(plan.actions.size());
  for (auto a : plan.actions) s.push_back(action_letter(a));
  return s;
}

Plan plan_from_string(std::string_view s) {
  Plan p;
  for (char c : s) p.actions.push_back(action_from_letter(c));
  return p;
}

LengthStats stats_from_lengths(std::span<const int> lengths) {
  LengthStats st;
  if (lengths.empty()) return st;
  std::vector<int> sorted(lengths.begin(), lengths.end());
  std::sort(sorted.begin(), sorted.end());
  for (int l : sorted) ++st.counts[l];
  st.total = static_cast<int>(sorted.size());
  st.min = sorted.front();
  st.max = sorted.back();
  const std::size_t mid = sorted.size() / 2;
  st.median = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  st.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  return st;
}

LengthStats length_histogram(std::span<const Level> levels, std::size_t node_budget) {
  std::vector<int> lengths;
  lengths.reserve(levels.size());
  for (const auto& level : levels) {
    auto r = solve_optimal(level, node_budget);
    if (r.status != SolveStatus::Solved)
      throw SolveError("level '" + level.id + "': " + std::string(to_string(r.status)));
    lengths.push_back(r.plan.length());
  }
  return stats_from_lengths(lengths);
}

std::string histogram_csv(const LengthStats& stats) {
  std::ostringstream out;
  out << "length,count\n";
  for (const auto& [len, count] : stats.counts) out << len << ',' << count << '\n';
  return out.str();
}

std::string stats_json(const LengthStats& stats) {
  nlohmann::ordered_json j;
  j["min"] = stats.min;
  j["median"] = stats.median;
  j["max"] = stats.max;
  j["mean"] = stats.mean;
  j["count"] = stats.total;
  return j.dump(2);
}

}  // namespace sokotl
