#pragma once

// Exact step-optimal Sokoban search. Ground truth for level generation and
// solution-length statistics.

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sokotl/engine.hpp"

namespace sokotl {

inline constexpr std::size_t kDefaultNodeBudget = 5'000'000;

struct Plan {
  std::vector<Action> actions;
  int length() const noexcept { return static_cast<int>(actions.size()); }
};

enum class SolveStatus { Solved, Unsolvable, BudgetExceeded };

struct SolveResult {
  SolveStatus status = SolveStatus::Unsolvable;
  Plan plan;                  // valid when status == Solved
  std::size_t states_seen = 0;
};

std::string_view to_string(SolveStatus s) noexcept;

// A wall corner that is not a target: a box there can never move again.
bool is_dead_corner(const Grid& grid, int cell) noexcept;

// Breadth-first search over canonical (player, sorted boxes) states. Owns a
// 32 MiB visited bitmap so repeated solves avoid reallocation; one instance per
// thread.
class Planner {
 public:
  Planner();
  ~Planner();
  Planner(Planner&&) noexcept;
  Planner& operator=(Planner&&) noexcept;

  SolveResult solve(const Level& level, std::size_t node_budget = kDefaultNodeBudget);
  SolveResult solve(const GameState& start, std::size_t node_budget = kDefaultNodeBudget);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

SolveResult solve_optimal(const Level& level, std::size_t node_budget = kDefaultNodeBudget);

// Plan string such as "uurdl".
std::string plan_to_string(const Plan& plan);
Plan plan_from_string(std::string_view s);

struct LengthStats {
  std::map<int, int> counts;
  int min = 0;
  int max = 0;
  double median = 0.0;
  double mean = 0.0;
  int total = 0;
};

class SolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Solves every level; throws SolveError naming the first level that is not solved.
LengthStats length_histogram(std::span<const Level> levels, std::size_t node_budget = kDefaultNodeBudget);
LengthStats stats_from_lengths(std::span<const int> lengths);

std::string histogram_csv(const LengthStats& stats);   // "length,count" rows
std::string stats_json(const LengthStats& stats);      // {min, median, max, mean}

}  // namespace sokotl
