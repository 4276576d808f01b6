#pragma once

// Reproducible generate-and-filter level sets, checked by the planner.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sokotl/engine.hpp"
#include "sokotl/planner.hpp"

namespace sokotl {

struct GenConstraints {
  double wall_density = 0.15;  // probability that an interior cell is a wall
  int min_len = 3;             // accepted optimal-length window, inclusive
  int max_len = 60;
  std::size_t node_budget = kDefaultNodeBudget;
  std::size_t max_candidates = 0;  // 0 = 5000 * count
  int workers = 1;
};

struct LevelSet {
  std::vector<Level> levels;
  int box_count = 0;
  std::uint64_t seed = 0;
  GenConstraints constraints;

  std::size_t size() const noexcept { return levels.size(); }
};

class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& what, std::size_t produced)
      : std::runtime_error(what), produced_(produced) {}
  std::size_t produced() const noexcept { return produced_; }

 private:
  std::size_t produced_;
};

// Candidate number `index` of the stream (seed, box_count); no solvability check.
Level make_candidate(std::uint64_t seed, int box_count, std::size_t index, double wall_density);

// True when the interior non-wall cells form one 4-connected region.
bool floor_connected(const Grid& grid);

LevelSet generate(std::uint64_t seed, int box_count, int count, const GenConstraints& constraints = {});

// Disjoint, seeded subsets. Each subset keeps the parent order. With
// allow_overlap the test subset is drawn from the training subset instead.
std::pair<LevelSet, LevelSet> split(const LevelSet& set, int train, int test, std::uint64_t seed,
                                    bool allow_overlap = false);

// JSON manifest {seed, box_count, count, constraints, ids, optimal_lengths}.
std::string manifest_json(const LevelSet& set);

// Writes <stem>.txt and <stem>.json.
void save_level_set(const std::string& stem, const LevelSet& set);
// Reads levels from a text file; picks up the sibling .json manifest when present.
LevelSet load_level_set(const std::string& levels_path);

}  // namespace sokotl
