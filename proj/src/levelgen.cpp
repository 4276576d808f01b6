#include "sokotl/levelgen.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sokotl/rng.hpp"

namespace sokotl {

namespace {

std::string level_id(int box_count, std::uint64_t seed, std::size_t index) {
  std::ostringstream ss;
  ss << box_count << "b-" << seed << '-' << index;
  return ss.str();
}

struct Evaluated {
  Level level;
  bool accepted = false;
};

Evaluated evaluate_candidate(std::uint64_t seed, int n, std::size_t index, const GenConstraints& c, Planner& planner) {
  Evaluated e;
  e.level = make_candidate(seed, n, index, c.wall_density);
  if (e.level.boxes.empty()) return e;
  auto r = planner.solve(e.level, c.node_budget);
  if (r.status != SolveStatus::Solved) return e;
  const int len = r.plan.length();
  if (len < c.min_len || len > c.max_len) return e;
  e.level.optimal_length = len;
  e.accepted = true;
  return e;
}

}  // namespace

bool floor_connected(const Grid& grid) {
  int start = -1;
  int open = 0;
  for (int i = 0; i < kCells; ++i) {
    if (grid[i] != Tile::Wall) {
      ++open;
      if (start < 0) start = i;
    }
  }
  if (start < 0) return false;
  std::array<bool, kCells> seen{};
  std::vector<int> stack = {start};
  seen[static_cast<std::size_t>(start)] = true;
  int reached = 0;
  while (!stack.empty()) {
    const int c = stack.back();
    stack.pop_back();
    ++reached;
    for (Action a : kAllActions) {
      const int nb = neighbor(c, a);
      if (grid[nb] != Tile::Wall && !seen[static_cast<std::size_t>(nb)]) {
        seen[static_cast<std::size_t>(nb)] = true;
        stack.push_back(nb);
      }
    }
  }
  return reached == open;
}

// Returns a level with no boxes when the sampled layout is rejected outright.
Level make_candidate(std::uint64_t seed, int box_count, std::size_t index, double wall_density) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(box_count), index}));
  Level level;
  level.id = level_id(box_count, seed, index);
  std::vector<int> floor;
  for (int r = 0; r < kBoardSize; ++r) {
    for (int c = 0; c < kBoardSize; ++c) {
      const int i = Cell{r, c}.index();
      const bool border = r == 0 || c == 0 || r == kBoardSize - 1 || c == kBoardSize - 1;
      const bool wall = border || rng.bernoulli(wall_density);
      level.grid[i] = wall ? Tile::Wall : Tile::Floor;
      if (!wall) floor.push_back(i);
    }
  }
  if (static_cast<int>(floor.size()) < 2 * box_count + 1 || !floor_connected(level.grid)) return level;

  shuffle(floor, rng);
  for (int b = 0; b < box_count; ++b) level.grid[floor[static_cast<std::size_t>(b)]] = Tile::Target;
  BoxSet boxes;
  for (int b = 0; b < box_count; ++b) boxes.insert(floor[static_cast<std::size_t>(box_count + b)]);
  const std::size_t free_cells = floor.size() - static_cast<std::size_t>(2 * box_count);
  level.player = floor[static_cast<std::size_t>(2 * box_count) + rng.below(free_cells)];
  level.boxes = boxes;
  return level;
}

LevelSet generate(std::uint64_t seed, int box_count, int count, const GenConstraints& constraints) {
  if (box_count < 1 || box_count > kMaxBoxes) throw std::invalid_argument("box_count must be in [1,3]");
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  if (constraints.min_len > constraints.max_len) throw std::invalid_argument("min_len > max_len");

  LevelSet set;
  set.box_count = box_count;
  set.seed = seed;
  set.constraints = constraints;
  const std::size_t limit =
      constraints.max_candidates ? constraints.max_candidates : static_cast<std::size_t>(count) * 5000;
  const int workers = std::max(1, constraints.workers);

  if (workers == 1) {
    thread_local Planner planner;
    for (std::size_t i = 0; i < limit && set.levels.size() < static_cast<std::size_t>(count); ++i) {
      auto e = evaluate_candidate(seed, box_count, i, constraints, planner);
      if (e.accepted) set.levels.push_back(std::move(e.level));
    }
  } else {
    // Candidates are evaluated in blocks and accepted strictly in index order.
    const std::size_t block = static_cast<std::size_t>(workers) * 16;
    std::vector<Planner> planners(static_cast<std::size_t>(workers));
    for (std::size_t base = 0; base < limit && set.levels.size() < static_cast<std::size_t>(count); base += block) {
      const std::size_t end = std::min(limit, base + block);
      std::vector<Evaluated> results(end - base);
      std::atomic<std::size_t> next{base};
      {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            for (std::size_t i = next++; i < end; i = next++)
              results[i - base] = evaluate_candidate(seed, box_count, i, constraints, planners[static_cast<std::size_t>(w)]);
          });
        }
      }
      for (auto& e : results) {
        if (set.levels.size() >= static_cast<std::size_t>(count)) break;
        if (e.accepted) set.levels.push_back(std::move(e.level));
      }
    }
  }

  if (set.levels.size() < static_cast<std::size_t>(count)) {
    throw GenerationError("candidate budget of " + std::to_string(limit) + " exhausted after producing " +
                              std::to_string(set.levels.size()) + " of " + std::to_string(count) + " levels",
                          set.levels.size());
  }
  return set;
}

std::pair<LevelSet, LevelSet> split(const LevelSet& set, int train, int test, std::uint64_t seed, bool allow_overlap) {
  if (train < 0 || test < 0) throw std::invalid_argument("split sizes must be non-negative");
  const std::size_t n = set.levels.size();
  if (!allow_overlap && static_cast<std::size_t>(train + test) > n)
    throw std::invalid_argument("split needs " + std::to_string(train + test) + " levels, set has " +
                                std::to_string(n));
  if (allow_overlap && (static_cast<std::size_t>(train) > n || test > train))
    throw std::invalid_argument("overlapping split needs test <= train <= set size");

  Rng rng(derive_seed(seed, {0x5311ull, n}));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);

  std::vector<std::size_t> train_idx(order.begin(), order.begin() + train);
  std::vector<std::size_t> test_idx;
  if (allow_overlap) {
    auto pool = train_idx;
    shuffle(pool, rng);
    test_idx.assign(pool.begin(), pool.begin() + test);
  } else {
    test_idx.assign(order.begin() + train, order.begin() + train + test);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  auto subset = [&](const std::vector<std::size_t>& idx) {
    LevelSet s;
    s.box_count = set.box_count;
    s.seed = set.seed;
    s.constraints = set.constraints;
    for (auto i : idx) s.levels.push_back(set.levels[i]);
    return s;
  };
  return {subset(train_idx), subset(test_idx)};
}

std::string manifest_json(const LevelSet& set) {
  nlohmann::ordered_json j;
  j["seed"] = set.seed;
  j["box_count"] = set.box_count;
  j["count"] = set.levels.size();
  j["constraints"] = {{"wall_density", set.constraints.wall_density},
                      {"min_len", set.constraints.min_len},
                      {"max_len", set.constraints.max_len},
                      {"node_budget", set.constraints.node_budget}};
  auto ids = nlohmann::ordered_json::array();
  auto lens = nlohmann::ordered_json::array();
  for (const auto& l : set.levels) {
    ids.push_back(l.id);
    if (l.optimal_length)
      lens.push_back(*l.optimal_length);
    else
      lens.push_back(nullptr);
  }
  j["ids"] = ids;
  j["optimal_lengths"] = lens;
  return j.dump(2) + "\n";
}

void save_level_set(const std::string& stem, const LevelSet& set) {
  save_levels(stem + ".txt", set.levels);
  std::ofstream out(stem + ".json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + stem + ".json");
  out << manifest_json(set);
}

LevelSet load_level_set(const std::string& levels_path) {
  LevelSet set;
  set.levels = load_levels(levels_path);
  if (!set.levels.empty()) set.box_count = set.levels.front().boxes.size();
  const auto manifest = std::filesystem::path(levels_path).replace_extension(".json");
  if (std::filesystem::exists(manifest)) {
    std::ifstream in(manifest);
    const auto j = nlohmann::json::parse(in);
    set.seed = j.value("seed", std::uint64_t{0});
    set.box_count = j.value("box_count", set.box_count);
    if (j.contains("constraints")) {
      const auto& c = j["constraints"];
      set.constraints.wall_density = c.value("wall_density", set.constraints.wall_density);
      set.constraints.min_len = c.value("min_len", set.constraints.min_len);
      set.constraints.max_len = c.value("max_len", set.constraints.max_len);
      set.constraints.node_budget = c.value("node_budget", set.constraints.node_budget);
    }
    const auto& ids = j.at("ids");
    const auto& lens = j.at("optimal_lengths");
    if (ids.size() != set.levels.size())
      throw std::runtime_error("manifest " + manifest.string() + " lists " + std::to_string(ids.size()) +
                               " levels, file has " + std::to_string(set.levels.size()));
    for (std::size_t i = 0; i < set.levels.size(); ++i) {
      if (ids[i].get<std::string>() != set.levels[i].id)
        throw std::runtime_error("manifest id mismatch at position " + std::to_string(i));
      if (!lens[i].is_null()) set.levels[i].optimal_length = lens[i].get<int>();
    }
  }
  return set;
}

}  // namespace sokotl
