#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "sokotl/levelgen.hpp"
#include "sokotl/planner.hpp"
#include "sokotl/verify.hpp"
#include "test_util.hpp"

using namespace sokotl;
using sokotl::testing::level_from_rows;
using sokotl::testing::two_push_level;

TEST_CASE("shortest plan on a hand level") {
  const auto r = solve_optimal(two_push_level());
  REQUIRE(r.status == SolveStatus::Solved);
  CHECK(plan_to_string(r.plan) == "rr");
  CHECK(verify::brute_force_length(two_push_level()) == 2);
}

TEST_CASE("corner deadlocks") {
  const auto level = level_from_rows({
      "##########",
      "#$  @  . #",
      "#        #",
      "#        #",
      "#        #",
      "#        #",
      "#        #",
      "#        #",
      "#        #",
      "##########",
  });
  CHECK(is_dead_corner(level.grid, 11));
  CHECK_FALSE(is_dead_corner(level.grid, 12));
  CHECK_FALSE(is_dead_corner(level.grid, 17));  // target
  CHECK(solve_optimal(level).status == SolveStatus::Unsolvable);
  CHECK(verify::brute_force_length(level) == std::nullopt);
}

TEST_CASE("budget exhaustion is reported") {
  const auto set = generate(3, 3, 1);
  CHECK(solve_optimal(set.levels[0], 10).status == SolveStatus::BudgetExceeded);
}

TEST_CASE("plan strings") {
  const auto p = plan_from_string("udlr");
  CHECK(p.length() == 4);
  CHECK(plan_to_string(p) == "udlr");
  CHECK_THROWS(plan_from_string("x"));
}

TEST_CASE("length statistics") {
  const std::vector<int> even = {1, 2, 3, 4};
  const auto s = stats_from_lengths(even);
  CHECK(s.median == doctest::Approx(2.5));
  CHECK(s.min == 1);
  CHECK(s.max == 4);
  CHECK(s.mean == doctest::Approx(2.5));
  const std::vector<int> odd = {5, 1, 3};
  CHECK(stats_from_lengths(odd).median == doctest::Approx(3.0));
  CHECK(histogram_csv(s).rfind("length,count", 0) == 0);
}

TEST_CASE("planner agrees with brute force on generated levels") {
  for (int n = 1; n <= 2; ++n) {
    const auto set = generate(17, n, 6);
    for (const auto& level : set.levels) {
      const auto r = solve_optimal(level);
      REQUIRE(r.status == SolveStatus::Solved);
      CHECK(level.optimal_length == r.plan.length());
      CHECK(verify::brute_force_length(level) == r.plan.length());
    }
  }
}

TEST_CASE("generation is reproducible and respects constraints") {
  const auto a = generate(21, 2, 8);
  const auto b = generate(21, 2, 8);
  REQUIRE(a.size() == 8);
  CHECK(a.levels == b.levels);
  std::set<std::string> ids;
  for (const auto& l : a.levels) {
    CHECK(l.id.rfind("2b-21-", 0) == 0);
    ids.insert(l.id);
    CHECK_FALSE(check_level(l).has_value());
    CHECK(floor_connected(l.grid));
    REQUIRE(l.optimal_length.has_value());
    CHECK(*l.optimal_length >= 3);
    CHECK(*l.optimal_length <= 60);
  }
  CHECK(ids.size() == 8);
  CHECK_FALSE(generate(22, 2, 8).levels == a.levels);
}

TEST_CASE("candidates are pure functions of their coordinates") {
  CHECK(make_candidate(4, 1, 9, 0.15) == make_candidate(4, 1, 9, 0.15));
  CHECK_FALSE(make_candidate(4, 1, 9, 0.15) == make_candidate(4, 1, 10, 0.15));
}

TEST_CASE("splits are disjoint and seeded") {
  const auto set = generate(5, 1, 30);
  const auto [train, test] = split(set, 20, 10, 3);
  CHECK(train.size() == 20);
  CHECK(test.size() == 10);
  std::set<std::string> seen;
  for (const auto& l : train.levels) seen.insert(l.id);
  for (const auto& l : test.levels) CHECK(seen.count(l.id) == 0);
  const auto [train2, test2] = split(set, 20, 10, 3);
  CHECK(train2.levels == train.levels);
  CHECK_THROWS(split(set, 25, 10, 3));
  CHECK_NOTHROW(split(set, 25, 10, 3, true));
}

TEST_CASE("impossible constraints raise with the partial count") {
  GenConstraints c;
  c.min_len = 59;
  c.max_len = 60;
  c.max_candidates = 20;
  CHECK_THROWS_AS(generate(1, 1, 5, c), GenerationError);
}

TEST_CASE("adjacent collinear push has length 1") {
  const auto level = level_from_rows({
      "##########",
      "#        #",
      "#  @$.   #",
      "#        #",
      "#        #",
      "#        #",
      "#        #",
      "#        #",
      "#        #",
      "##########",
  });
  const auto r = solve_optimal(level);
  REQUIRE(r.status == SolveStatus::Solved);
  CHECK(r.plan.length() == 1);
  Level with_len = level;
  with_len.optimal_length = 1;
  const auto h = length_histogram(std::vector<Level>{with_len});
  CHECK(h.counts == std::map<int, int>{{1, 1}});
}

TEST_CASE("default 1-box generation stays in the length window") {
  const auto set = generate(2019, 1, 100);
  REQUIRE(set.size() == 100);
  Planner planner;
  for (const auto& l : set.levels) {
    const auto r = planner.solve(l);
    REQUIRE(r.status == SolveStatus::Solved);
    CHECK(r.plan.length() >= 3);
    CHECK(r.plan.length() <= 60);
    CHECK(r.plan.length() == l.optimal_length);
  }
}

TEST_CASE("planner is deterministic") {
  const auto set = generate(31, 2, 3);
  for (const auto& l : set.levels) CHECK(plan_to_string(solve_optimal(l).plan) == plan_to_string(solve_optimal(l).plan));
}
