#pragma once

// Independent reference implementations used to cross-check the main modules,
// plus the property suite behind `sokotl verify`. Everything here favours
// obviousness over speed.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sokotl/engine.hpp"
#include "sokotl/network.hpp"

namespace sokotl::verify {

// Plain BFS over (player, boxes) with engine::step as the transition and no
// pruning. Returns the optimal move count, nullopt if unsolvable, or throws
// when more than `state_limit` states are expanded.
std::optional<int> brute_force_length(const Level& level, std::size_t state_limit = 20'000'000);

// Reward events observed by diffing consecutive states.
struct RewardEvents {
  int steps = 0;
  int pushes_on = 0;   // a box arrived on a target
  int pushes_off = 0;  // a box left a target
  bool solved = false;
};

RewardEvents count_events(const GameState& before, const GameState& after);

// Expected episode reward in tenths: 100*solved + 10*on - 10*off - steps.
long long expected_tenths(const RewardEvents& e) noexcept;

// Plays `actions` from the level start until the sequence ends or the episode
// terminates; compares the summed engine rewards with the event count.
struct DecompositionCheck {
  long long engine_tenths = 0;
  long long oracle_tenths = 0;
  int steps_played = 0;
  bool ok() const noexcept { return engine_tenths == oracle_tenths; }
};
DecompositionCheck check_reward_decomposition(const Level& level, std::span<const Action> actions,
                                              const EngineConfig& engine = {});

// Returns recomputed per element by scanning forward to the end of the
// element's episode segment and accumulating backwards from there.
std::vector<float> reference_returns(std::span<const float> rewards, std::span<const std::uint8_t> dones,
                                     std::span<const float> bootstrap, int envs, int steps, float gamma);

// Direct loops over the network definition (no im2col, no Eigen).
struct ReferenceOutput {
  std::vector<std::vector<double>> heads;  // per head, per unit
  std::vector<double> conv1;               // 32 x 20 x 20, channel-major
};
ReferenceOutput reference_forward(const BasicParams<double>& params, const Observation& obs);

struct GradCheckOptions {
  int batch = 6;
  int samples_per_array = 16;
  double step = 1e-4;
  double floor = 1e-6;  // denominator floor for the relative error
  std::uint64_t seed = 1;
};

struct LayerGradError {
  std::string layer;
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped_kinks = 0;
};

// Central differences of the full actor-critic loss (advantages held fixed)
// against the analytic gradients, in double precision.
std::vector<LayerGradError> gradient_check(const GradCheckOptions& options = {});

// Same for the locator head with its cross-entropy loss.
std::vector<LayerGradError> locator_gradient_check(const GradCheckOptions& options = {});

// Random reachable states on random levels; used by several checks.
std::vector<GameState> random_states(int count, std::uint64_t seed, std::span<const int> box_counts,
                                     int walk_length = 20);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteOptions {
  bool quick = false;  // smaller sample sizes
  std::uint64_t seed = 7;
};

std::vector<CheckResult> run_suite(const SuiteOptions& options = {});

}  // namespace sokotl::verify
