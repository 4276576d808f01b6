#pragma once

// Solved-ratio evaluation, multi-seed aggregation, plotting and feature-map export.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sokotl/engine.hpp"
#include "sokotl/network.hpp"
#include "sokotl/rng.hpp"

namespace sokotl {

enum class EvalMode : std::uint8_t { Sample, Argmax };
EvalMode eval_mode_from_string(std::string_view s);
std::string_view to_string(EvalMode m) noexcept;

struct EvalPoint {
  std::uint64_t env_steps = 0;
  double solved_ratio = 0.0;
  int solved = 0;
  int episodes = 0;
  std::uint64_t eval_seed = 0;

  friend bool operator==(const EvalPoint&, const EvalPoint&) = default;
};

// One live episode handed to a policy during evaluation.
struct EpisodeView {
  int episode = 0;  // index into the test set
  const GameState* state = nullptr;
  const Observation* observation = nullptr;
  Rng* rng = nullptr;
};

// Maps the live episodes of one lockstep tick to action indices.
using BatchPolicy = std::function<std::vector<int>(std::span<const EpisodeView>)>;

// Samples (or argmaxes) the softmax of the network's policy logits.
BatchPolicy network_policy(const NetworkParams& params, EvalMode mode);

// Picks an action index from softmax(logits) given a uniform draw in [0,1).
int sample_from_logits(std::span<const float> logits, double u);

// One episode per test level; episode i uses a stream derived from (eval_seed, i).
EvalPoint evaluate(const BatchPolicy& policy, std::span<const Level> test_levels, std::uint64_t eval_seed,
                   Palette palette = Palette::Base, const EngineConfig& engine = {});
EvalPoint evaluate(const NetworkParams& params, std::span<const Level> test_levels, std::uint64_t eval_seed,
                   EvalMode mode = EvalMode::Sample, Palette palette = Palette::Base, const EngineConfig& engine = {});

// ---- aggregation ----

struct Curve {
  std::vector<std::uint64_t> steps;
  std::vector<double> values;
};

struct AggregateCurve {
  std::vector<std::uint64_t> steps;
  std::vector<double> mean;
  std::vector<double> half_width;  // 1.96 * sample sd / sqrt(n)
  int seeds = 0;
};

// Needs >= 2 runs on identical step grids.
AggregateCurve aggregate(std::span<const Curve> runs);

std::string aggregate_csv(const AggregateCurve& curve);
AggregateCurve parse_aggregate_csv(std::string_view text);

// ---- plotting ----

struct NamedCurve {
  std::string name;
  AggregateCurve curve;
};

// Standalone SVG: solved ratio against environment steps with shaded CI bands.
std::string plot_svg(std::span<const NamedCurve> curves, const std::string& title = "");

// ---- feature maps ----

struct FeatureMapDump {
  int layer = 1;    // 1..3
  int channel = 0;
  std::string observation_id;
  int size = 0;                      // grid is size x size
  std::vector<float> activation;     // post-ReLU, row-major
  std::vector<float> normalized;     // per-channel scaled to [0,1]
};

std::vector<FeatureMapDump> dump_feature_maps(const NetworkParams& params, const Observation& observation, int layer,
                                              const std::string& observation_id = "obs");

// Binary PGM (P5) of a normalized map, each activation cell drawn as scale x scale pixels.
std::string feature_map_pgm(const FeatureMapDump& dump, int scale = 4);

// Board cell under the centre of a conv1 output position.
int conv1_position_to_cell(int oy, int ox) noexcept;

struct DetectorScan {
  int best_channel = -1;
  double best_rate = 0.0;
  std::vector<double> rates;  // per conv1 channel
};

// For each conv1 channel, the fraction of states whose argmax activation lies on the player's cell.
DetectorScan scan_agent_detector(const NetworkParams& params, std::span<const GameState> states,
                                 Palette palette = Palette::Base);

}  // namespace sokotl
