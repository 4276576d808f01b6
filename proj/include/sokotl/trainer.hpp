#pragma once

// Synchronous A2C: 30 lockstep environments, 5-step rollouts, n-step returns,
// one RMSProp update per rollout.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sokotl/engine.hpp"
#include "sokotl/evalharness.hpp"
#include "sokotl/network.hpp"
#include "sokotl/rng.hpp"

namespace sokotl {

struct TrainHyper {
  double gamma = 0.99;
  int rollout = 5;
  int envs = 30;
  LossCoefs coefs;
  RmsPropConfig optimizer;
  int max_episode_steps = kDefaultMaxEpisodeSteps;

  std::uint64_t steps_per_update() const noexcept { return static_cast<std::uint64_t>(rollout) * static_cast<std::uint64_t>(envs); }

  friend bool operator==(const TrainHyper&, const TrainHyper&) = default;
};

nlohmann::ordered_json to_json(const TrainHyper& h);
TrainHyper hyper_from_json(const nlohmann::json& j, TrainHyper base = {});

// Fixed number of episode slots; a finished episode restarts on a level drawn
// uniformly (with replacement) from the training set.
class VectorEnv {
 public:
  VectorEnv(std::vector<Level> levels, int num_envs, std::uint64_t run_seed, Palette palette = Palette::Base,
            EngineConfig engine = {});

  int size() const noexcept { return static_cast<int>(states_.size()); }
  const GameState& state(int slot) const { return states_[static_cast<std::size_t>(slot)]; }
  std::span<const Observation> observations() const noexcept { return observations_; }
  Rng& action_rng(int slot) { return action_rngs_[static_cast<std::size_t>(slot)]; }
  std::uint64_t episode_serial(int slot) const { return serials_[static_cast<std::size_t>(slot)]; }
  int level_index(int slot) const { return level_of_[static_cast<std::size_t>(slot)]; }

  struct SlotResult {
    float reward = 0.0f;
    bool done = false;
    bool solved = false;
    double episode_return = 0.0;  // set when done
  };

  // Steps every slot. With workers > 1 slots are stepped concurrently.
  std::vector<SlotResult> step(std::span<const int> actions, int workers = 1);

 private:
  void start_episode(std::size_t slot);

  std::vector<Level> levels_;
  Palette palette_;
  EngineConfig engine_;
  std::vector<GameState> states_;
  std::vector<Observation> observations_;
  std::vector<Rng> level_rngs_;
  std::vector<Rng> action_rngs_;
  std::vector<std::uint64_t> serials_;
  std::vector<int> level_of_;
  std::vector<std::vector<double>> episode_rewards_;
};

// Slot-major storage: element (env, t) lives at env * steps + t.
struct RolloutBatch {
  int envs = 0;
  int steps = 0;
  std::vector<Observation> observations;
  std::vector<int> actions;
  std::vector<float> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<float> values;     // V(s_t) at collection time
  std::vector<float> bootstrap;  // per env, V(s_T), zero when the last step was terminal
  std::vector<float> returns;
  std::vector<std::uint64_t> episode_serials;  // per (env, t): which episode the observation belongs to

  std::size_t index(int env, int t) const noexcept { return static_cast<std::size_t>(env * steps + t); }
  PolicyBatch policy_batch() const { return {observations, actions, returns}; }
};

// R_t = r_t + gamma * R_{t+1} * (1 - done_t), seeded with the bootstrap values.
std::vector<float> compute_returns(std::span<const float> rewards, std::span<const std::uint8_t> dones,
                                   std::span<const float> bootstrap, int envs, int steps, float gamma);

struct EpisodeSummary {
  double episode_return = 0.0;
  bool solved = false;
};

RolloutBatch collect_rollout(VectorEnv& venv, const NetworkParams& params, Network<float>& net, const TrainHyper& hyper,
                             std::vector<EpisodeSummary>* finished = nullptr, int workers = 1);

struct MetricsRow {
  std::uint64_t env_steps = 0;  // evaluation mark (multiple of the eval interval)
  std::uint64_t update_idx = 0;
  double solved_ratio = 0.0;
  double mean_episode_return = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double wall_clock_s = 0.0;
};

inline constexpr std::string_view kMetricsHeader =
    "env_steps,update_idx,solved_ratio,mean_episode_return,policy_loss,value_loss,entropy,wall_clock_s";
std::string metrics_csv_row(const MetricsRow& row);
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);
Curve solved_curve(std::span<const MetricsRow> rows);

struct TrainConfig {
  std::string experiment = "scratch";
  std::string source_task = "none";
  std::vector<Level> train_levels;
  std::vector<Level> test_levels;
  nlohmann::ordered_json level_manifests = nlohmann::ordered_json::object();
  Palette palette = Palette::Base;
  TrainHyper hyper;
  std::uint64_t seed = 0;
  std::uint64_t budget_steps = 300'000;
  std::uint64_t eval_interval = 1000;
  EvalMode eval_mode = EvalMode::Sample;
  bool deterministic = true;
  int workers = 1;  // env stepping threads in performance mode
  std::optional<NetworkParams> initial_params;  // e.g. from apply_transfer; otherwise init_params(seed)
  std::string out_dir;                           // empty: no files
  std::uint64_t checkpoint_interval = 0;         // env steps; 0: final checkpoint only
  std::function<bool(const MetricsRow&)> stop_when;  // early stop after an evaluation
  std::function<void(const MetricsRow&)> on_eval;
};

struct TrainResult {
  NetworkParams params;
  std::vector<MetricsRow> metrics;
  std::uint64_t env_steps = 0;
  std::uint64_t updates = 0;
  bool failed = false;
  std::string error;
  nlohmann::ordered_json manifest;
};

// Throws nothing on divergence: a non-finite loss ends the run with failed = true
// and the manifest status set to "failed".
TrainResult train(const TrainConfig& config);

std::string metrics_csv(std::span<const MetricsRow> rows);

}  // namespace sokotl
