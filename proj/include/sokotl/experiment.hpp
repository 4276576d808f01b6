#pragma once

// Experiment identities (the s{n}t{n}k{n} grid), JSON configs and level-set
// plumbing shared by the command line tool.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sokotl/evalharness.hpp"
#include "sokotl/levelgen.hpp"
#include "sokotl/trainer.hpp"
#include "sokotl/transfer.hpp"

namespace sokotl {

enum class SourceTask : std::uint8_t { OneBox, TwoBoxes, ThreeBoxes, Prediction, None };
enum class TargetTask : std::uint8_t { OneBox, TwoBoxes, ThreeBoxes, OneBoxGame2 };
enum class TransferKind : std::uint8_t { None, ConvK, Fc };

std::string_view to_string(SourceTask t) noexcept;
std::string_view to_string(TargetTask t) noexcept;
SourceTask source_task_from_string(std::string_view s);
TargetTask target_task_from_string(std::string_view s);

class ExperimentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kConfigSchemaVersion = 1;

struct ExperimentConfig {
  std::string abbreviation = "scratch_t1";
  SourceTask source = SourceTask::None;
  TargetTask target = TargetTask::OneBox;
  TransferKind transfer = TransferKind::None;
  int k = 0;  // fixed conv layers for ConvK

  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  TrainHyper hyper;
  std::uint64_t budget_steps = 1'000'000;
  std::uint64_t eval_interval = 1000;
  EvalMode eval_mode = EvalMode::Sample;
  bool deterministic = true;
  Palette palette = Palette::Base;
  std::uint64_t checkpoint_interval = 0;

  // Level sets. An empty `levels` means "generate or reuse the default set
  // for the target box count under the output root".
  std::string levels;
  std::uint64_t level_seed = 2019;
  int train_count = 100;
  int test_count = 20;
  bool test_overlap = false;

  // Source checkpoint; "{seed}" is replaced by the run seed. Empty means the
  // default location of the matching from-scratch run under the output root.
  std::string source_checkpoint;

  int target_boxes() const noexcept;
  std::optional<int> source_boxes() const noexcept;
  std::optional<TransferSpec> transfer_spec(std::uint64_t seed, const std::string& checkpoint_path) const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Accepts s{1|2|3|P}t{1|2|3}k{1|2|3}, s1t1fc_game2 and scratch_t{1|2|3}[_game2].
ExperimentConfig parse_experiment(std::string_view abbreviation);

// Abbreviation rebuilt from the identity fields.
std::string format_experiment(const ExperimentConfig& config);

struct RegistryEntry {
  std::string_view abbreviation;
  std::string_view source;  // as printed in the experiment table
  std::string_view target;
  std::string_view k;
};

// The 17 transfer experiments.
std::span<const RegistryEntry> experiment_registry() noexcept;

// Archived form of a config (includes schema_version).
nlohmann::ordered_json to_json(const ExperimentConfig& config);

// Starts from parse_experiment(j["experiment"]) and applies any other fields
// present. Unknown keys are rejected.
ExperimentConfig experiment_from_json(const nlohmann::json& j);

// Abbreviation of the from-scratch run whose checkpoints feed a transfer.
std::string source_run_name(const ExperimentConfig& config);

// Loads `path` when given, otherwise reuses or creates "<root>/levels/<n>b"
// (count train+test, fixed level seed). Returns the train/test split.
struct TaskLevels {
  LevelSet train;
  LevelSet test;
  std::string path;
};
TaskLevels prepare_levels(int box_count, const ExperimentConfig& config, const std::string& root,
                          const std::string& path = "");

std::string substitute_seed(std::string pattern, std::uint64_t seed);

}  // namespace sokotl
