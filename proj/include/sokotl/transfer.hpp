#pragma once

// Layer transplant with freezing, and the agent-location pretext task.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sokotl/engine.hpp"
#include "sokotl/network.hpp"

namespace sokotl {

enum class TransferMode : std::uint8_t { ConvK, FcOnly };

struct TransferSpec {
  std::string source_checkpoint;  // used by the path overload of apply_transfer
  TransferMode mode = TransferMode::ConvK;
  int k = 1;  // ConvK only, 1..3
  std::uint64_t reinit_seed = 0;
};

std::string describe(const TransferSpec& spec);

// Names of the layers a spec copies and freezes.
std::vector<std::string> transplanted_layers(const TransferSpec& spec);

// Fresh actor-critic params from reinit_seed, with the transplanted layers
// overwritten by the source's bytes and frozen. Throws ShapeError when the
// source lacks a layer or its shape differs.
NetworkParams apply_transfer(const TransferSpec& spec, const NetworkParams& source);
NetworkParams apply_transfer(const TransferSpec& spec);

// ---- pretext task ----

struct PretextSample {
  Observation observation;
  int label = 0;  // 10 * row + col of the player
  GameState state;
};

struct PretextDataset {
  std::vector<PretextSample> samples;
  std::uint64_t seed = 0;
  std::string source_set;
  int walk_length = 20;
  Palette palette = Palette::Base;
};

int pretext_label(const GameState& state) noexcept;

// Random walks of walk_length uniform actions from level starts (a walk stops
// early if it solves the level). Samples are then drawn round-robin over
// player cells so the label distribution is as flat as reachability allows.
PretextDataset make_pretext_dataset(std::span<const Level> levels, int samples, std::uint64_t seed,
                                    int walk_length = 20, Palette palette = Palette::Base,
                                    const std::string& source_set = "");

// Packed binary ("SOKOPT1", u32 count, then label byte + observation bytes per
// sample) plus a "<path>.json" sidecar. States are not stored.
void save_pretext_dataset(const std::string& path, const PretextDataset& data);
PretextDataset load_pretext_dataset(const std::string& path);

struct LocatorConfig {
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t seed = 0;
  RmsPropConfig optimizer;
  double target_accuracy = 0.0;  // > 0: stop after the first epoch reaching it
  std::function<void(int epoch, double loss, double accuracy)> on_epoch;
};

struct LocatorResult {
  NetworkParams params;
  std::vector<double> epoch_loss;
  std::vector<double> held_out_accuracy;
  int epochs_run = 0;
};

double locator_accuracy(const NetworkParams& params, std::span<const PretextSample> samples, int batch_size = 64);

LocatorResult pretrain_locator(std::span<const PretextSample> train, std::span<const PretextSample> held_out,
                               const LocatorConfig& config);

}  // namespace sokotl
