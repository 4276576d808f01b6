#include "sokotl/transfer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "sokotl/rng.hpp"

namespace sokotl {

namespace {

constexpr std::string_view kDatasetMagic = "SOKOPT1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string describe(const TransferSpec& spec) {
  if (spec.mode == TransferMode::FcOnly) return "fc";
  return "conv" + std::to_string(spec.k);
}

std::vector<std::string> transplanted_layers(const TransferSpec& spec) {
  if (spec.mode == TransferMode::FcOnly) return {"fc", "policy", "value"};
  if (spec.k < 1 || spec.k > 3) throw std::invalid_argument("transfer k must be 1, 2 or 3");
  std::vector<std::string> names;
  for (int i = 1; i <= spec.k; ++i) names.push_back("conv" + std::to_string(i));
  return names;
}

NetworkParams apply_transfer(const TransferSpec& spec, const NetworkParams& source) {
  const auto names = transplanted_layers(spec);
  NetworkParams out = init_params(spec.reinit_seed, HeadKind::ActorCritic);
  for (const auto& name : names) {
    const int si = source.index_of(name);
    if (si < 0) throw ShapeError("source checkpoint has no layer '" + name + "'");
    const auto& src = source.layers[static_cast<std::size_t>(si)];
    auto& dst = out.layer(name);
    if (src.weight_shape != dst.weight_shape || src.bias.size() != dst.bias.size() ||
        src.weight.size() != dst.weight.size())
      throw ShapeError("layer '" + name + "' shape differs from the network");
    dst.weight = src.weight;
    dst.bias = src.bias;
    dst.frozen = true;
  }
  return out;
}

NetworkParams apply_transfer(const TransferSpec& spec) {
  if (spec.source_checkpoint.empty()) throw std::invalid_argument("transfer needs a source checkpoint");
  return apply_transfer(spec, load_checkpoint(spec.source_checkpoint));
}

// ---- pretext ----

int pretext_label(const GameState& state) noexcept { return state.player; }

PretextDataset make_pretext_dataset(std::span<const Level> levels, int samples, std::uint64_t seed, int walk_length,
                                    Palette palette, const std::string& source_set) {
  if (samples < 1) throw std::invalid_argument("pretext dataset needs at least one sample");
  if (levels.empty()) throw std::invalid_argument("pretext dataset needs levels");
  PretextDataset data;
  data.seed = seed;
  data.source_set = source_set;
  data.walk_length = walk_length;
  data.palette = palette;

  // Oversample walks, bucket end states by player cell, then deal round-robin.
  Rng rng(derive_seed(seed, {0x9E7ull}));
  std::map<int, std::vector<GameState>> buckets;
  const std::size_t walks = static_cast<std::size_t>(samples) * 4;
  for (std::size_t w = 0; w < walks; ++w) {
    GameState s = reset(levels[rng.below(levels.size())]);
    for (int t = 0; t < walk_length; ++t) {
      auto [next, outcome] = step(s, action_from_index(static_cast<int>(rng.below(kNumActions))));
      if (outcome.done) break;
      s = next;
    }
    buckets[s.player].push_back(s);
  }

  std::vector<std::vector<GameState>*> order;
  for (auto& [cell, states] : buckets) {
    shuffle(states, rng);
    order.push_back(&states);
  }
  std::vector<std::size_t> taken(order.size(), 0);
  while (static_cast<int>(data.samples.size()) < samples) {
    bool any = false;
    for (std::size_t b = 0; b < order.size() && static_cast<int>(data.samples.size()) < samples; ++b) {
      if (taken[b] >= order[b]->size()) continue;
      any = true;
      const GameState& s = (*order[b])[taken[b]++];
      data.samples.push_back({render(s, palette), pretext_label(s), s});
    }
    if (!any) break;
  }
  shuffle(data.samples, rng);
  return data;
}

void save_pretext_dataset(const std::string& path, const PretextDataset& data) {
  std::string out(kDatasetMagic);
  put_u32(out, static_cast<std::uint32_t>(data.samples.size()));
  out.reserve(out.size() + data.samples.size() * (1 + kObsValues));
  for (const auto& s : data.samples) {
    out.push_back(static_cast<char>(s.label));
    out.append(reinterpret_cast<const char*>(s.observation.bytes.data()), s.observation.bytes.size());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));

  nlohmann::ordered_json side = {{"seed", data.seed},
                                 {"count", data.samples.size()},
                                 {"source_set", data.source_set},
                                 {"walk_length", data.walk_length},
                                 {"palette", std::string(to_string(data.palette))}};
  std::ofstream(path + ".json") << side.dump(2) << '\n';
}

PretextDataset load_pretext_dataset(const std::string& path) {
  const std::string in = read_file(path);
  const std::size_t head = kDatasetMagic.size() + 4;
  if (in.size() < head || in.compare(0, kDatasetMagic.size(), kDatasetMagic) != 0)
    throw std::runtime_error(path + ": not a pretext dataset");
  const std::size_t count = get_u32(in, kDatasetMagic.size());
  const std::size_t record = 1 + kObsValues;
  if (in.size() != head + count * record) throw std::runtime_error(path + ": truncated pretext dataset");

  PretextDataset data;
  data.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = head + i * record;
    auto& s = data.samples[i];
    s.label = static_cast<unsigned char>(in[at]);
    if (s.label >= kCells) throw std::runtime_error(path + ": label out of range");
    std::memcpy(s.observation.bytes.data(), in.data() + at + 1, kObsValues);
  }
  std::ifstream side(path + ".json");
  if (side) {
    const auto j = nlohmann::json::parse(side);
    data.seed = j.value("seed", std::uint64_t{0});
    data.source_set = j.value("source_set", std::string{});
    data.walk_length = j.value("walk_length", 20);
    data.palette = palette_from_string(j.value("palette", std::string("base")));
  }
  return data;
}

// ---- locator training ----

double locator_accuracy(const NetworkParams& params, std::span<const PretextSample> samples, int batch_size) {
  if (samples.empty()) return 0.0;
  Network<float> net;
  std::vector<Observation> obs;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    obs.clear();
    for (std::size_t i = start; i < end; ++i) obs.push_back(samples[i].observation);
    net.forward(params, obs);
    const auto& logits = net.head_output(0);
    for (std::size_t i = start; i < end; ++i) {
      Eigen::Index best = 0;
      logits.col(static_cast<Eigen::Index>(i - start)).maxCoeff(&best);
      if (best == samples[i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

LocatorResult pretrain_locator(std::span<const PretextSample> train, std::span<const PretextSample> held_out,
                               const LocatorConfig& config) {
  if (train.empty()) throw std::invalid_argument("pretrain_locator: empty dataset");
  LocatorResult result;
  result.params = init_params(config.seed, HeadKind::Locator);
  auto& params = result.params;
  RmsProp optimizer(params, config.optimizer);
  Network<float> net;
  Gradients<float> grads;
  Rng rng(derive_seed(config.seed, {0x10CAull}));

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Observation> obs;
  std::vector<int> labels;
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      obs.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        obs.push_back(train[order[i]].observation);
        labels.push_back(train[order[i]].label);
      }
      loss_sum += locator_loss_and_grads(net, params, obs, labels, &grads);
      optimizer.step(params, grads);
      ++batches;
    }
    const double loss = loss_sum / static_cast<double>(batches);
    const double acc = locator_accuracy(params, held_out.empty() ? train : held_out);
    result.epoch_loss.push_back(loss);
    result.held_out_accuracy.push_back(acc);
    result.epochs_run = epoch;
    if (config.on_epoch) config.on_epoch(epoch, loss, acc);
    if (config.target_accuracy > 0.0 && acc >= config.target_accuracy) break;
  }
  return result;
}

}  // namespace sokotl
