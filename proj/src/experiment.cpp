#include "sokotl/experiment.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <regex>

namespace sokotl {

namespace {

constexpr std::array<RegistryEntry, 17> kRegistry = {{
    {"s1t1k3", "1-box", "1-box", "3"},
    {"s2t1k1", "2-boxes", "1-box", "1"},
    {"s2t1k2", "2-boxes", "1-box", "2"},
    {"s2t1k3", "2-boxes", "1-box", "3"},
    {"s3t1k1", "3-boxes", "1-box", "1"},
    {"s3t1k2", "3-boxes", "1-box", "2"},
    {"s3t1k3", "3-boxes", "1-box", "3"},
    // The table prints 3-boxes as this target; the abbreviation and the
    // surrounding text say 1-box, which is what runs by default.
    {"sPt1k1", "prediction", "1-box", "1"},
    {"s1t1fc_game2", "1-box", "1-box_game2", "fc"},
    {"s1t2k2", "1-box", "2-boxes", "2"},
    {"s1t2k3", "1-box", "2-boxes", "3"},
    {"s2t2k3", "2-boxes", "2-boxes", "3"},
    {"s1t3k1", "1-box", "3-boxes", "1"},
    {"s1t3k2", "1-box", "3-boxes", "2"},
    {"s1t3k3", "1-box", "3-boxes", "3"},
    {"s2t3k3", "2-boxes", "3-boxes", "3"},
    {"s1t2k1", "1-box", "2-boxes", "1"},
}};

SourceTask source_from_digit(char c) {
  switch (c) {
    case '1': return SourceTask::OneBox;
    case '2': return SourceTask::TwoBoxes;
    case '3': return SourceTask::ThreeBoxes;
    case 'P': return SourceTask::Prediction;
    default: throw ExperimentError(std::string("bad source task '") + c + "'");
  }
}

char source_digit(SourceTask t) {
  switch (t) {
    case SourceTask::OneBox: return '1';
    case SourceTask::TwoBoxes: return '2';
    case SourceTask::ThreeBoxes: return '3';
    case SourceTask::Prediction: return 'P';
    case SourceTask::None: break;
  }
  throw ExperimentError("from-scratch runs have no source digit");
}

int boxes_of(TargetTask t) noexcept {
  switch (t) {
    case TargetTask::TwoBoxes: return 2;
    case TargetTask::ThreeBoxes: return 3;
    default: return 1;
  }
}

TargetTask target_from_boxes(int n) {
  switch (n) {
    case 1: return TargetTask::OneBox;
    case 2: return TargetTask::TwoBoxes;
    case 3: return TargetTask::ThreeBoxes;
    default: throw ExperimentError("target box count must be 1, 2 or 3");
  }
}

}  // namespace

std::string_view to_string(SourceTask t) noexcept {
  switch (t) {
    case SourceTask::OneBox: return "1box";
    case SourceTask::TwoBoxes: return "2boxes";
    case SourceTask::ThreeBoxes: return "3boxes";
    case SourceTask::Prediction: return "prediction";
    case SourceTask::None: return "none";
  }
  return "none";
}

std::string_view to_string(TargetTask t) noexcept {
  switch (t) {
    case TargetTask::OneBox: return "1box";
    case TargetTask::TwoBoxes: return "2boxes";
    case TargetTask::ThreeBoxes: return "3boxes";
    case TargetTask::OneBoxGame2: return "1box_game2";
  }
  return "1box";
}

SourceTask source_task_from_string(std::string_view s) {
  for (auto t : {SourceTask::OneBox, SourceTask::TwoBoxes, SourceTask::ThreeBoxes, SourceTask::Prediction,
                 SourceTask::None})
    if (to_string(t) == s) return t;
  throw ExperimentError("unknown source task '" + std::string(s) + "'");
}

TargetTask target_task_from_string(std::string_view s) {
  for (auto t : {TargetTask::OneBox, TargetTask::TwoBoxes, TargetTask::ThreeBoxes, TargetTask::OneBoxGame2})
    if (to_string(t) == s) return t;
  throw ExperimentError("unknown target task '" + std::string(s) + "'");
}

int ExperimentConfig::target_boxes() const noexcept { return boxes_of(target); }

std::optional<int> ExperimentConfig::source_boxes() const noexcept {
  switch (source) {
    case SourceTask::OneBox: return 1;
    case SourceTask::TwoBoxes: return 2;
    case SourceTask::ThreeBoxes: return 3;
    default: return std::nullopt;
  }
}

std::optional<TransferSpec> ExperimentConfig::transfer_spec(std::uint64_t seed,
                                                            const std::string& checkpoint_path) const {
  if (transfer == TransferKind::None) return std::nullopt;
  TransferSpec spec;
  spec.source_checkpoint = checkpoint_path;
  spec.mode = transfer == TransferKind::Fc ? TransferMode::FcOnly : TransferMode::ConvK;
  spec.k = k;
  spec.reinit_seed = seed;
  return spec;
}

ExperimentConfig parse_experiment(std::string_view abbreviation) {
  static const std::regex transfer_re("s([123P])t([123])k([123])");
  static const std::regex scratch_re("scratch_t([123])(_game2)?");
  const std::string s(abbreviation);
  std::smatch m;
  ExperimentConfig c;
  c.abbreviation = s;
  if (std::regex_match(s, m, transfer_re)) {
    c.source = source_from_digit(m[1].str()[0]);
    c.target = target_from_boxes(m[2].str()[0] - '0');
    c.transfer = TransferKind::ConvK;
    c.k = m[3].str()[0] - '0';
  } else if (s == "s1t1fc_game2") {
    c.source = SourceTask::OneBox;
    c.target = TargetTask::OneBoxGame2;
    c.transfer = TransferKind::Fc;
    c.palette = Palette::Game2;
  } else if (std::regex_match(s, m, scratch_re)) {
    c.source = SourceTask::None;
    c.target = target_from_boxes(m[1].str()[0] - '0');
    if (m[2].matched) {
      c.target = TargetTask::OneBoxGame2;
      if (m[1].str() != "1") throw ExperimentError("only the 1-box task has a Game2 variant");
      c.palette = Palette::Game2;
    }
  } else {
    throw ExperimentError("malformed experiment abbreviation '" + s + "'");
  }
  return c;
}

std::string format_experiment(const ExperimentConfig& c) {
  const bool game2 = c.target == TargetTask::OneBoxGame2;
  if (c.transfer == TransferKind::None) {
    if (c.source != SourceTask::None) throw ExperimentError("a transfer source needs a transfer mode");
    return "scratch_t" + std::to_string(boxes_of(c.target)) + (game2 ? "_game2" : "");
  }
  if (c.source == SourceTask::None) throw ExperimentError("a transfer needs a source task");
  std::string out = std::string("s") + source_digit(c.source) + "t" + std::to_string(boxes_of(c.target));
  if (c.transfer == TransferKind::Fc) {
    if (!game2) throw ExperimentError("fc transfer is defined only for the Game2 target");
    return out + "fc_game2";
  }
  if (game2) throw ExperimentError("conv transfer to the Game2 target is not in the grammar");
  if (c.k < 1 || c.k > 3) throw ExperimentError("k must be 1, 2 or 3");
  return out + "k" + std::to_string(c.k);
}

std::span<const RegistryEntry> experiment_registry() noexcept { return kRegistry; }

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["experiment"] = c.abbreviation;
  j["source_task"] = std::string(to_string(c.source));
  j["target_task"] = std::string(to_string(c.target));
  j["k"] = c.transfer == TransferKind::Fc ? nlohmann::ordered_json("fc")
           : c.transfer == TransferKind::None ? nlohmann::ordered_json("none")
                                              : nlohmann::ordered_json(c.k);
  j["seeds"] = c.seeds;
  j["hyper_parameters"] = to_json(c.hyper);
  j["budget_steps"] = c.budget_steps;
  j["eval_interval"] = c.eval_interval;
  j["eval_mode"] = std::string(to_string(c.eval_mode));
  j["deterministic"] = c.deterministic;
  j["palette"] = std::string(to_string(c.palette));
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["levels"] = c.levels;
  j["level_seed"] = c.level_seed;
  j["train_count"] = c.train_count;
  j["test_count"] = c.test_count;
  j["test_overlap"] = c.test_overlap;
  j["source_checkpoint"] = c.source_checkpoint;
  return j;
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ExperimentError("experiment config must be a JSON object");
  const int version = j.value("schema_version", kConfigSchemaVersion);
  if (version != kConfigSchemaVersion)
    throw ExperimentError("unsupported config schema_version " + std::to_string(version));
  ExperimentConfig c = parse_experiment(j.value("experiment", std::string("scratch_t1")));

  static const std::array<std::string_view, 20> known = {
      "schema_version", "experiment",  "source_task",   "target_task",         "k",
      "seeds",          "hyper_parameters", "budget_steps", "eval_interval",   "eval_mode",
      "deterministic",  "palette",     "checkpoint_interval", "levels",        "level_seed",
      "train_count",    "test_count",  "test_overlap",  "source_checkpoint",   "workers"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ExperimentError("unknown config key '" + key + "'");

  // Identity fields must agree with the abbreviation, except the target of
  // the prediction experiment, which is allowed to differ.
  if (j.contains("source_task") && source_task_from_string(j["source_task"].get<std::string>()) != c.source)
    throw ExperimentError("source_task disagrees with experiment " + c.abbreviation);
  if (j.contains("target_task")) {
    const auto t = target_task_from_string(j["target_task"].get<std::string>());
    if (t != c.target && c.source != SourceTask::Prediction)
      throw ExperimentError("target_task disagrees with experiment " + c.abbreviation);
    c.target = t;
  }
  if (j.contains("k")) {
    const auto& k = j["k"];
    const bool ok = c.transfer == TransferKind::ConvK ? (k.is_number_integer() && k.get<int>() == c.k)
                    : c.transfer == TransferKind::Fc  ? (k.is_string() && k.get<std::string>() == "fc")
                                                      : (k.is_string() && k.get<std::string>() == "none");
    if (!ok) throw ExperimentError("k disagrees with experiment " + c.abbreviation);
  }
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("hyper_parameters")) c.hyper = hyper_from_json(j["hyper_parameters"], c.hyper);
  c.budget_steps = j.value("budget_steps", c.budget_steps);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  if (j.contains("eval_mode")) c.eval_mode = eval_mode_from_string(j["eval_mode"].get<std::string>());
  c.deterministic = j.value("deterministic", c.deterministic);
  if (j.contains("palette")) c.palette = palette_from_string(j["palette"].get<std::string>());
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.levels = j.value("levels", c.levels);
  c.level_seed = j.value("level_seed", c.level_seed);
  c.train_count = j.value("train_count", c.train_count);
  c.test_count = j.value("test_count", c.test_count);
  c.test_overlap = j.value("test_overlap", c.test_overlap);
  c.source_checkpoint = j.value("source_checkpoint", c.source_checkpoint);
  return c;
}

std::string source_run_name(const ExperimentConfig& c) {
  switch (c.source) {
    case SourceTask::OneBox: return "scratch_t1";
    case SourceTask::TwoBoxes: return "scratch_t2";
    case SourceTask::ThreeBoxes: return "scratch_t3";
    case SourceTask::Prediction: return "pretext";
    case SourceTask::None: break;
  }
  throw ExperimentError(c.abbreviation + " trains from scratch and has no source run");
}

std::string substitute_seed(std::string pattern, std::uint64_t seed) {
  const std::string key = "{seed}";
  for (auto pos = pattern.find(key); pos != std::string::npos; pos = pattern.find(key, pos))
    pattern.replace(pos, key.size(), std::to_string(seed));
  return pattern;
}

TaskLevels prepare_levels(int box_count, const ExperimentConfig& config, const std::string& root,
                          const std::string& path) {
  namespace fs = std::filesystem;
  TaskLevels out;
  LevelSet all;
  if (!path.empty()) {
    out.path = path;
    all = load_level_set(path);
  } else {
    const fs::path stem = fs::path(root) / "levels" / (std::to_string(box_count) + "b");
    out.path = stem.string() + ".txt";
    if (fs::exists(out.path)) {
      all = load_level_set(out.path);
    } else {
      fs::create_directories(stem.parent_path());
      all = generate(config.level_seed, box_count, config.train_count + config.test_count);
      save_level_set(stem.string(), all);
    }
  }
  if (all.box_count != box_count)
    throw ExperimentError(out.path + " holds " + std::to_string(all.box_count) + "-box levels, expected " +
                          std::to_string(box_count));
  auto [train, test] = split(all, config.train_count, config.test_count, config.level_seed, config.test_overlap);
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

}  // namespace sokotl
