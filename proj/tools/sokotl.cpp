// sokotl: command line entry point for level generation, training, transfer
// and analysis.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sokotl/engine.hpp"
#include "sokotl/evalharness.hpp"
#include "sokotl/experiment.hpp"
#include "sokotl/levelgen.hpp"
#include "sokotl/network.hpp"
#include "sokotl/planner.hpp"
#include "sokotl/trainer.hpp"
#include "sokotl/transfer.hpp"
#include "sokotl/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace sokotl;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string default_root() {
  const char* env = std::getenv("SOKOTL_OUT");
  return env && *env ? env : "runs";
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Collects the files a command writes and emits manifest.json next to them.
class RunRecord {
 public:
  RunRecord(std::string command, fs::path dir) : dir_(std::move(dir)) {
    manifest_["command"] = std::move(command);
    manifest_["versions"] = {{"code", kVersion}, {"checkpoint_format", std::string(kCheckpointMagic)}};
  }

  const fs::path& dir() const { return dir_; }
  ordered_json& manifest() { return manifest_; }

  fs::path file(const std::string& relative) {
    artifacts_.push_back(relative);
    return dir_ / relative;
  }

  void write_file(const std::string& relative, const std::string& text) { write_text(file(relative), text); }

  void finish(bool ok = true) {
    manifest_["status"] = ok ? "ok" : "failed";
    auto list = artifacts_;
    list.push_back("manifest.json");
    manifest_["artifacts"] = list;
    write_text(dir_ / "manifest.json", manifest_.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  ordered_json manifest_;
  std::vector<std::string> artifacts_;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  if (text.find(',') == std::string::npos) {
    const auto n = std::stoull(text);
    for (std::uint64_t s = 0; s < n; ++s) seeds.push_back(s);
    return seeds;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) seeds.push_back(std::stoull(item));
  return seeds;
}

ordered_json level_manifest(const LevelSet& set, const std::string& path) {
  auto j = ordered_json::parse(manifest_json(set));
  j["path"] = path;
  return j;
}

// ---- options shared by the experiment commands ----

struct ExperimentFlags {
  std::string experiment;
  std::string config_path;
  std::string seeds;
  std::uint64_t budget_steps = 0;
  std::optional<bool> deterministic;
  std::string levels;
  std::string out;
  std::string palette;
  std::string eval_mode;
  std::string source_checkpoint;
  std::uint64_t checkpoint_interval = 0;
  int workers = 1;

  void attach(CLI::App* app) {
    app->add_option("--experiment", experiment, "Experiment abbreviation, e.g. s1t2k2 or scratch_t1");
    app->add_option("--config", config_path, "JSON experiment config; flags override its fields");
    app->add_option("--seeds", seeds, "Seed count N (runs 0..N-1) or a comma list");
    app->add_option("--budget-steps", budget_steps, "Environment steps per run");
    app->add_flag("--deterministic,!--performance", deterministic,
                  "Bit-reproducible sequential mode (default) or threaded performance mode");
    app->add_option("--levels", levels, "Level file for the target task");
    app->add_option("--out", out, "Output root (default $SOKOTL_OUT or ./runs)");
    app->add_option("--palette", palette, "base or game2");
    app->add_option("--eval-mode", eval_mode, "sample or argmax");
    app->add_option("--source-checkpoint", source_checkpoint, "Transfer source; {seed} expands to the run seed");
    app->add_option("--checkpoint-interval", checkpoint_interval, "Env steps between checkpoints (0: final only)");
    app->add_option("--workers", workers, "Env stepping threads in performance mode");
  }

  ExperimentConfig resolve() const {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) j = nlohmann::json::parse(read_text(config_path));
    if (!experiment.empty()) {
      if (j.contains("experiment") && j["experiment"] != experiment) {
        // A different abbreviation on the command line replaces the identity fields.
        j.erase("source_task");
        j.erase("target_task");
        j.erase("k");
      }
      j["experiment"] = experiment;
    }
    j.erase("workers");
    ExperimentConfig c = experiment_from_json(j);
    if (!seeds.empty()) c.seeds = parse_seeds(seeds);
    if (budget_steps) c.budget_steps = budget_steps;
    if (deterministic) c.deterministic = *deterministic;
    if (!levels.empty()) c.levels = levels;
    if (!palette.empty()) c.palette = palette_from_string(palette);
    if (!eval_mode.empty()) c.eval_mode = eval_mode_from_string(eval_mode);
    if (!source_checkpoint.empty()) c.source_checkpoint = source_checkpoint;
    if (checkpoint_interval) c.checkpoint_interval = checkpoint_interval;
    return c;
  }

  std::string root() const { return out.empty() ? default_root() : out; }
};

std::string source_checkpoint_for(const ExperimentConfig& c, std::uint64_t seed, const std::string& root) {
  if (!c.source_checkpoint.empty()) return substitute_seed(c.source_checkpoint, seed);
  if (c.source == SourceTask::Prediction) return (fs::path(root) / "pretext" / "locator.bin").string();
  return (fs::path(root) / source_run_name(c) / ("seed_" + std::to_string(seed)) / "checkpoint_final.bin").string();
}

int run_experiment(const ExperimentFlags& flags, bool require_transfer) {
  const ExperimentConfig c = flags.resolve();
  if (require_transfer && c.transfer == TransferKind::None)
    throw ExperimentError(c.abbreviation + " is a from-scratch experiment; use train");
  const std::string root = flags.root();
  const auto levels = prepare_levels(c.target_boxes(), c, root, c.levels);

  RunRecord summary("train", fs::path(root) / c.abbreviation);
  summary.manifest()["experiment"] = c.abbreviation;
  summary.manifest()["config"] = to_json(c);
  summary.manifest()["level_set"] = level_manifest(levels.train, levels.path);

  std::vector<Curve> curves;
  ordered_json runs = ordered_json::array();
  bool all_ok = true;
  for (std::uint64_t seed : c.seeds) {
    const std::string run_dir = (fs::path(root) / c.abbreviation / ("seed_" + std::to_string(seed))).string();
    TrainConfig tc;
    tc.experiment = c.abbreviation;
    tc.source_task = std::string(to_string(c.source));
    tc.train_levels = levels.train.levels;
    tc.test_levels = levels.test.levels;
    tc.level_manifests = {{"train", level_manifest(levels.train, levels.path)},
                          {"test", level_manifest(levels.test, levels.path)}};
    tc.palette = c.palette;
    tc.hyper = c.hyper;
    tc.seed = seed;
    tc.budget_steps = c.budget_steps;
    tc.eval_interval = c.eval_interval;
    tc.eval_mode = c.eval_mode;
    tc.deterministic = c.deterministic;
    tc.workers = flags.workers;
    tc.out_dir = run_dir;
    tc.checkpoint_interval = c.checkpoint_interval;
    std::string source_path;
    if (c.transfer != TransferKind::None) {
      const auto spec = c.transfer_spec(seed, source_checkpoint_for(c, seed, root));
      source_path = spec->source_checkpoint;
      if (!fs::exists(source_path))
        throw std::runtime_error("source checkpoint " + source_path + " not found; train " + source_run_name(c) +
                                 " first or pass --source-checkpoint");
      tc.initial_params = apply_transfer(*spec);
    }
    tc.on_eval = [&](const MetricsRow& row) {
      std::cerr << c.abbreviation << " seed " << seed << " step " << row.env_steps << " solved "
                << row.solved_ratio << '\n';
    };
    auto result = train(tc);
    // Archive the effective config in each run's manifest as well.
    result.manifest["config"] = to_json(c);
    if (!source_path.empty()) result.manifest["source_checkpoint"] = source_path;
    write_text(fs::path(run_dir) / "manifest.json", result.manifest.dump(2) + "\n");
    runs.push_back({{"seed", seed}, {"dir", run_dir}, {"status", result.failed ? "failed" : "ok"}});
    if (result.failed) {
      all_ok = false;
      std::cerr << "run failed: " << result.error << '\n';
      continue;
    }
    curves.push_back(solved_curve(result.metrics));
  }
  summary.manifest()["runs"] = runs;
  if (curves.size() >= 2) {
    const auto agg = aggregate(curves);
    summary.write_file("aggregate.csv", aggregate_csv(agg));
    const std::vector<NamedCurve> named = {{c.abbreviation, agg}};
    summary.write_file("solved_ratio.svg", plot_svg(named, c.abbreviation));
  }
  summary.finish(all_ok);
  return all_ok ? 0 : 1;
}

// ---- other commands ----

int cmd_gen_levels(int boxes, int count, std::uint64_t seed, const std::string& out, const GenConstraints& gc) {
  const auto set = generate(seed, boxes, count, gc);
  const fs::path stem = out.empty() ? fs::path(default_root()) / "levels" / (std::to_string(boxes) + "b") : fs::path(out);
  const fs::path dir = stem.has_parent_path() ? stem.parent_path() : fs::path(".");
  fs::create_directories(dir);
  save_level_set(stem.string(), set);
  RunRecord rec("gen-levels", dir);
  rec.file(stem.filename().string() + ".txt");
  rec.file(stem.filename().string() + ".json");
  rec.manifest()["level_set"] = ordered_json::parse(manifest_json(set));
  rec.finish();
  std::cout << "wrote " << set.size() << " levels to " << stem.string() << ".txt\n";
  return 0;
}

int cmd_solve(const std::string& levels_path, const std::string& out, std::size_t budget) {
  const auto levels = load_levels(levels_path);
  ordered_json rows = ordered_json::array();
  Planner planner;
  bool all = true;
  for (const auto& level : levels) {
    const auto r = planner.solve(level, budget);
    ordered_json row = {{"id", level.id}, {"status", std::string(to_string(r.status))}, {"states", r.states_seen}};
    if (r.status == SolveStatus::Solved) {
      row["length"] = r.plan.length();
      row["plan"] = plan_to_string(r.plan);
    } else {
      all = false;
    }
    std::cout << level.id << ' ' << to_string(r.status);
    if (r.status == SolveStatus::Solved) std::cout << ' ' << r.plan.length() << ' ' << plan_to_string(r.plan);
    std::cout << '\n';
    rows.push_back(row);
  }
  if (!out.empty()) {
    RunRecord rec("solve", out);
    rec.manifest()["levels"] = levels_path;
    rec.write_file("solutions.json", rows.dump(2) + "\n");
    rec.finish();
  }
  return all ? 0 : 1;
}

int cmd_stats(const std::vector<std::string>& paths, const std::string& out, std::size_t budget) {
  RunRecord rec("stats", out.empty() ? fs::path(default_root()) / "stats" : fs::path(out));
  ordered_json all = ordered_json::object();
  for (const auto& p : paths) {
    const auto set = load_level_set(p);
    const auto stats = length_histogram(set.levels, budget);
    const std::string name = fs::path(p).stem().string();
    rec.write_file(name + "_lengths.csv", histogram_csv(stats));
    rec.write_file(name + "_stats.json", stats_json(stats) + "\n");
    all[name] = ordered_json::parse(stats_json(stats));
    std::cout << name << ": " << stats_json(stats) << '\n';
  }
  rec.manifest()["stats"] = all;
  rec.finish();
  return 0;
}

int cmd_pretrain(const ExperimentFlags& flags, int samples, int held_out, int epochs, int walk_length, double target) {
  ExperimentConfig c = flags.resolve();
  const std::string root = flags.root();
  const auto levels = prepare_levels(1, c, root, c.levels);
  const std::uint64_t seed = c.seeds.empty() ? 0 : c.seeds.front();
  RunRecord rec("pretrain-sl", fs::path(root) / "pretext");
  fs::create_directories(rec.dir());

  const auto train_set =
      make_pretext_dataset(levels.train.levels, samples, derive_seed(seed, {1}), walk_length, c.palette, levels.path);
  const auto eval_set =
      make_pretext_dataset(levels.test.levels, held_out, derive_seed(seed, {2}), walk_length, c.palette, levels.path);
  save_pretext_dataset(rec.file("train.bin").string(), train_set);
  rec.file("train.bin.json");

  LocatorConfig lc;
  lc.epochs = epochs;
  lc.seed = seed;
  lc.optimizer = c.hyper.optimizer;
  lc.target_accuracy = target;
  std::ostringstream csv;
  csv << "epoch,loss,held_out_accuracy\n";
  lc.on_epoch = [&](int epoch, double loss, double acc) {
    csv << epoch << ',' << loss << ',' << acc << '\n';
    std::cerr << "epoch " << epoch << " loss " << loss << " held-out accuracy " << acc << '\n';
  };
  const double chance = locator_accuracy(init_params(seed, HeadKind::Locator), eval_set.samples);
  const auto result = pretrain_locator(train_set.samples, eval_set.samples, lc);
  save_checkpoint(rec.file("locator.bin").string(), result.params, {"prediction", 0});
  rec.write_file("epochs.csv", csv.str());
  auto& m = rec.manifest();
  m["seed"] = seed;
  m["samples"] = samples;
  m["held_out"] = held_out;
  m["walk_length"] = walk_length;
  m["untrained_accuracy"] = chance;
  m["final_accuracy"] = result.held_out_accuracy.empty() ? 0.0 : result.held_out_accuracy.back();
  m["epochs_run"] = result.epochs_run;
  m["level_set"] = level_manifest(levels.train, levels.path);
  m["hyper_parameters"] = to_json(c.hyper);
  rec.finish();
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& levels_path, std::uint64_t eval_seed,
             const std::string& mode, const std::string& palette, const std::string& out) {
  const auto params = load_checkpoint(checkpoint);
  const auto levels = load_levels(levels_path);
  const auto point = evaluate(params, levels, eval_seed, eval_mode_from_string(mode), palette_from_string(palette));
  ordered_json j = {{"checkpoint", checkpoint}, {"levels", levels_path},     {"eval_seed", eval_seed},
                    {"eval_mode", mode},        {"solved", point.solved},     {"episodes", point.episodes},
                    {"solved_ratio", point.solved_ratio}};
  std::cout << j.dump() << '\n';
  if (!out.empty()) {
    RunRecord rec("eval", out);
    rec.write_file("eval.json", j.dump(2) + "\n");
    rec.finish();
  }
  return 0;
}

int cmd_aggregate(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<Curve> curves;
  for (const auto& p : inputs) curves.push_back(solved_curve(parse_metrics_csv(read_text(p))));
  const auto agg = aggregate(curves);
  const fs::path path = out.empty() ? fs::path("aggregate.csv") : fs::path(out);
  RunRecord rec("aggregate", path.has_parent_path() ? path.parent_path() : fs::path("."));
  rec.write_file(path.filename().string(), aggregate_csv(agg));
  rec.manifest()["inputs"] = inputs;
  rec.finish();
  return 0;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out, const std::string& title) {
  std::vector<NamedCurve> curves;
  for (const auto& spec : inputs) {
    const auto eq = spec.find('=');
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    const std::string name = eq == std::string::npos ? fs::path(spec).parent_path().filename().string() : spec.substr(0, eq);
    curves.push_back({name, parse_aggregate_csv(read_text(path))});
  }
  const fs::path path = out.empty() ? fs::path("plot.svg") : fs::path(out);
  RunRecord rec("plot", path.has_parent_path() ? path.parent_path() : fs::path("."));
  rec.write_file(path.filename().string(), plot_svg(curves, title));
  rec.manifest()["inputs"] = inputs;
  rec.finish();
  return 0;
}

int cmd_dump_features(const std::string& checkpoint, const std::string& levels_path, int level_index, int layer,
                      const std::string& palette, const std::string& out) {
  const auto params = load_checkpoint(checkpoint);
  const auto levels = load_levels(levels_path);
  if (level_index < 0 || level_index >= static_cast<int>(levels.size()))
    throw std::out_of_range("level index " + std::to_string(level_index) + " outside the level file");
  const auto& level = levels[static_cast<std::size_t>(level_index)];
  const auto obs = render(reset(level), palette_from_string(palette));
  RunRecord rec("dump-features", out.empty() ? fs::path(default_root()) / "features" : fs::path(out));
  ordered_json index = ordered_json::array();
  for (const auto& d : dump_feature_maps(params, obs, layer, level.id)) {
    const std::string name = "conv" + std::to_string(layer) + "_ch" + std::to_string(d.channel) + ".pgm";
    rec.write_file(name, feature_map_pgm(d));
    index.push_back({{"file", name}, {"layer", d.layer}, {"channel", d.channel}, {"observation", d.observation_id},
                     {"size", d.size}});
  }
  rec.write_file("index.json", index.dump(2) + "\n");
  rec.manifest()["checkpoint"] = checkpoint;
  rec.manifest()["level"] = level.id;
  rec.finish();
  return 0;
}

int cmd_verify(bool quick, const std::string& out) {
  verify::SuiteOptions o;
  o.quick = quick;
  const auto results = verify::run_suite(o);
  bool all = true;
  ordered_json rows = ordered_json::array();
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    all = all && r.passed;
    rows.push_back({{"check", r.name}, {"passed", r.passed}, {"detail", r.detail}});
  }
  RunRecord rec("verify", out.empty() ? fs::path(default_root()) / "verify" : fs::path(out));
  rec.write_file("verify.json", rows.dump(2) + "\n");
  rec.finish(all);
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sokoban transfer-learning laboratory"};
  app.require_subcommand(1);
  std::string command;

  auto* gen = app.add_subcommand("gen-levels", "Generate a solvable level set");
  int boxes = 1, count = 120;
  std::uint64_t seed = 0;
  std::string out;
  GenConstraints gc;
  gen->add_option("--boxes", boxes, "Boxes per level (1-3)")->required();
  gen->add_option("--count", count, "Number of levels");
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--out", out, "Output stem (writes <stem>.txt and <stem>.json)");
  gen->add_option("--wall-density", gc.wall_density);
  gen->add_option("--min-len", gc.min_len);
  gen->add_option("--max-len", gc.max_len);
  gen->add_option("--workers", gc.workers);

  auto* solve = app.add_subcommand("solve", "Solve levels optimally");
  std::string levels_path;
  std::size_t budget = kDefaultNodeBudget;
  solve->add_option("--levels", levels_path)->required();
  solve->add_option("--out", out);
  solve->add_option("--budget", budget, "Node budget per level");

  auto* stats = app.add_subcommand("stats", "Optimal-length histograms of level files");
  std::vector<std::string> inputs;
  stats->add_option("--levels", inputs)->required();
  stats->add_option("--out", out);
  stats->add_option("--budget", budget);

  ExperimentFlags train_flags, transfer_flags, pretrain_flags;
  auto* train_cmd = app.add_subcommand("train", "Train an experiment (scratch or transfer) over seeds");
  train_flags.attach(train_cmd);
  auto* transfer_cmd = app.add_subcommand("transfer-train", "Train a transfer experiment over seeds");
  transfer_flags.attach(transfer_cmd);

  auto* pretrain = app.add_subcommand("pretrain-sl", "Train the agent-location pretext model");
  pretrain_flags.attach(pretrain);
  int samples = 10000, held_out = 2000, epochs = 20, walk = 20;
  double target = 0.0;
  pretrain->add_option("--samples", samples);
  pretrain->add_option("--held-out", held_out);
  pretrain->add_option("--epochs", epochs);
  pretrain->add_option("--walk-length", walk);
  pretrain->add_option("--target-accuracy", target, "Stop after the first epoch reaching this accuracy");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a level file");
  std::string checkpoint, mode = "sample", palette = "base";
  std::uint64_t eval_seed = 0;
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--levels", levels_path)->required();
  eval->add_option("--eval-seed", eval_seed);
  eval->add_option("--eval-mode", mode);
  eval->add_option("--palette", palette);
  eval->add_option("--out", out);

  auto* agg = app.add_subcommand("aggregate", "Mean and 95% CI over per-seed metrics CSVs");
  agg->add_option("--inputs", inputs)->required();
  agg->add_option("--out", out);

  auto* plot = app.add_subcommand("plot", "SVG plot of aggregate curves (name=path.csv)");
  std::string title;
  plot->add_option("--inputs", inputs)->required();
  plot->add_option("--out", out);
  plot->add_option("--title", title);

  auto* dump = app.add_subcommand("dump-features", "Export conv feature maps as PGM images");
  int level_index = 0, layer = 1;
  dump->add_option("--checkpoint", checkpoint)->required();
  dump->add_option("--levels", levels_path)->required();
  dump->add_option("--level-index", level_index);
  dump->add_option("--layer", layer);
  dump->add_option("--palette", palette);
  dump->add_option("--out", out);

  auto* ver = app.add_subcommand("verify", "Run the invariant suite");
  bool quick = false;
  ver->add_flag("--quick", quick, "Smaller sample sizes");
  ver->add_option("--out", out);

  CLI11_PARSE(app, argc, argv);
  const auto* sub = app.get_subcommands().front();
  command = sub->get_name();

  try {
    if (sub == gen) return cmd_gen_levels(boxes, count, seed, out, gc);
    if (sub == solve) return cmd_solve(levels_path, out, budget);
    if (sub == stats) return cmd_stats(inputs, out, budget);
    if (sub == train_cmd) return run_experiment(train_flags, false);
    if (sub == transfer_cmd) return run_experiment(transfer_flags, true);
    if (sub == pretrain) return cmd_pretrain(pretrain_flags, samples, held_out, epochs, walk, target);
    if (sub == eval) return cmd_eval(checkpoint, levels_path, eval_seed, mode, palette, out);
    if (sub == agg) return cmd_aggregate(inputs, out);
    if (sub == plot) return cmd_plot(inputs, out, title);
    if (sub == dump) return cmd_dump_features(checkpoint, levels_path, level_index, layer, palette, out);
    if (sub == ver) return cmd_verify(quick, out);
  } catch (const std::exception& e) {
    const ordered_json record = {{"status", "error"}, {"command", command}, {"error", e.what()}};
    std::cerr << record.dump() << '\n';
    return 2;
  }
  return 1;
}
