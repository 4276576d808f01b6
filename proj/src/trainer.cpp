#include "sokotl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace sokotl {

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::jthread> pool;
  for (std::size_t k = 0; k < w; ++k) {
    pool.emplace_back([&, k] {
      for (std::size_t i = k; i < n; i += w) fn(i);
    });
  }
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

nlohmann::ordered_json to_json(const TrainHyper& h) {
  return {{"lr", h.optimizer.lr},
          {"gamma", h.gamma},
          {"entropy_coef", h.coefs.entropy},
          {"value_loss_coef", h.coefs.value},
          {"eps", h.optimizer.eps},
          {"alpha", h.optimizer.alpha},
          {"rollout", h.rollout},
          {"envs", h.envs},
          {"max_grad_norm", h.optimizer.max_grad_norm},
          {"max_episode_steps", h.max_episode_steps}};
}

TrainHyper hyper_from_json(const nlohmann::json& j, TrainHyper h) {
  h.optimizer.lr = j.value("lr", h.optimizer.lr);
  h.gamma = j.value("gamma", h.gamma);
  h.coefs.entropy = j.value("entropy_coef", h.coefs.entropy);
  h.coefs.value = j.value("value_loss_coef", h.coefs.value);
  h.optimizer.eps = j.value("eps", h.optimizer.eps);
  h.optimizer.alpha = j.value("alpha", h.optimizer.alpha);
  h.rollout = j.value("rollout", h.rollout);
  h.envs = j.value("envs", h.envs);
  h.optimizer.max_grad_norm = j.value("max_grad_norm", h.optimizer.max_grad_norm);
  h.max_episode_steps = j.value("max_episode_steps", h.max_episode_steps);
  return h;
}

// ---- VectorEnv ----

VectorEnv::VectorEnv(std::vector<Level> levels, int num_envs, std::uint64_t run_seed, Palette palette,
                     EngineConfig engine)
    : levels_(std::move(levels)), palette_(palette), engine_(engine) {
  if (levels_.empty()) throw std::invalid_argument("VectorEnv needs at least one level");
  if (num_envs < 1) throw std::invalid_argument("VectorEnv needs at least one slot");
  const auto n = static_cast<std::size_t>(num_envs);
  states_.resize(n);
  observations_.resize(n);
  serials_.assign(n, 0);
  level_of_.assign(n, 0);
  episode_rewards_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    level_rngs_.emplace_back(derive_seed(run_seed, {i, 0}));
    action_rngs_.emplace_back(derive_seed(run_seed, {i, 1}));
  }
  for (std::size_t i = 0; i < n; ++i) {
    start_episode(i);
    serials_[i] = 0;
  }
}

void VectorEnv::start_episode(std::size_t slot) {
  const auto pick = static_cast<int>(level_rngs_[slot].below(levels_.size()));
  level_of_[slot] = pick;
  states_[slot] = reset(levels_[static_cast<std::size_t>(pick)]);
  observations_[slot] = render(states_[slot], palette_);
  episode_rewards_[slot].clear();
  ++serials_[slot];
}

std::vector<VectorEnv::SlotResult> VectorEnv::step(std::span<const int> actions, int workers) {
  if (actions.size() != states_.size()) throw std::invalid_argument("one action per slot required");
  std::vector<SlotResult> results(states_.size());
  parallel_for(states_.size(), workers, [&](std::size_t i) {
    auto [next, outcome] = sokotl::step(states_[i], action_from_index(actions[i]), engine_);
    auto& r = results[i];
    r.reward = static_cast<float>(outcome.reward);
    r.done = outcome.done;
    r.solved = outcome.solved;
    episode_rewards_[i].push_back(outcome.reward);
    if (outcome.done) {
      r.episode_return = episode_return(episode_rewards_[i]);
      start_episode(i);
    } else {
      states_[i] = next;
      observations_[i] = render(next, palette_);
    }
  });
  return results;
}

// ---- rollouts ----

std::vector<float> compute_returns(std::span<const float> rewards, std::span<const std::uint8_t> dones,
                                   std::span<const float> bootstrap, int envs, int steps, float gamma) {
  const auto n = static_cast<std::size_t>(envs * steps);
  if (rewards.size() != n || dones.size() != n || bootstrap.size() != static_cast<std::size_t>(envs))
    throw std::invalid_argument("compute_returns: array sizes do not match envs x steps");
  std::vector<float> returns(n);
  for (int e = 0; e < envs; ++e) {
    float next = bootstrap[static_cast<std::size_t>(e)];
    for (int t = steps - 1; t >= 0; --t) {
      const auto i = static_cast<std::size_t>(e * steps + t);
      const float mask = dones[i] ? 0.0f : 1.0f;
      next = rewards[i] + gamma * next * mask;
      returns[i] = next;
    }
  }
  return returns;
}

RolloutBatch collect_rollout(VectorEnv& venv, const NetworkParams& params, Network<float>& net, const TrainHyper& hyper,
                             std::vector<EpisodeSummary>* finished, int workers) {
  RolloutBatch b;
  b.envs = venv.size();
  b.steps = hyper.rollout;
  const auto n = static_cast<std::size_t>(b.envs * b.steps);
  b.observations.resize(n);
  b.actions.resize(n);
  b.rewards.resize(n);
  b.dones.resize(n);
  b.values.resize(n);
  b.episode_serials.resize(n);
  b.bootstrap.resize(static_cast<std::size_t>(b.envs));

  std::vector<int> actions(static_cast<std::size_t>(b.envs));
  for (int t = 0; t < b.steps; ++t) {
    const auto obs = venv.observations();
    net.forward(params, obs);
    const auto& logits = net.head_output(0);
    const auto& values = net.head_output(1);
    for (int e = 0; e < b.envs; ++e) {
      const auto i = b.index(e, t);
      b.observations[i] = obs[static_cast<std::size_t>(e)];
      b.episode_serials[i] = venv.episode_serial(e);
      b.values[i] = values(0, e);
      std::array<float, kNumActions> l{};
      for (int a = 0; a < kNumActions; ++a) l[static_cast<std::size_t>(a)] = logits(a, e);
      actions[static_cast<std::size_t>(e)] = sample_from_logits(l, venv.action_rng(e).uniform());
      b.actions[i] = actions[static_cast<std::size_t>(e)];
    }
    const auto results = venv.step(actions, workers);
    for (int e = 0; e < b.envs; ++e) {
      const auto i = b.index(e, t);
      const auto& r = results[static_cast<std::size_t>(e)];
      b.rewards[i] = r.reward;
      b.dones[i] = r.done ? 1 : 0;
      if (r.done && finished) finished->push_back({r.episode_return, r.solved});
    }
  }

  net.forward(params, venv.observations());
  const auto& values = net.head_output(1);
  for (int e = 0; e < b.envs; ++e)
    b.bootstrap[static_cast<std::size_t>(e)] = b.dones[b.index(e, b.steps - 1)] ? 0.0f : values(0, e);
  b.returns = compute_returns(b.rewards, b.dones, b.bootstrap, b.envs, b.steps, static_cast<float>(hyper.gamma));
  return b;
}

// ---- metrics ----

std::string metrics_csv_row(const MetricsRow& r) {
  std::ostringstream out;
  out << r.env_steps << ',' << r.update_idx << ',' << fmt_double(r.solved_ratio) << ','
      << fmt_double(r.mean_episode_return) << ',' << fmt_double(r.policy_loss) << ',' << fmt_double(r.value_loss) << ','
      << fmt_double(r.entropy) << ',' << fmt_double(r.wall_clock_s);
  return out.str();
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : rows) out += metrics_csv_row(r) + '\n';
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw std::invalid_argument("not a metrics CSV (bad header)");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 8) throw std::invalid_argument("metrics row has " + std::to_string(f.size()) + " fields");
    MetricsRow r;
    r.env_steps = std::stoull(f[0]);
    r.update_idx = std::stoull(f[1]);
    auto d = [](const std::string& s) { return s == "nan" ? std::nan("") : std::stod(s); };
    r.solved_ratio = d(f[2]);
    r.mean_episode_return = d(f[3]);
    r.policy_loss = d(f[4]);
    r.value_loss = d(f[5]);
    r.entropy = d(f[6]);
    r.wall_clock_s = d(f[7]);
    rows.push_back(r);
  }
  return rows;
}

Curve solved_curve(std::span<const MetricsRow> rows) {
  Curve c;
  for (const auto& r : rows) {
    c.steps.push_back(r.env_steps);
    c.values.push_back(r.solved_ratio);
  }
  return c;
}

// ---- training loop ----

TrainResult train(const TrainConfig& config) {
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - started).count(); };

  if (config.train_levels.empty()) throw std::invalid_argument("train: no training levels");
  if (config.test_levels.empty()) throw std::invalid_argument("train: no test levels");
  if (config.eval_interval == 0) throw std::invalid_argument("train: eval interval must be positive");

  TrainResult result;
  result.params = config.initial_params ? *config.initial_params : init_params(config.seed);
  check_shapes(result.params);
  if (result.params.head != HeadKind::ActorCritic) throw ShapeError("train needs an actor-critic network");
  auto& params = result.params;

  const TrainHyper& hyper = config.hyper;
  const EngineConfig engine{hyper.max_episode_steps};
  const int workers = config.deterministic ? 1 : std::max(1, config.workers);
  RmsProp optimizer(params, hyper.optimizer);
  VectorEnv venv(config.train_levels, hyper.envs, derive_seed(config.seed, {0xE57ull}), config.palette, engine);
  Network<float> net;
  Gradients<float> grads;

  std::vector<std::string> artifacts;
  std::ofstream metrics_file;
  namespace fs = std::filesystem;
  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    metrics_file.open(fs::path(config.out_dir) / "metrics.csv", std::ios::binary);
    metrics_file << kMetricsHeader << '\n';
    artifacts.push_back("metrics.csv");
  }
  auto write_checkpoint = [&](const std::string& name) {
    if (config.out_dir.empty()) return;
    save_checkpoint((fs::path(config.out_dir) / name).string(), params, {config.source_task, result.env_steps});
    artifacts.push_back(name);
  };

  const std::uint64_t spu = hyper.steps_per_update();
  const std::uint64_t total_updates = config.budget_steps / spu;
  std::uint64_t next_mark = config.eval_interval;
  std::uint64_t next_checkpoint = config.checkpoint_interval;
  double sum_pl = 0, sum_vl = 0, sum_ent = 0, sum_ret = 0;
  std::uint64_t n_updates_since = 0, n_eps_since = 0;
  std::vector<EpisodeSummary> finished;

  for (std::uint64_t u = 0; u < total_updates; ++u) {
    finished.clear();
    const auto batch = collect_rollout(venv, params, net, hyper, &finished, workers);
    LossStats st;
    try {
      st = a2c_loss_and_grads(net, params, batch.policy_batch(), hyper.coefs, &grads);
    } catch (const NonFiniteLoss& e) {
      result.failed = true;
      result.error = e.what();
      break;
    }
    optimizer.step(params, grads);
    ++result.updates;
    result.env_steps += spu;

    sum_pl += st.policy_loss;
    sum_vl += st.value_loss;
    sum_ent += st.entropy;
    ++n_updates_since;
    for (const auto& f : finished) sum_ret += f.episode_return;
    n_eps_since += finished.size();

    if (config.checkpoint_interval && result.env_steps >= next_checkpoint) {
      write_checkpoint("checkpoint_" + std::to_string(result.env_steps) + ".bin");
      next_checkpoint = (result.env_steps / config.checkpoint_interval + 1) * config.checkpoint_interval;
    }

    if (result.env_steps >= next_mark) {
      const std::uint64_t mark = result.env_steps / config.eval_interval * config.eval_interval;
      const auto point = evaluate(params, config.test_levels, derive_seed(config.seed, {0xE7A1ull, mark}),
                                  config.eval_mode, config.palette, engine);
      MetricsRow row;
      row.env_steps = mark;
      row.update_idx = result.updates;
      row.solved_ratio = point.solved_ratio;
      row.mean_episode_return = n_eps_since ? sum_ret / static_cast<double>(n_eps_since) : std::nan("");
      row.policy_loss = sum_pl / static_cast<double>(n_updates_since);
      row.value_loss = sum_vl / static_cast<double>(n_updates_since);
      row.entropy = sum_ent / static_cast<double>(n_updates_since);
      row.wall_clock_s = config.deterministic ? 0.0 : elapsed();
      result.metrics.push_back(row);
      if (metrics_file) metrics_file << metrics_csv_row(row) << '\n' << std::flush;
      sum_pl = sum_vl = sum_ent = sum_ret = 0;
      n_updates_since = n_eps_since = 0;
      next_mark = mark + config.eval_interval;
      if (config.on_eval) config.on_eval(row);
      if (config.stop_when && config.stop_when(row)) break;
    }
  }
  if (!result.failed) write_checkpoint("checkpoint_final.bin");

  auto& m = result.manifest;
  m["experiment"] = config.experiment;
  m["source_task"] = config.source_task;
  m["status"] = result.failed ? "failed" : "ok";
  if (result.failed) m["error"] = result.error;
  m["seed"] = config.seed;
  m["hyper_parameters"] = to_json(hyper);
  m["budget_steps"] = config.budget_steps;
  m["env_steps"] = result.env_steps;
  m["updates"] = result.updates;
  m["eval_interval"] = config.eval_interval;
  m["eval_mode"] = std::string(to_string(config.eval_mode));
  m["palette"] = std::string(to_string(config.palette));
  m["mode"] = config.deterministic ? "deterministic" : "performance (not bit-reproducible)";
  m["level_sets"] = config.level_manifests;
  m["choices"] = {{"init", "fan-in uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in))"},
                  {"optimizer", "RMSProp, uncentred, no momentum"},
                  {"padding", "valid"},
                  {"observation", "84x84x3, 8 px per cell, 2 px wall padding"},
                  {"eval_step_cap", hyper.max_episode_steps},
                  {"level_sampling", "uniform with replacement"}};
  m["versions"] = {{"code", "0.1.0"}, {"checkpoint_format", std::string(kCheckpointMagic)}, {"metrics_format", 1}};
  m["wall_clock_s"] = elapsed();
  m["artifacts"] = artifacts;
  if (!config.out_dir.empty()) {
    auto with_self = m;
    with_self["artifacts"].push_back("manifest.json");
    std::ofstream(fs::path(config.out_dir) / "manifest.json") << with_self.dump(2) << '\n';
    m = with_self;
  }
  return result;
}

}  // namespace sokotl
