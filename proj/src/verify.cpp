#include "sokotl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "sokotl/experiment.hpp"
#include "sokotl/levelgen.hpp"
#include "sokotl/planner.hpp"
#include "sokotl/rng.hpp"
#include "sokotl/trainer.hpp"
#include "sokotl/transfer.hpp"

namespace sokotl::verify {

namespace {

std::uint64_t state_key(const GameState& s) {
  std::vector<int> boxes(s.boxes.begin(), s.boxes.end());
  std::sort(boxes.begin(), boxes.end());
  std::uint64_t key = static_cast<std::uint64_t>(s.player);
  for (int b : boxes) key = key * 128 + static_cast<std::uint64_t>(b);
  return key * 4 + boxes.size();
}

bool is_target(const Grid& g, int cell) { return g[static_cast<std::size_t>(cell)] == Tile::Target; }

std::string fmt(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

}  // namespace

std::optional<int> brute_force_length(const Level& level, std::size_t state_limit) {
  const EngineConfig unlimited{1 << 30};
  const GameState start = reset(level);
  if (start.solved()) return 0;
  std::unordered_map<std::uint64_t, int> depth;
  std::deque<GameState> frontier;
  depth.emplace(state_key(start), 0);
  frontier.push_back(start);
  while (!frontier.empty()) {
    const GameState s = frontier.front();
    frontier.pop_front();
    const int d = depth.at(state_key(s));
    for (Action a : kAllActions) {
      auto [next, outcome] = step(s, a, unlimited);
      if (outcome.solved) return d + 1;
      if (depth.emplace(state_key(next), d + 1).second) {
        if (depth.size() > state_limit) throw std::runtime_error("brute-force search exceeded its state limit");
        frontier.push_back(next);
      }
    }
  }
  return std::nullopt;
}

RewardEvents count_events(const GameState& before, const GameState& after) {
  RewardEvents e;
  e.steps = 1;
  for (int b : before.boxes)
    if (!after.boxes.contains(b) && is_target(before.grid, b)) ++e.pushes_off;
  for (int b : after.boxes)
    if (!before.boxes.contains(b) && is_target(after.grid, b)) ++e.pushes_on;
  int on = 0;
  for (int b : after.boxes) on += is_target(after.grid, b) ? 1 : 0;
  e.solved = on == after.boxes.size();
  return e;
}

long long expected_tenths(const RewardEvents& e) noexcept {
  return 100LL * (e.solved ? 1 : 0) + 10LL * e.pushes_on - 10LL * e.pushes_off - e.steps;
}

DecompositionCheck check_reward_decomposition(const Level& level, std::span<const Action> actions,
                                              const EngineConfig& engine) {
  DecompositionCheck out;
  GameState s = reset(level);
  RewardEvents total;
  for (Action a : actions) {
    auto [next, outcome] = step(s, a, engine);
    const auto e = count_events(s, next);
    total.steps += e.steps;
    total.pushes_on += e.pushes_on;
    total.pushes_off += e.pushes_off;
    total.solved = e.solved;
    out.engine_tenths += std::llround(outcome.reward * 10.0);
    ++out.steps_played;
    s = next;
    if (outcome.done) break;
  }
  out.oracle_tenths = expected_tenths(total);
  return out;
}

std::vector<float> reference_returns(std::span<const float> rewards, std::span<const std::uint8_t> dones,
                                     std::span<const float> bootstrap, int envs, int steps, float gamma) {
  std::vector<float> out(rewards.size());
  for (int e = 0; e < envs; ++e) {
    for (int t = 0; t < steps; ++t) {
      int end = t;
      while (end < steps - 1 && !dones[static_cast<std::size_t>(e * steps + end)]) ++end;
      const bool terminal = dones[static_cast<std::size_t>(e * steps + end)] != 0;
      float acc = terminal ? 0.0f : bootstrap[static_cast<std::size_t>(e)];
      for (int j = end; j >= t; --j) acc = rewards[static_cast<std::size_t>(e * steps + j)] + gamma * acc;
      out[static_cast<std::size_t>(e * steps + t)] = acc;
    }
  }
  return out;
}

ReferenceOutput reference_forward(const BasicParams<double>& params, const Observation& obs) {
  ReferenceOutput out;
  int size = kObsSize;
  int channels = kObsChannels;
  std::vector<double> in(static_cast<std::size_t>(channels * size * size));
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        in[static_cast<std::size_t>((c * size + y) * size + x)] = obs.at(y, x, c) / 255.0;

  for (int l = 0; l < 3; ++l) {
    const auto& s = kConvShapes[static_cast<std::size_t>(l)];
    const auto& layer = params.layers[static_cast<std::size_t>(l)];
    std::vector<double> next(static_cast<std::size_t>(s.out_channels * s.out_size * s.out_size));
    for (int o = 0; o < s.out_channels; ++o)
      for (int oy = 0; oy < s.out_size; ++oy)
        for (int ox = 0; ox < s.out_size; ++ox) {
          double acc = layer.bias[static_cast<std::size_t>(o)];
          for (int c = 0; c < s.in_channels; ++c)
            for (int ky = 0; ky < s.kernel; ++ky)
              for (int kx = 0; kx < s.kernel; ++kx) {
                const double w =
                    layer.weight[static_cast<std::size_t>(((o * s.in_channels + c) * s.kernel + ky) * s.kernel + kx)];
                const int y = oy * s.stride + ky;
                const int x = ox * s.stride + kx;
                acc += w * in[static_cast<std::size_t>((c * s.in_size + y) * s.in_size + x)];
              }
          next[static_cast<std::size_t>((o * s.out_size + oy) * s.out_size + ox)] = std::max(acc, 0.0);
        }
    in = std::move(next);
    if (l == 0) out.conv1 = in;
  }

  // `in` is now 64 x 7 x 7 in channel-major order, which is the flatten order.
  auto dense = [](const Layer<double>& L, const std::vector<double>& x, bool relu) {
    const int rows = L.weight_shape[0];
    const int cols = L.weight_shape[1];
    std::vector<double> y(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      double acc = L.bias[static_cast<std::size_t>(r)];
      for (int c = 0; c < cols; ++c) acc += L.weight[static_cast<std::size_t>(r * cols + c)] * x[static_cast<std::size_t>(c)];
      y[static_cast<std::size_t>(r)] = relu ? std::max(acc, 0.0) : acc;
    }
    return y;
  };
  const auto hidden = dense(params.layers[kFc], in, true);
  for (std::size_t h = kFc + 1; h < params.layers.size(); ++h) out.heads.push_back(dense(params.layers[h], hidden, false));
  return out;
}

std::vector<GameState> random_states(int count, std::uint64_t seed, std::span<const int> box_counts, int walk_length) {
  std::vector<GameState> out;
  Rng rng(derive_seed(seed, {0x57A7Eull}));
  std::size_t candidate = 0;
  while (static_cast<int>(out.size()) < count) {
    const int n = box_counts[out.size() % box_counts.size()];
    Level level = make_candidate(seed, n, candidate++, 0.15);
    if (level.boxes.empty() || check_level(level)) continue;
    GameState s = reset(level);
    for (int t = 0; t < walk_length; ++t) {
      auto [next, outcome] = step(s, action_from_index(static_cast<int>(rng.below(kNumActions))));
      if (outcome.done) break;
      s = next;
    }
    out.push_back(s);
  }
  return out;
}

namespace {

template <typename LossFn>
std::vector<LayerGradError> finite_difference(BasicParams<double>& params, Network<double>& net,
                                              const Gradients<double>& grads, const GradCheckOptions& options,
                                              LossFn&& loss) {
  const auto base_pattern = [&] {
    loss();
    return net.relu_pattern();
  }();
  Rng rng(derive_seed(options.seed, {0x6CAull}));
  std::vector<LayerGradError> out;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    LayerGradError err;
    err.layer = layer.name;
    for (int which = 0; which < 2; ++which) {
      auto& values = which == 0 ? layer.weight : layer.bias;
      const auto& analytic = which == 0 ? grads.layers[l].weight : grads.layers[l].bias;
      for (int s = 0; s < options.samples_per_array; ++s) {
        const std::size_t i = rng.below(values.size());
        const double saved = values[i];
        double h = options.step;
        bool done = false;
        for (int attempt = 0; attempt < 4 && !done; ++attempt, h *= 0.1) {
          values[i] = saved + h;
          const double up = loss();
          const bool up_ok = net.relu_pattern() == base_pattern;
          values[i] = saved - h;
          const double down = loss();
          const bool down_ok = net.relu_pattern() == base_pattern;
          values[i] = saved;
          if (!up_ok || !down_ok) continue;
          const double numeric = (up - down) / (2 * h);
          const double a = analytic[i];
          const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
          err.max_rel_error = std::max(err.max_rel_error, std::abs(a - numeric) / denom);
          ++err.checked;
          done = true;
        }
        if (!done) ++err.skipped_kinks;
      }
    }
    out.push_back(err);
  }
  return out;
}

std::vector<Observation> render_all(std::span<const GameState> states) {
  std::vector<Observation> obs;
  for (const auto& s : states) obs.push_back(render(s, Palette::Base));
  return obs;
}

}  // namespace

std::vector<LayerGradError> gradient_check(const GradCheckOptions& options) {
  const std::array<int, 3> counts = {1, 2, 3};
  const auto states = random_states(options.batch, options.seed, counts);
  const auto obs = render_all(states);
  Rng rng(derive_seed(options.seed, {0xAC7ull}));
  std::vector<int> actions;
  std::vector<float> returns;
  for (int i = 0; i < options.batch; ++i) {
    actions.push_back(static_cast<int>(rng.below(kNumActions)));
    returns.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
  }
  auto params = init_params(options.seed).cast<double>();
  Network<double> net;
  net.forward(params, obs);
  std::vector<double> advantages;
  for (int i = 0; i < options.batch; ++i) advantages.push_back(returns[static_cast<std::size_t>(i)] - net.head_output(1)(0, i));

  const PolicyBatch batch{obs, actions, returns};
  Gradients<double> grads;
  a2c_loss_and_grads<double>(net, params, batch, LossCoefs{}, &grads, advantages);
  return finite_difference(params, net, grads, options, [&] {
    return a2c_loss_and_grads<double>(net, params, batch, LossCoefs{}, nullptr, advantages).loss;
  });
}

std::vector<LayerGradError> locator_gradient_check(const GradCheckOptions& options) {
  const std::array<int, 3> counts = {1, 2, 3};
  const auto states = random_states(options.batch, options.seed, counts);
  const auto obs = render_all(states);
  std::vector<int> labels;
  for (const auto& s : states) labels.push_back(s.player);
  auto params = init_params(options.seed, HeadKind::Locator).cast<double>();
  Network<double> net;
  Gradients<double> grads;
  locator_loss_and_grads<double>(net, params, obs, labels, &grads);
  return finite_difference(params, net, grads, options,
                           [&] { return locator_loss_and_grads<double>(net, params, obs, labels, nullptr); });
}

// ---- suite ----

namespace {

CheckResult check_reward_suite(const SuiteOptions& o) {
  const int sequences = o.quick ? 300 : 2000;
  Rng rng(derive_seed(o.seed, {0xDEC0ull}));
  std::size_t candidate = 0;
  for (int i = 0; i < sequences; ++i) {
    Level level;
    do {
      level = make_candidate(o.seed, 1 + i % 3, candidate++, 0.15);
    } while (level.boxes.empty() || check_level(level));
    std::vector<Action> actions(1 + rng.below(150));
    for (auto& a : actions) a = action_from_index(static_cast<int>(rng.below(kNumActions)));
    const auto c = check_reward_decomposition(level, actions);
    if (!c.ok())
      return {"reward decomposition", false,
              level.id + ": engine " + std::to_string(c.engine_tenths) + " vs oracle " + std::to_string(c.oracle_tenths)};
  }
  return {"reward decomposition", true, std::to_string(sequences) + " sequences"};
}

CheckResult check_returns_suite(const SuiteOptions& o) {
  Rng rng(derive_seed(o.seed, {0x3E7ull}));
  const int envs = 30, steps = 5;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> rewards, bootstrap;
    std::vector<std::uint8_t> dones;
    const float r_choices[] = {-0.1f, 0.9f, -1.1f, 10.9f};
    for (int i = 0; i < envs * steps; ++i) {
      rewards.push_back(r_choices[rng.below(4)]);
      dones.push_back(rng.bernoulli(0.2) ? 1 : 0);
    }
    for (int e = 0; e < envs; ++e) bootstrap.push_back(static_cast<float>(rng.uniform(-2.0, 2.0)));
    const auto a = compute_returns(rewards, dones, bootstrap, envs, steps, 0.99f);
    const auto b = reference_returns(rewards, dones, bootstrap, envs, steps, 0.99f);
    if (std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) != 0)
      return {"n-step returns", false, "trial " + std::to_string(trial) + " differs from the reference"};
  }
  return {"n-step returns", true, "200 random rollouts, bit-identical"};
}

CheckResult check_solver_suite(const SuiteOptions& o) {
  const int per_n = o.quick ? 4 : 15;
  int compared = 0;
  for (int n = 1; n <= 3; ++n) {
    const auto set = generate(o.seed, n, per_n);
    for (const auto& level : set.levels) {
      const auto r = solve_optimal(level);
      if (r.status != SolveStatus::Solved) return {"planner vs brute force", false, level.id + " not solved"};
      GameState s = reset(level);
      for (Action a : r.plan.actions) s = step(s, a, EngineConfig{1 << 30}).first;
      if (!s.solved()) return {"planner vs brute force", false, level.id + ": plan replay does not solve"};
      const auto oracle = brute_force_length(level);
      if (!oracle || *oracle != r.plan.length())
        return {"planner vs brute force", false,
                level.id + ": planner " + std::to_string(r.plan.length()) + ", brute force " +
                    (oracle ? std::to_string(*oracle) : "unsolvable")};
      ++compared;
    }
  }
  return {"planner vs brute force", true, std::to_string(compared) + " generated levels"};
}

CheckResult check_forward_suite(const SuiteOptions& o) {
  const std::array<int, 2> counts = {1, 3};
  const auto states = random_states(2, o.seed, counts);
  const auto params = init_params(o.seed).cast<double>();
  Network<double> net;
  std::vector<Observation> obs;
  for (const auto& s : states) obs.push_back(render(s, Palette::Base));
  net.forward(params, obs);
  double worst = 0.0;
  for (std::size_t b = 0; b < obs.size(); ++b) {
    const auto ref = reference_forward(params, obs[b]);
    for (std::size_t h = 0; h < ref.heads.size(); ++h)
      for (std::size_t u = 0; u < ref.heads[h].size(); ++u)
        worst = std::max(worst, std::abs(ref.heads[h][u] - net.head_output(static_cast<int>(h))(static_cast<Eigen::Index>(u),
                                                                                              static_cast<Eigen::Index>(b))));
  }
  return {"forward vs direct loops", worst < 1e-9, "max abs difference " + fmt(worst)};
}

CheckResult check_gradients_suite(const SuiteOptions& o) {
  GradCheckOptions g;
  g.seed = o.seed;
  g.samples_per_array = o.quick ? 4 : 16;
  double worst = 0.0;
  std::string where;
  for (const auto& e : gradient_check(g)) {
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      where = e.layer;
    }
  }
  return {"gradient check", worst < 1e-5, "max relative error " + fmt(worst) + " (" + where + ")"};
}

CheckResult check_freeze_suite(const SuiteOptions& o) {
  const auto set = generate(o.seed, 1, 4);
  TransferSpec spec{"", TransferMode::ConvK, 3, o.seed};
  const auto source = init_params(o.seed + 100);
  TrainConfig cfg;
  cfg.train_levels = set.levels;
  cfg.test_levels = set.levels;
  cfg.seed = o.seed;
  cfg.budget_steps = o.quick ? 300 : 1500;
  cfg.eval_interval = cfg.budget_steps;
  cfg.initial_params = apply_transfer(spec, source);
  const auto result = train(cfg);
  for (int l = 0; l < 3; ++l)
    if (!layer_bits_equal(result.params.layers[static_cast<std::size_t>(l)], source.layers[static_cast<std::size_t>(l)]))
      return {"freeze invariance", false, source.layers[static_cast<std::size_t>(l)].name + " changed"};
  if (layer_bits_equal(result.params.layer("fc"), cfg.initial_params->layer("fc")))
    return {"freeze invariance", false, "trainable fc did not change"};
  return {"freeze invariance", true, std::to_string(result.updates) + " updates with conv1-3 frozen"};
}

CheckResult check_misc_suite(const SuiteOptions& o) {
  const auto p = init_params(o.seed);
  if (p.param_count() != kActorCriticParamCount)
    return {"parameters and registry", false, "parameter count " + std::to_string(p.param_count())};
  const auto q = deserialize_checkpoint(serialize_checkpoint(p, {}));
  for (std::size_t l = 0; l < p.layers.size(); ++l)
    if (!layer_bits_equal(p.layers[l], q.layers[l])) return {"parameters and registry", false, "checkpoint round-trip"};
  for (const auto& e : experiment_registry())
    if (format_experiment(parse_experiment(e.abbreviation)) != e.abbreviation)
      return {"parameters and registry", false, std::string(e.abbreviation) + " does not round-trip"};
  return {"parameters and registry", true,
          std::to_string(p.param_count()) + " parameters, " + std::to_string(experiment_registry().size()) +
              " experiments"};
}

}  // namespace

std::vector<CheckResult> run_suite(const SuiteOptions& options) {
  std::vector<CheckResult> out;
  auto guarded = [&](const char* name, auto&& fn) {
    try {
      out.push_back(fn(options));
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("exception: ") + e.what()});
    }
  };
  guarded("reward decomposition", check_reward_suite);
  guarded("n-step returns", check_returns_suite);
  guarded("planner vs brute force", check_solver_suite);
  guarded("forward vs direct loops", check_forward_suite);
  guarded("gradient check", check_gradients_suite);
  guarded("freeze invariance", check_freeze_suite);
  guarded("parameters and registry", check_misc_suite);
  return out;
}

}  // namespace sokotl::verify
