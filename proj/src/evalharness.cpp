#include "sokotl/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace sokotl {

EvalMode eval_mode_from_string(std::string_view s) {
  if (s == "sample") return EvalMode::Sample;
  if (s == "argmax") return EvalMode::Argmax;
  throw std::invalid_argument("unknown eval mode '" + std::string(s) + "' (expected sample|argmax)");
}

std::string_view to_string(EvalMode m) noexcept { return m == EvalMode::Sample ? "sample" : "argmax"; }

int sample_from_logits(std::span<const float> logits, double u) {
  const float m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i] - m));
    z += p[i];
  }
  double cum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i] / z;
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

BatchPolicy network_policy(const NetworkParams& params, EvalMode mode) {
  // The policy owns a snapshot, so later updates to `params` cannot leak into an evaluation.
  auto snapshot = std::make_shared<const NetworkParams>(params);
  auto net = std::make_shared<Network<float>>();
  return [snapshot, net, mode](std::span<const EpisodeView> live) {
    std::vector<Observation> obs;
    obs.reserve(live.size());
    for (const auto& v : live) obs.push_back(*v.observation);
    net->forward(*snapshot, obs);
    const auto& logits = net->head_output(0);
    std::vector<int> actions(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      std::array<float, kNumActions> l{};
      for (int a = 0; a < kNumActions; ++a) l[static_cast<std::size_t>(a)] = logits(a, col);
      if (mode == EvalMode::Argmax)
        actions[i] = static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
      else
        actions[i] = sample_from_logits(l, live[i].rng->uniform());
    }
    return actions;
  };
}

EvalPoint evaluate(const BatchPolicy& policy, std::span<const Level> test_levels, std::uint64_t eval_seed,
                   Palette palette, const EngineConfig& engine) {
  const std::size_t n = test_levels.size();
  std::vector<GameState> states;
  std::vector<Observation> obs;
  std::vector<Rng> rngs;
  std::vector<bool> active(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    states.push_back(reset(test_levels[i]));
    obs.push_back(render(states.back(), palette));
    rngs.emplace_back(derive_seed(eval_seed, {i}));
  }

  EvalPoint point;
  point.episodes = static_cast<int>(n);
  point.eval_seed = eval_seed;
  std::vector<EpisodeView> live;
  for (;;) {
    live.clear();
    for (std::size_t i = 0; i < n; ++i)
      if (active[i]) live.push_back({static_cast<int>(i), &states[i], &obs[i], &rngs[i]});
    if (live.empty()) break;
    const auto actions = policy(live);
    if (actions.size() != live.size()) throw std::logic_error("policy returned wrong number of actions");
    for (std::size_t k = 0; k < live.size(); ++k) {
      const auto i = static_cast<std::size_t>(live[k].episode);
      auto [next, outcome] = step(states[i], action_from_index(actions[k]), engine);
      states[i] = next;
      if (outcome.done) {
        active[i] = false;
        if (outcome.solved) ++point.solved;
      } else {
        obs[i] = render(states[i], palette);
      }
    }
  }
  point.solved_ratio = n ? static_cast<double>(point.solved) / static_cast<double>(n) : 0.0;
  return point;
}

EvalPoint evaluate(const NetworkParams& params, std::span<const Level> test_levels, std::uint64_t eval_seed,
                   EvalMode mode, Palette palette, const EngineConfig& engine) {
  return evaluate(network_policy(params, mode), test_levels, eval_seed, palette, engine);
}

// ---- aggregation ----

AggregateCurve aggregate(std::span<const Curve> runs) {
  if (runs.size() < 2) throw std::invalid_argument("aggregation needs at least 2 runs, got " + std::to_string(runs.size()));
  const auto& grid = runs.front().steps;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (runs[r].values.size() != runs[r].steps.size())
      throw std::invalid_argument("run " + std::to_string(r) + " has mismatched step/value lengths");
    if (runs[r].steps != grid) throw std::invalid_argument("run " + std::to_string(r) + " is on a different step grid");
  }
  AggregateCurve out;
  out.steps = grid;
  out.seeds = static_cast<int>(runs.size());
  const double n = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double sum = 0.0;
    for (const auto& r : runs) sum += r.values[i];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& r : runs) ss += (r.values[i] - mean) * (r.values[i] - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    out.mean.push_back(mean);
    out.half_width.push_back(1.96 * sd / std::sqrt(n));
  }
  return out;
}

std::string aggregate_csv(const AggregateCurve& curve) {
  std::string out = "env_steps,mean,ci_halfwidth\n";
  char buf[96];
  for (std::size_t i = 0; i < curve.steps.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%llu,%.10g,%.10g\n", static_cast<unsigned long long>(curve.steps[i]), curve.mean[i],
                  curve.half_width[i]);
    out += buf;
  }
  return out;
}

AggregateCurve parse_aggregate_csv(std::string_view text) {
  AggregateCurve c;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("env_steps,mean,ci_halfwidth", 0) != 0)
    throw std::invalid_argument("not an aggregate curve CSV");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    unsigned long long steps = 0;
    double mean = 0, hw = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf", &steps, &mean, &hw) != 3)
      throw std::invalid_argument("bad aggregate row: " + line);
    c.steps.push_back(steps);
    c.mean.push_back(mean);
    c.half_width.push_back(hw);
  }
  return c;
}

// ---- plotting ----

std::string plot_svg(std::span<const NamedCurve> curves, const std::string& title) {
  if (curves.empty()) throw std::invalid_argument("plot needs at least one curve");
  constexpr double W = 640, H = 400, left = 60, right = 170, top = 30, bottom = 50;
  constexpr double pw = W - left - right, ph = H - top - bottom;
  constexpr std::array<const char*, 8> colors = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  std::uint64_t max_step = 1;
  for (const auto& c : curves)
    for (auto s : c.curve.steps) max_step = std::max(max_step, s);

  auto fx = [&](double s) { return left + pw * s / static_cast<double>(max_step); };
  auto fy = [&](double v) { return top + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };
  std::string out;
  char buf[256];
  auto emit = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    out += buf;
  };

  emit("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n", W, H, W, H);
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) emit("<text x=\"%.1f\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">%s</text>\n", left + pw / 2, title.c_str());
  for (int i = 0; i <= 4; ++i) {
    const double v = i * 0.25;
    emit("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#dddddd\"/>\n", left, fy(v), left + pw, fy(v));
    emit("<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"end\">%.2f</text>\n", left - 6, fy(v) + 4, v);
  }
  for (int i = 0; i <= 4; ++i) {
    const double s = static_cast<double>(max_step) * i / 4.0;
    emit("<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"middle\">%.0f</text>\n", fx(s), top + ph + 16, s);
  }
  emit("<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"none\" stroke=\"black\"/>\n", left, top, pw, ph);
  emit("<text x=\"%.2f\" y=\"%.2f\" font-size=\"12\" text-anchor=\"middle\">environment steps</text>\n", left + pw / 2, H - 10);
  emit("<text x=\"14\" y=\"%.2f\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 %.2f)\">solved ratio</text>\n",
       top + ph / 2, top + ph / 2);

  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& c = curves[k].curve;
    const char* color = colors[k % colors.size()];
    if (!c.steps.empty()) {
      out += "<polygon fill=\"";
      out += color;
      out += "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < c.steps.size(); ++i)
        emit("%.2f,%.2f ", fx(static_cast<double>(c.steps[i])), fy(c.mean[i] + c.half_width[i]));
      for (std::size_t i = c.steps.size(); i-- > 0;)
        emit("%.2f,%.2f ", fx(static_cast<double>(c.steps[i])), fy(c.mean[i] - c.half_width[i]));
      out += "\"/>\n<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"";
      out += color;
      out += "\" points=\"";
      for (std::size_t i = 0; i < c.steps.size(); ++i) emit("%.2f,%.2f ", fx(static_cast<double>(c.steps[i])), fy(c.mean[i]));
      out += "\"/>\n";
    }
    const double ly = top + 12 + 18.0 * static_cast<double>(k);
    emit("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\" stroke-width=\"2\"/>\n", left + pw + 10, ly,
         left + pw + 30, ly, color);
    emit("<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\">", left + pw + 36, ly + 4);
    for (char ch : curves[k].name) {
      if (ch == '<') out += "&lt;";
      else if (ch == '>') out += "&gt;";
      else if (ch == '&') out += "&amp;";
      else out.push_back(ch);
    }
    out += "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

// ---- feature maps ----

std::vector<FeatureMapDump> dump_feature_maps(const NetworkParams& params, const Observation& observation, int layer,
                                              const std::string& observation_id) {
  if (layer < 1 || layer > 3) throw std::invalid_argument("feature-map layer must be 1, 2 or 3");
  Network<float> net;
  net.forward(params, std::span<const Observation>(&observation, 1));
  const auto& act = net.conv_activation(layer - 1);
  const auto& shape = kConvShapes[static_cast<std::size_t>(layer - 1)];
  std::vector<FeatureMapDump> dumps;
  for (int c = 0; c < shape.out_channels; ++c) {
    FeatureMapDump d;
    d.layer = layer;
    d.channel = c;
    d.observation_id = observation_id;
    d.size = shape.out_size;
    for (int p = 0; p < shape.positions(); ++p) d.activation.push_back(act(c, p));
    const auto [lo, hi] = std::minmax_element(d.activation.begin(), d.activation.end());
    const float range = *hi - *lo;
    for (float v : d.activation) d.normalized.push_back(range > 0.0f ? (v - *lo) / range : 0.0f);
    dumps.push_back(std::move(d));
  }
  return dumps;
}

std::string feature_map_pgm(const FeatureMapDump& dump, int scale) {
  const int side = dump.size * scale;
  std::string out = "P5\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const float v = dump.normalized[static_cast<std::size_t>((y / scale) * dump.size + x / scale)];
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
    }
  }
  return out;
}

int conv1_position_to_cell(int oy, int ox) noexcept {
  // Window o spans board pixels [4o-2, 4o+6); the cell holding most of it is (2o+1)/4.
  return Cell{(2 * oy + 1) / 4, (2 * ox + 1) / 4}.index();
}

DetectorScan scan_agent_detector(const NetworkParams& params, std::span<const GameState> states, Palette palette) {
  std::vector<Observation> obs;
  for (const auto& s : states) obs.push_back(render(s, palette));
  Network<float> net;
  net.forward(params, obs);
  const auto& act = net.conv_activation(0);
  const auto& shape = kConvShapes[0];
  DetectorScan scan;
  for (int c = 0; c < shape.out_channels; ++c) {
    int hits = 0;
    for (std::size_t s = 0; s < states.size(); ++s) {
      int best = 0;
      float best_v = -1.0f;
      for (int p = 0; p < shape.positions(); ++p) {
        const float v = act(c, static_cast<Eigen::Index>(s) * shape.positions() + p);
        if (v > best_v) {
          best_v = v;
          best = p;
        }
      }
      if (conv1_position_to_cell(best / shape.out_size, best % shape.out_size) == states[s].player) ++hits;
    }
    const double rate = states.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(states.size());
    scan.rates.push_back(rate);
    if (rate > scan.best_rate) {
      scan.best_rate = rate;
      scan.best_channel = c;
    }
  }
  return scan;
}

}  // namespace sokotl
