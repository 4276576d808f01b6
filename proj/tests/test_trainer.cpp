#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sokotl/levelgen.hpp"
#include "sokotl/trainer.hpp"
#include "sokotl/verify.hpp"
#include "test_util.hpp"

using namespace sokotl;
namespace fs = std::filesystem;

TEST_CASE("n-step returns by hand") {
  // Two envs, three steps; env 1 terminates at t=1.
  const std::vector<float> r = {1, 2, 3, 10, 20, 30};
  const std::vector<std::uint8_t> d = {0, 0, 0, 0, 1, 0};
  const std::vector<float> boot = {100, 200};
  const float g = 0.5f;
  const auto ret = compute_returns(r, d, boot, 2, 3, g);
  CHECK(ret[2] == doctest::Approx(3 + g * 100));
  CHECK(ret[1] == doctest::Approx(2 + g * ret[2]));
  CHECK(ret[0] == doctest::Approx(1 + g * ret[1]));
  CHECK(ret[5] == doctest::Approx(30 + g * 200));
  CHECK(ret[4] == doctest::Approx(20));
  CHECK(ret[3] == doctest::Approx(10 + g * 20));
  const auto ref = verify::reference_returns(r, d, boot, 2, 3, g);
  CHECK(ref == ret);
}

TEST_CASE("worked return value") {
  const std::vector<float> r(5, -0.1f);
  const std::vector<std::uint8_t> d(5, 0);
  const std::vector<float> b = {0.0f};
  CHECK(compute_returns(r, d, b, 1, 5, 0.99f)[0] == doctest::Approx(-0.490099501).epsilon(1e-6));
}

TEST_CASE("vector env resets finished slots") {
  std::vector<Level> levels = {sokotl::testing::two_push_level()};
  VectorEnv env(levels, 2, 1);
  CHECK(env.size() == 2);
  const std::vector<int> right = {3, 1};
  auto out = env.step(right);
  CHECK_FALSE(out[0].done);
  out = env.step(right);
  CHECK(out[0].done);
  CHECK(out[0].solved);
  CHECK(out[0].episode_return == doctest::Approx(-0.2 + 11.0));
  CHECK(env.state(0).steps_taken == 0);  // fresh episode
  CHECK(env.episode_serial(0) == 1);
  CHECK_FALSE(out[1].done);
}

TEST_CASE("rollout shapes and bootstrap") {
  const auto set = generate(3, 1, 4);
  VectorEnv env(set.levels, 3, 2);
  Network<float> net;
  const auto params = init_params(1);
  TrainHyper h;
  h.envs = 3;
  const auto b = collect_rollout(env, params, net, h);
  CHECK(b.envs == 3);
  CHECK(b.steps == 5);
  CHECK(b.observations.size() == 15);
  CHECK(b.returns.size() == 15);
  CHECK(b.bootstrap.size() == 3);
  for (int e = 0; e < 3; ++e)
    if (b.dones[b.index(e, 4)]) CHECK(b.bootstrap[static_cast<std::size_t>(e)] == 0.0f);
}

TEST_CASE("hyper-parameters survive json") {
  TrainHyper h;
  h.gamma = 0.95;
  h.optimizer.lr = 1e-3;
  h.coefs.entropy = 0.01;
  CHECK(hyper_from_json(to_json(h)) == h);
  CHECK(to_json(TrainHyper{})["lr"].get<double>() == doctest::Approx(7e-4));
  CHECK(TrainHyper{}.steps_per_update() == 150);
}

TEST_CASE("metrics csv round trip") {
  MetricsRow row{1000, 7, 0.25, std::nan(""), -0.5, 0.1, 1.3, 0.0};
  const auto text = metrics_csv(std::vector<MetricsRow>{row});
  CHECK(text.rfind(std::string(kMetricsHeader), 0) == 0);
  const auto back = parse_metrics_csv(text);
  REQUIRE(back.size() == 1);
  CHECK(back[0].env_steps == 1000);
  CHECK(back[0].solved_ratio == doctest::Approx(0.25));
  CHECK(std::isnan(back[0].mean_episode_return));
  CHECK_THROWS(parse_metrics_csv("bogus\n1,2\n"));
}

TEST_CASE("training writes artifacts and counts steps") {
  const auto set = generate(6, 1, 6);
  const auto dir = fs::temp_directory_path() / "sokotl_trainer_test";
  fs::remove_all(dir);
  TrainConfig cfg;
  cfg.train_levels = set.levels;
  cfg.test_levels = set.levels;
  cfg.budget_steps = 2100;
  cfg.out_dir = dir.string();
  cfg.checkpoint_interval = 1500;
  int evals = 0;
  cfg.on_eval = [&](const MetricsRow&) { ++evals; };
  const auto r = train(cfg);
  CHECK_FALSE(r.failed);
  CHECK(r.updates == 14);
  CHECK(r.env_steps == 2100);
  CHECK(evals == 2);
  REQUIRE(r.metrics.size() == 2);
  CHECK(r.metrics[0].env_steps == 1000);
  CHECK(r.metrics[0].update_idx == 7);  // first boundary at or after 1000 steps
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "checkpoint_final.bin"));
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(r.manifest["status"] == "ok");
  CHECK(r.manifest["hyper_parameters"]["gamma"].get<double>() == doctest::Approx(0.99));
  fs::remove_all(dir);
}

TEST_CASE("early stop and frozen layers") {
  const auto set = generate(6, 1, 6);
  TrainConfig cfg;
  cfg.train_levels = set.levels;
  cfg.test_levels = set.levels;
  cfg.budget_steps = 5000;
  cfg.stop_when = [](const MetricsRow&) { return true; };
  auto start = init_params(9);
  start.layer("conv1").frozen = true;
  cfg.initial_params = start;
  const auto r = train(cfg);
  CHECK(r.metrics.size() == 1);
  CHECK(r.env_steps < 5000);
  CHECK(layer_bits_equal(r.params.layer("conv1"), start.layer("conv1")));
  CHECK_FALSE(layer_bits_equal(r.params.layer("conv2"), start.layer("conv2")));
}

TEST_CASE("bad inputs are rejected") {
  TrainConfig cfg;
  CHECK_THROWS(train(cfg));  // no levels
}

TEST_CASE("gamma zero returns the rewards") {
  const std::vector<float> r = {0.3f, -0.1f, 10.9f, -1.1f};
  const std::vector<std::uint8_t> d = {0, 0, 1, 0};
  const std::vector<float> b = {5.0f};
  CHECK(compute_returns(r, d, b, 1, 4, 0.0f) == r);
}

TEST_CASE("done at t=2 cuts the bootstrap") {
  const std::vector<float> r = {1, 1, 1, 2, 2};
  const std::vector<std::uint8_t> d = {0, 0, 1, 0, 0};
  const std::vector<float> b = {10};
  const auto ret = compute_returns(r, d, b, 1, 5, 0.9f);
  CHECK(ret[2] == doctest::Approx(1.0));
  CHECK(ret[3] == doctest::Approx(2 + 0.9 * (2 + 0.9 * 10)));
  CHECK(ret[1] == doctest::Approx(1 + 0.9 * 1));
}

TEST_CASE("no observation after a terminal belongs to the finished episode") {
  const auto set = generate(3, 1, 4);
  VectorEnv env(set.levels, 6, 3, Palette::Base, EngineConfig{7});  // short cap: terminals land mid-rollout
  Network<float> net;
  const auto params = init_params(2);
  TrainHyper h;
  h.envs = 6;
  int terminals = 0;
  for (int k = 0; k < 20; ++k) {
    const auto b = collect_rollout(env, params, net, h);
    for (int e = 0; e < b.envs; ++e)
      for (int t = 0; t + 1 < b.steps; ++t)
        if (b.dones[b.index(e, t)]) {
          ++terminals;
          CHECK(b.episode_serials[b.index(e, t + 1)] == b.episode_serials[b.index(e, t)] + 1);
          // The next observation is a level start.
          bool is_start = false;
          for (const auto& l : set.levels) is_start |= b.observations[b.index(e, t + 1)] == render(reset(l), Palette::Base);
          CHECK(is_start);
        } else {
          CHECK(b.episode_serials[b.index(e, t + 1)] == b.episode_serials[b.index(e, t)]);
        }
  }
  CHECK(terminals > 0);
}
