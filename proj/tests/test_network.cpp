#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sokotl/levelgen.hpp"
#include "sokotl/network.hpp"
#include "sokotl/verify.hpp"

using namespace sokotl;

namespace {

std::vector<Observation> some_observations(int n, std::uint64_t seed) {
  const std::array<int, 3> counts = {1, 2, 3};
  std::vector<Observation> obs;
  for (const auto& s : verify::random_states(n, seed, counts)) obs.push_back(render(s, Palette::Base));
  return obs;
}

}  // namespace

TEST_CASE("parameter counts") {
  const auto p = init_params(1);
  CHECK(p.param_count() == kActorCriticParamCount);
  CHECK(p.layers.size() == 6);
  const auto loc = init_params(1, HeadKind::Locator);
  CHECK(loc.layer("locator").rows() == 100);
  CHECK(loc.param_count() == kActorCriticParamCount - (512 * 5 + 5) + (512 * 100 + 100));
  CHECK(layer_names(HeadKind::ActorCritic) == std::vector<std::string>{"conv1", "conv2", "conv3", "fc", "policy", "value"});
}

TEST_CASE("initialisation is seeded") {
  const auto a = init_params(3), b = init_params(3), c = init_params(4);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    CHECK(layer_bits_equal(a.layers[i], b.layers[i]));
    CHECK_FALSE(layer_bits_equal(a.layers[i], c.layers[i]));
  }
}

TEST_CASE("forward matches direct loops") {
  const auto params = init_params(2);
  const auto dparams = params.cast<double>();
  const auto obs = some_observations(3, 8);
  Network<double> net;
  net.forward(dparams, obs);
  CHECK(net.head_output(0).rows() == 4);
  CHECK(net.head_output(0).cols() == 3);
  CHECK(net.head_output(1).rows() == 1);
  for (int b = 0; b < 3; ++b) {
    const auto ref = verify::reference_forward(dparams, obs[static_cast<std::size_t>(b)]);
    for (int a = 0; a < 4; ++a) CHECK(std::abs(net.head_output(0)(a, b) - ref.heads[0][static_cast<std::size_t>(a)]) < 1e-9);
    CHECK(std::abs(net.head_output(1)(0, b) - ref.heads[1][0]) < 1e-9);
  }
}

TEST_CASE("float and double forward agree closely") {
  const auto params = init_params(2);
  const auto obs = some_observations(2, 9);
  Network<float> nf;
  Network<double> nd;
  nf.forward(params, obs);
  nd.forward(params.cast<double>(), obs);
  for (int a = 0; a < 4; ++a) CHECK(std::abs(nf.head_output(0)(a, 0) - nd.head_output(0)(a, 0)) < 1e-4);
}

TEST_CASE("analytic gradients match finite differences") {
  verify::GradCheckOptions o;
  o.batch = 4;
  o.samples_per_array = 6;
  for (const auto& e : verify::gradient_check(o)) {
    INFO(e.layer);
    CHECK(e.checked > 0);
    CHECK(e.max_rel_error < 1e-5);
  }
  for (const auto& e : verify::locator_gradient_check(o)) {
    INFO(e.layer);
    CHECK(e.max_rel_error < 1e-5);
  }
}

TEST_CASE("softmax columns") {
  Eigen::MatrixXd logits(3, 2);
  logits << 1, 1000, 2, 1000, 3, 1000;
  const auto p = softmax_columns<double>(logits);
  CHECK(p.col(0).sum() == doctest::Approx(1.0));
  CHECK(p(0, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(p(2, 0) / p(1, 0) == doctest::Approx(std::exp(1.0)));
}

TEST_CASE("a2c loss pieces") {
  const auto params = init_params(5).cast<double>();
  const auto obs = some_observations(4, 10);
  const std::vector<int> actions = {0, 1, 2, 3};
  const std::vector<float> returns = {1.0f, -1.0f, 0.5f, 0.0f};
  Network<double> net;
  const auto stats = a2c_loss_and_grads<double>(net, params, {obs, actions, returns}, LossCoefs{}, nullptr);
  // Recompute from the heads.
  const auto probs = softmax_columns<double>(net.head_output(0));
  double pl = 0, vl = 0, ent = 0;
  for (int b = 0; b < 4; ++b) {
    const double v = net.head_output(1)(0, b);
    const double adv = returns[static_cast<std::size_t>(b)] - v;
    pl += -adv * std::log(probs(actions[static_cast<std::size_t>(b)], b));
    vl += adv * adv;
    for (int a = 0; a < 4; ++a) ent -= probs(a, b) * std::log(probs(a, b));
  }
  CHECK(stats.policy_loss == doctest::Approx(pl / 4).epsilon(1e-9));
  CHECK(stats.entropy == doctest::Approx(ent / 4).epsilon(1e-9));
  CHECK(stats.loss == doctest::Approx(pl / 4 + 0.5 * stats.value_loss - 0.1 * ent / 4).epsilon(1e-9));
  CHECK(stats.value_loss == doctest::Approx(vl / 4).epsilon(1e-9));
}

TEST_CASE("rmsprop update by hand") {
  std::vector<float> p = {1.0f, -2.0f}, g = {0.5f, 0.0f}, acc = {0.0f, 0.25f};
  RmsPropConfig c;
  rmsprop_update(p, g, acc, c);
  const float a0 = 0.01f * 0.25f;
  CHECK(acc[0] == doctest::Approx(a0));
  CHECK(p[0] == doctest::Approx(1.0f - 7e-4f * 0.5f / (std::sqrt(a0) + 1e-5f)));
  CHECK(acc[1] == doctest::Approx(0.99f * 0.25f));
  CHECK(p[1] == -2.0f);
}

TEST_CASE("frozen layers are skipped by the optimiser") {
  auto params = init_params(6);
  params.layer("conv1").frozen = true;
  const auto before = params;
  RmsProp opt(params);
  Gradients<float> g;
  for (const auto& l : params.layers) {
    Gradients<float>::Slot s;
    s.weight.assign(l.weight.size(), 0.1f);
    s.bias.assign(l.bias.size(), 0.1f);
    s.present = !l.frozen;
    g.layers.push_back(s);
  }
  opt.step(params, g);
  CHECK(layer_bits_equal(params.layer("conv1"), before.layer("conv1")));
  CHECK_FALSE(layer_bits_equal(params.layer("conv2"), before.layer("conv2")));
}

TEST_CASE("checkpoint round trip") {
  auto params = init_params(7);
  params.layer("conv2").frozen = true;
  CheckpointMeta meta{"2boxes", 4500};
  const auto bytes = serialize_checkpoint(params, meta);
  CHECK(bytes.rfind("SOKOTL1", 0) == 0);
  CheckpointMeta back_meta;
  const auto back = deserialize_checkpoint(bytes, &back_meta);
  CHECK(back_meta.source_task == "2boxes");
  CHECK(back_meta.env_steps == 4500);
  REQUIRE(back.layers.size() == params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    CHECK(layer_bits_equal(back.layers[i], params.layers[i]));
    CHECK(back.layers[i].frozen == params.layers[i].frozen);
  }
  CHECK_THROWS_AS(deserialize_checkpoint("NOTACKPT"), ShapeError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 4)), ShapeError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), ShapeError);
}

TEST_CASE("shape checks") {
  auto params = init_params(8);
  CHECK_NOTHROW(check_shapes(params));
  params.layer("fc").weight.pop_back();
  CHECK_THROWS_AS(check_shapes(params), ShapeError);
}

TEST_CASE("zero weights give a uniform policy") {
  auto params = init_params(1);
  for (auto& l : params.layers) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0f);
    std::fill(l.bias.begin(), l.bias.end(), 0.0f);
  }
  const auto obs = some_observations(3, 4);
  Network<float> net;
  net.forward(params, obs);
  CHECK(net.head_output(0).cwiseAbs().maxCoeff() == 0.0f);
  const std::vector<int> actions = {0, 1, 2};
  const std::vector<float> returns = {0, 0, 0};
  const auto st = a2c_loss_and_grads<float>(net, params, {obs, actions, returns}, LossCoefs{}, nullptr);
  CHECK(st.entropy == doctest::Approx(std::log(4.0)));
}

TEST_CASE("identical observations give identical outputs") {
  auto obs = some_observations(1, 4);
  obs.push_back(obs[0]);
  Network<float> net;
  net.forward(init_params(2), obs);
  CHECK(net.head_output(0).col(0) == net.head_output(0).col(1));
  CHECK(net.head_output(1)(0, 0) == net.head_output(1)(0, 1));
}

TEST_CASE("uniform policy with zero advantage has no policy gradient") {
  auto params = init_params(1).cast<double>();
  // Zero the policy head so logits are 0.
  std::fill(params.layer("policy").weight.begin(), params.layer("policy").weight.end(), 0.0);
  std::fill(params.layer("policy").bias.begin(), params.layer("policy").bias.end(), 0.0);
  const auto obs = some_observations(3, 5);
  Network<double> net;
  net.forward(params, obs);
  std::vector<float> returns;
  for (int b = 0; b < 3; ++b) returns.push_back(static_cast<float>(net.head_output(1)(0, b)));
  const std::vector<double> zero_adv(3, 0.0);
  const std::vector<int> actions = {0, 2, 3};
  Gradients<double> g;
  a2c_loss_and_grads<double>(net, params, {obs, actions, returns}, LossCoefs{0.5, 0.0}, &g, zero_adv);
  const auto& pol = g.layers[kPolicy];
  REQUIRE(pol.present);
  for (double v : pol.weight) CHECK(v == 0.0);
  for (double v : pol.bias) CHECK(v == 0.0);
}

TEST_CASE("rmsprop with zero gradient only decays the accumulator") {
  std::vector<float> p = {3.0f}, g = {0.0f}, acc = {2.0f};
  rmsprop_update(p, g, acc, RmsPropConfig{});
  CHECK(p[0] == 3.0f);
  CHECK(acc[0] == doctest::Approx(1.98f));
}

TEST_CASE("rmsprop single scalar first step") {
  std::vector<float> p = {0.0f}, g = {1.0f}, acc = {0.0f};
  rmsprop_update(p, g, acc, RmsPropConfig{});
  CHECK(p[0] == doctest::Approx(-7e-4 / (std::sqrt(0.01) + 1e-5)).epsilon(1e-6));
}

TEST_CASE("frozen layer survives 100 optimiser steps") {
  auto params = init_params(6);
  params.layer("conv1").frozen = true;
  const auto path = std::string("sokotl_frozen_test.bin");
  save_checkpoint(path, params, {});
  const auto set = generate(2, 1, 2);
  std::vector<Observation> obs;
  for (const auto& l : set.levels) obs.push_back(render(reset(l), Palette::Base));
  const std::vector<int> actions = {1, 2};
  const std::vector<float> returns = {1.0f, -1.0f};
  RmsProp opt(params);
  Network<float> net;
  for (int i = 0; i < 100; ++i) {
    Gradients<float> g;
    a2c_loss_and_grads<float>(net, params, {obs, actions, returns}, LossCoefs{}, &g);
    CHECK_FALSE(g.layers[kConv1].present);
    opt.step(params, g);
  }
  const auto saved = load_checkpoint(path);
  CHECK(layer_bits_equal(params.layer("conv1"), saved.layer("conv1")));
  CHECK_FALSE(layer_bits_equal(params.layer("fc"), saved.layer("fc")));
  std::remove(path.c_str());
}
