#include "sokotl/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sokotl/rng.hpp"

namespace sokotl {

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Eigen::Map<const RowMajor<T>> weight_map(const Layer<T>& l) {
  return {l.weight.data(), l.rows(), l.cols()};
}
template <typename T>
Eigen::Map<const Vec<T>> bias_map(const Layer<T>& l) {
  return {l.bias.data(), static_cast<Eigen::Index>(l.bias.size())};
}

struct LayerShape {
  const char* name;
  std::vector<int> weight;
};

std::vector<LayerShape> expected_shapes(HeadKind head) {
  std::vector<LayerShape> s = {
      {"conv1", {32, 3, 8, 8}},
      {"conv2", {64, 32, 4, 4}},
      {"conv3", {64, 64, 3, 3}},
      {"fc", {kHiddenUnits, kFlatFeatures}},
  };
  if (head == HeadKind::ActorCritic) {
    s.push_back({"policy", {kNumActions, kHiddenUnits}});
    s.push_back({"value", {1, kHiddenUnits}});
  } else {
    s.push_back({"locator", {kLocatorClasses, kHiddenUnits}});
  }
  return s;
}

std::size_t product(const std::vector<int>& dims) {
  std::size_t p = 1;
  for (int d : dims) p *= static_cast<std::size_t>(d);
  return p;
}

template <typename T>
T relu_gate(T pre) {
  return pre > T(0) ? T(1) : T(0);
}

}  // namespace

// ---- params ----

template <typename T>
std::size_t BasicParams<T>::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

template <typename T>
std::size_t BasicParams<T>::trainable_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers)
    if (!l.frozen) n += l.size();
  return n;
}

template <typename T>
int BasicParams<T>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return static_cast<int>(i);
  return -1;
}

template <typename T>
Layer<T>& BasicParams<T>::layer(std::string_view name) {
  const int i = index_of(name);
  if (i < 0) throw ShapeError("no layer named '" + std::string(name) + "'");
  return layers[static_cast<std::size_t>(i)];
}

template <typename T>
const Layer<T>& BasicParams<T>::layer(std::string_view name) const {
  const int i = index_of(name);
  if (i < 0) throw ShapeError("no layer named '" + std::string(name) + "'");
  return layers[static_cast<std::size_t>(i)];
}

template <typename T>
std::vector<bool> BasicParams<T>::freeze_mask() const {
  std::vector<bool> m;
  for (const auto& l : layers) m.push_back(l.frozen);
  return m;
}

template <typename T>
double Gradients<T>::squared_norm() const noexcept {
  double s = 0.0;
  for (const auto& slot : layers) {
    for (T g : slot.weight) s += static_cast<double>(g) * static_cast<double>(g);
    for (T g : slot.bias) s += static_cast<double>(g) * static_cast<double>(g);
  }
  return s;
}

template <typename T>
void Gradients<T>::scale(T factor) noexcept {
  for (auto& slot : layers) {
    for (T& g : slot.weight) g *= factor;
    for (T& g : slot.bias) g *= factor;
  }
}

std::vector<std::string> layer_names(HeadKind head) {
  std::vector<std::string> names;
  for (const auto& s : expected_shapes(head)) names.emplace_back(s.name);
  return names;
}

template <typename T>
void check_shapes(const BasicParams<T>& params) {
  const auto expected = expected_shapes(params.head);
  if (params.layers.size() != expected.size())
    throw ShapeError("expected " + std::to_string(expected.size()) + " layers, got " +
                     std::to_string(params.layers.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& l = params.layers[i];
    const auto& e = expected[i];
    if (l.name != e.name) throw ShapeError("layer " + std::to_string(i) + " is '" + l.name + "', expected '" + e.name + "'");
    if (l.weight_shape != e.weight) throw ShapeError("layer '" + l.name + "' has wrong weight shape");
    if (l.weight.size() != product(e.weight)) throw ShapeError("layer '" + l.name + "' weight size mismatch");
    if (l.bias.size() != static_cast<std::size_t>(e.weight.front()))
      throw ShapeError("layer '" + l.name + "' bias size mismatch");
  }
}

void init_layer(Layer<float>& layer, std::uint64_t seed, int layer_index) {
  Rng rng(derive_seed(seed, {0x1A7E5ull, static_cast<std::uint64_t>(layer_index)}));
  const double bound = 1.0 / std::sqrt(static_cast<double>(layer.cols()));
  for (auto& w : layer.weight) w = static_cast<float>(rng.uniform(-bound, bound));
  for (auto& b : layer.bias) b = static_cast<float>(rng.uniform(-bound, bound));
}

NetworkParams init_params(std::uint64_t seed, HeadKind head) {
  NetworkParams p;
  p.head = head;
  p.seed = seed;
  int index = 0;
  for (const auto& s : expected_shapes(head)) {
    Layer<float> l;
    l.name = s.name;
    l.weight_shape = s.weight;
    l.weight.assign(product(s.weight), 0.0f);
    l.bias.assign(static_cast<std::size_t>(s.weight.front()), 0.0f);
    init_layer(l, seed, index++);
    p.layers.push_back(std::move(l));
  }
  return p;
}

// ---- forward / backward ----

template <typename T>
void Network<T>::forward(const BasicParams<T>& params, std::span<const Observation> batch) {
  check_shapes(params);
  if (batch.empty()) throw ShapeError("forward called with an empty batch");
  for (const auto& o : batch)
    if (o.bytes.size() != static_cast<std::size_t>(kObsValues)) throw ShapeError("observation is not 84x84x3");
  batch_ = static_cast<int>(batch.size());
  const Eigen::Index B = batch_;
  const T scale = T(1) / T(255);

  for (int l = 0; l < 3; ++l) {
    const auto& s = kConvShapes[static_cast<std::size_t>(l)];
    auto& col = col_[static_cast<std::size_t>(l)];
    col.resize(s.patch(), B * s.positions());
    const int K = s.kernel;
    const int S = s.stride;
    for (Eigen::Index b = 0; b < B; ++b) {
      for (int oy = 0; oy < s.out_size; ++oy) {
        for (int ox = 0; ox < s.out_size; ++ox) {
          T* cp = col.data() + (b * s.positions() + oy * s.out_size + ox) * s.patch();
          for (int ky = 0; ky < K; ++ky) {
            for (int kx = 0; kx < K; ++kx) {
              const int y = oy * S + ky;
              const int x = ox * S + kx;
              if (l == 0) {
                const std::uint8_t* src = batch[static_cast<std::size_t>(b)].bytes.data() + (y * kObsSize + x) * kObsChannels;
                for (int c = 0; c < s.in_channels; ++c) cp[(c * K + ky) * K + kx] = static_cast<T>(src[c]) * scale;
              } else {
                const T* src = act_[static_cast<std::size_t>(l - 1)].data() +
                               (b * s.in_size * s.in_size + y * s.in_size + x) * s.in_channels;
                for (int c = 0; c < s.in_channels; ++c) cp[(c * K + ky) * K + kx] = src[c];
              }
            }
          }
        }
      }
    }
    const auto& layer = params.layers[static_cast<std::size_t>(l)];
    auto& pre = pre_[static_cast<std::size_t>(l)];
    pre.noalias() = weight_map(layer) * col;
    pre.colwise() += bias_map(layer);
    act_[static_cast<std::size_t>(l)] = pre.cwiseMax(T(0));
  }

  const auto& a3 = act_[2];
  constexpr int pos3 = 49;
  flat_.resize(kFlatFeatures, B);
  for (Eigen::Index b = 0; b < B; ++b)
    for (int p = 0; p < pos3; ++p)
      for (int c = 0; c < 64; ++c) flat_(c * pos3 + p, b) = a3(c, b * pos3 + p);

  const auto& fc = params.layers[kFc];
  hidden_pre_.noalias() = weight_map(fc) * flat_;
  hidden_pre_.colwise() += bias_map(fc);
  hidden_ = hidden_pre_.cwiseMax(T(0));

  const int heads = params.head == HeadKind::ActorCritic ? 2 : 1;
  for (int h = 0; h < heads; ++h) {
    const auto& L = params.layers[static_cast<std::size_t>(kFc + 1 + h)];
    auto& out = head_out_[static_cast<std::size_t>(h)];
    out.noalias() = weight_map(L) * hidden_;
    out.colwise() += bias_map(L);
  }
}

template <typename T>
std::vector<std::uint8_t> Network<T>::relu_pattern() const {
  std::vector<std::uint8_t> p;
  auto append = [&](const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) p.push_back(m.data()[i] > T(0) ? 1 : 0);
  };
  for (const auto& m : pre_) append(m);
  append(hidden_pre_);
  return p;
}

template <typename T>
void Network<T>::backward(const BasicParams<T>& params, std::span<const Matrix> d_heads, Gradients<T>& grads) {
  const Eigen::Index B = batch_;
  const int heads = params.head == HeadKind::ActorCritic ? 2 : 1;
  if (static_cast<int>(d_heads.size()) != heads) throw ShapeError("wrong number of head gradients");

  grads.layers.assign(params.layers.size(), {});
  int lowest = -1;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& L = params.layers[i];
    auto& slot = grads.layers[i];
    slot.present = !L.frozen;
    if (slot.present) {
      slot.weight.assign(L.weight.size(), T(0));
      slot.bias.assign(L.bias.size(), T(0));
      if (lowest < 0) lowest = static_cast<int>(i);
    }
  }
  if (lowest < 0) return;

  auto write_grads = [&](int index, const Matrix& d_out, const Matrix& input) {
    auto& slot = grads.layers[static_cast<std::size_t>(index)];
    const auto& L = params.layers[static_cast<std::size_t>(index)];
    Eigen::Map<RowMajor<T>> gw(slot.weight.data(), L.rows(), L.cols());
    gw.noalias() = d_out * input.transpose();
    Eigen::Map<Vec<T>>(slot.bias.data(), L.rows()) = d_out.rowwise().sum();
  };

  Matrix d_hidden = Matrix::Zero(kHiddenUnits, B);
  for (int h = 0; h < heads; ++h) {
    const int index = kFc + 1 + h;
    const auto& d_out = d_heads[static_cast<std::size_t>(h)];
    if (!params.layers[static_cast<std::size_t>(index)].frozen) write_grads(index, d_out, hidden_);
    if (lowest <= kFc) d_hidden.noalias() += weight_map(params.layers[static_cast<std::size_t>(index)]).transpose() * d_out;
  }
  if (lowest > kFc) return;

  Matrix dz = d_hidden.binaryExpr(hidden_pre_, [](T g, T z) { return g * relu_gate(z); });
  if (!params.layers[kFc].frozen) write_grads(kFc, dz, flat_);
  if (lowest > kConv3) return;

  const Matrix d_flat = weight_map(params.layers[kFc]).transpose() * dz;
  constexpr int pos3 = 49;
  Matrix d_act(64, B * pos3);
  for (Eigen::Index b = 0; b < B; ++b)
    for (int p = 0; p < pos3; ++p)
      for (int c = 0; c < 64; ++c) d_act(c, b * pos3 + p) = d_flat(c * pos3 + p, b);

  for (int l = 2; l >= lowest; --l) {
    const auto& s = kConvShapes[static_cast<std::size_t>(l)];
    dz = d_act.binaryExpr(pre_[static_cast<std::size_t>(l)], [](T g, T z) { return g * relu_gate(z); });
    if (!params.layers[static_cast<std::size_t>(l)].frozen) write_grads(l, dz, col_[static_cast<std::size_t>(l)]);
    if (l == lowest) break;

    const Matrix d_col = weight_map(params.layers[static_cast<std::size_t>(l)]).transpose() * dz;
    d_act = Matrix::Zero(s.in_channels, B * s.in_size * s.in_size);
    const int K = s.kernel;
    const int S = s.stride;
    for (Eigen::Index b = 0; b < B; ++b) {
      for (int oy = 0; oy < s.out_size; ++oy) {
        for (int ox = 0; ox < s.out_size; ++ox) {
          const T* cp = d_col.data() + (b * s.positions() + oy * s.out_size + ox) * s.patch();
          for (int ky = 0; ky < K; ++ky) {
            for (int kx = 0; kx < K; ++kx) {
              T* dst = d_act.data() + (b * s.in_size * s.in_size + (oy * S + ky) * s.in_size + ox * S + kx) * s.in_channels;
              for (int c = 0; c < s.in_channels; ++c) dst[c] += cp[(c * K + ky) * K + kx];
            }
          }
        }
      }
    }
  }
}

// ---- losses ----

template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> softmax_columns(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& logits) {
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const T m = logits.col(j).maxCoeff();
    p.col(j) = (logits.col(j).array() - m).exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

template <typename T>
LossStats a2c_loss_and_grads(Network<T>& net, const BasicParams<T>& params, const PolicyBatch& batch,
                             const LossCoefs& coefs, Gradients<T>* grads, std::span<const T> advantages) {
  using Matrix = typename Network<T>::Matrix;
  if (params.head != HeadKind::ActorCritic) throw ShapeError("a2c loss needs actor-critic heads");
  const std::size_t n = batch.observations.size();
  if (batch.actions.size() != n || batch.returns.size() != n) throw ShapeError("batch arrays differ in length");
  if (!advantages.empty() && advantages.size() != n) throw ShapeError("advantage array has wrong length");

  net.forward(params, batch.observations);
  const Matrix& logits = net.head_output(0);
  const Matrix& values = net.head_output(1);
  const T inv_n = T(1) / static_cast<T>(n);
  const T c_v = static_cast<T>(coefs.value);
  const T c_e = static_cast<T>(coefs.entropy);

  std::array<Matrix, 2> d_heads = {Matrix(kNumActions, static_cast<Eigen::Index>(n)), Matrix(1, static_cast<Eigen::Index>(n))};
  LossStats st;
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<Eigen::Index>(i);
    const T m = logits.col(j).maxCoeff();
    const T lse = m + std::log((logits.col(j).array() - m).exp().sum());
    std::array<T, kNumActions> logp{};
    std::array<T, kNumActions> p{};
    T entropy = 0;
    for (int a = 0; a < kNumActions; ++a) {
      logp[static_cast<std::size_t>(a)] = logits(a, j) - lse;
      p[static_cast<std::size_t>(a)] = std::exp(logp[static_cast<std::size_t>(a)]);
      entropy -= p[static_cast<std::size_t>(a)] * logp[static_cast<std::size_t>(a)];
    }
    const int action = batch.actions[i];
    if (action < 0 || action >= kNumActions) throw ShapeError("action index out of range in batch");
    const T ret = static_cast<T>(batch.returns[i]);
    const T value = values(0, j);
    const T adv = advantages.empty() ? ret - value : advantages[i];

    st.policy_loss -= static_cast<double>(logp[static_cast<std::size_t>(action)] * adv);
    st.value_loss += static_cast<double>((ret - value) * (ret - value));
    st.entropy += static_cast<double>(entropy);

    for (int a = 0; a < kNumActions; ++a) {
      const T pa = p[static_cast<std::size_t>(a)];
      const T onehot = a == action ? T(1) : T(0);
      d_heads[0](a, j) = inv_n * (-adv * (onehot - pa) + c_e * pa * (logp[static_cast<std::size_t>(a)] + entropy));
    }
    d_heads[1](0, j) = inv_n * c_v * T(-2) * (ret - value);
  }
  st.policy_loss /= static_cast<double>(n);
  st.value_loss /= static_cast<double>(n);
  st.entropy /= static_cast<double>(n);
  st.loss = st.policy_loss + coefs.value * st.value_loss - coefs.entropy * st.entropy;

  if (!std::isfinite(st.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss (policy=" << st.policy_loss << ", value=" << st.value_loss << ", entropy=" << st.entropy
        << ")";
    throw NonFiniteLoss(msg.str());
  }
  if (grads) net.backward(params, d_heads, *grads);
  return st;
}

template <typename T>
double locator_loss_and_grads(Network<T>& net, const BasicParams<T>& params, std::span<const Observation> obs,
                              std::span<const int> labels, Gradients<T>* grads) {
  using Matrix = typename Network<T>::Matrix;
  if (params.head != HeadKind::Locator) throw ShapeError("locator loss needs the locator head");
  if (labels.size() != obs.size()) throw ShapeError("label count differs from batch size");
  net.forward(params, obs);
  const Matrix& logits = net.head_output(0);
  Matrix probs = softmax_columns<T>(logits);
  const auto n = static_cast<Eigen::Index>(obs.size());
  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= kLocatorClasses) throw ShapeError("locator label out of range");
    const T m = logits.col(j).maxCoeff();
    const T lse = m + std::log((logits.col(j).array() - m).exp().sum());
    loss -= static_cast<double>(logits(y, j) - lse);
    probs(y, j) -= T(1);
  }
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) throw NonFiniteLoss("non-finite locator loss");
  if (grads) {
    std::array<Matrix, 1> d_heads = {probs / static_cast<T>(n)};
    net.backward(params, d_heads, *grads);
  }
  return loss;
}

// ---- optimizer ----

void rmsprop_update(std::span<float> param, std::span<const float> grad, std::span<float> acc,
                    const RmsPropConfig& config) {
  const float alpha = static_cast<float>(config.alpha);
  const float one_minus = 1.0f - alpha;
  const float lr = static_cast<float>(config.lr);
  const float eps = static_cast<float>(config.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    acc[i] = alpha * acc[i] + one_minus * g * g;
    param[i] -= lr * g / (std::sqrt(acc[i]) + eps);
  }
}

RmsProp::RmsProp(const NetworkParams& params, RmsPropConfig config) : config_(config) {
  for (const auto& l : params.layers) {
    acc_w_.emplace_back(l.frozen ? 0 : l.weight.size(), 0.0f);
    acc_b_.emplace_back(l.frozen ? 0 : l.bias.size(), 0.0f);
  }
}

void RmsProp::step(NetworkParams& params, Gradients<float>& grads) {
  if (grads.layers.size() != params.layers.size()) throw ShapeError("gradient layer count mismatch");
  if (config_.max_grad_norm > 0.0) {
    const double norm = std::sqrt(grads.squared_norm());
    if (norm > config_.max_grad_norm) grads.scale(static_cast<float>(config_.max_grad_norm / (norm + 1e-6)));
  }
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& L = params.layers[i];
    const auto& slot = grads.layers[i];
    if (L.frozen) continue;
    if (!slot.present || slot.weight.size() != L.weight.size() || acc_w_[i].size() != L.weight.size())
      throw ShapeError("gradients do not cover trainable layer '" + L.name + "'");
    rmsprop_update(L.weight, slot.weight, acc_w_[i], config_);
    rmsprop_update(L.bias, slot.bias, acc_b_[i], config_);
  }
}

// ---- checkpoints ----

namespace {

void append_floats(std::string& out, const AlignedVector<float>& v) {
  const std::size_t offset = out.size();
  out.resize(offset + v.size() * sizeof(float));
  char* dst = out.data() + offset;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, v.data(), v.size() * sizeof(float));
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(v[i]);
      for (int k = 0; k < 4; ++k) dst[i * 4 + static_cast<std::size_t>(k)] = static_cast<char>((bits >> (8 * k)) & 0xFF);
    }
  }
}

void read_floats(std::string_view& in, AlignedVector<float>& v) {
  const std::size_t bytes = v.size() * sizeof(float);
  if (in.size() < bytes) throw ShapeError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(v.data(), in.data(), bytes);
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[i * 4 + static_cast<std::size_t>(k)])) << (8 * k);
      v[i] = std::bit_cast<float>(bits);
    }
  }
  in.remove_prefix(bytes);
}

}  // namespace

std::string serialize_checkpoint(const NetworkParams& params, const CheckpointMeta& meta) {
  nlohmann::ordered_json h;
  h["head"] = params.head == HeadKind::ActorCritic ? "actor_critic" : "locator";
  auto names = nlohmann::ordered_json::array();
  auto shapes = nlohmann::ordered_json::array();
  auto mask = nlohmann::ordered_json::array();
  for (const auto& l : params.layers) {
    names.push_back(l.name);
    shapes.push_back({{"weight", l.weight_shape}, {"bias", {static_cast<int>(l.bias.size())}}});
    mask.push_back(l.frozen);
  }
  h["layers"] = names;
  h["shapes"] = shapes;
  h["freeze_mask"] = mask;
  h["seed"] = params.seed;
  h["source_task"] = meta.source_task;
  h["env_steps"] = meta.env_steps;
  const std::string header = h.dump();

  std::string out(kCheckpointMagic);
  const auto len = static_cast<std::uint32_t>(header.size());
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((len >> (8 * k)) & 0xFF));
  out += header;
  for (const auto& l : params.layers) {
    append_floats(out, l.weight);
    append_floats(out, l.bias);
  }
  return out;
}

NetworkParams deserialize_checkpoint(std::string_view bytes, CheckpointMeta* meta) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) throw ShapeError("not a checkpoint (bad magic)");
  bytes.remove_prefix(kCheckpointMagic.size());
  if (bytes.size() < 4) throw ShapeError("checkpoint truncated");
  std::uint32_t len = 0;
  for (int k = 0; k < 4; ++k) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[static_cast<std::size_t>(k)])) << (8 * k);
  bytes.remove_prefix(4);
  if (bytes.size() < len) throw ShapeError("checkpoint header truncated");
  const auto h = nlohmann::json::parse(bytes.substr(0, len));
  bytes.remove_prefix(len);

  NetworkParams p;
  p.head = h.at("head").get<std::string>() == "locator" ? HeadKind::Locator : HeadKind::ActorCritic;
  p.seed = h.at("seed").get<std::uint64_t>();
  const auto& names = h.at("layers");
  const auto& shapes = h.at("shapes");
  const auto& mask = h.at("freeze_mask");
  if (shapes.size() != names.size() || mask.size() != names.size()) throw ShapeError("checkpoint header arrays differ in length");
  for (std::size_t i = 0; i < names.size(); ++i) {
    Layer<float> l;
    l.name = names[i].get<std::string>();
    l.weight_shape = shapes[i].at("weight").get<std::vector<int>>();
    const auto bias_shape = shapes[i].at("bias").get<std::vector<int>>();
    l.weight.assign(product(l.weight_shape), 0.0f);
    l.bias.assign(product(bias_shape), 0.0f);
    l.frozen = mask[i].get<bool>();
    read_floats(bytes, l.weight);
    read_floats(bytes, l.bias);
    p.layers.push_back(std::move(l));
  }
  if (!bytes.empty()) throw ShapeError("trailing bytes after checkpoint payload");
  if (meta) {
    meta->source_task = h.value("source_task", std::string("none"));
    meta->env_steps = h.value("env_steps", std::uint64_t{0});
  }
  return p;
}

void save_checkpoint(const std::string& path, const NetworkParams& params, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  const auto bytes = serialize_checkpoint(params, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NetworkParams load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), meta);
}

bool layer_bits_equal(const Layer<float>& a, const Layer<float>& b) noexcept {
  return a.weight.size() == b.weight.size() && a.bias.size() == b.bias.size() &&
         std::memcmp(a.weight.data(), b.weight.data(), a.weight.size() * sizeof(float)) == 0 &&
         std::memcmp(a.bias.data(), b.bias.data(), a.bias.size() * sizeof(float)) == 0;
}

// ---- instantiations ----

template struct BasicParams<float>;
template struct BasicParams<double>;
template struct Gradients<float>;
template struct Gradients<double>;
template void check_shapes(const BasicParams<float>&);
template void check_shapes(const BasicParams<double>&);
template class Network<float>;
template class Network<double>;
template LossStats a2c_loss_and_grads(Network<float>&, const BasicParams<float>&, const PolicyBatch&, const LossCoefs&,
                                      Gradients<float>*, std::span<const float>);
template LossStats a2c_loss_and_grads(Network<double>&, const BasicParams<double>&, const PolicyBatch&,
                                      const LossCoefs&, Gradients<double>*, std::span<const double>);
template double locator_loss_and_grads(Network<float>&, const BasicParams<float>&, std::span<const Observation>,
                                       std::span<const int>, Gradients<float>*);
template double locator_loss_and_grads(Network<double>&, const BasicParams<double>&, std::span<const Observation>,
                                       std::span<const int>, Gradients<double>*);
template Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic> softmax_columns(const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>&);
template Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic> softmax_columns(const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>&);

}  // namespace sokotl
