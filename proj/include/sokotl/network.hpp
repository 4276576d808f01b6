#pragma once

// Conv(8x8/4,32) -> Conv(4x4/2,64) -> Conv(3x3/1,64) -> FC(512) -> heads.
// Actor-critic heads: policy logits (4) and state value (1). The locator
// variant replaces both with a 100-way cell classifier.
//
// Float is the training precision; double instantiations back the gradient
// checks.

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/StdVector>

#include "sokotl/engine.hpp"

namespace sokotl {

struct ConvShape {
  int in_channels;
  int out_channels;
  int kernel;
  int stride;
  int in_size;
  int out_size;

  int patch() const noexcept { return in_channels * kernel * kernel; }
  int positions() const noexcept { return out_size * out_size; }
};

inline constexpr std::array<ConvShape, 3> kConvShapes = {{
    {3, 32, 8, 4, 84, 20},
    {32, 64, 4, 2, 20, 9},
    {64, 64, 3, 1, 9, 7},
}};
inline constexpr int kFlatFeatures = 64 * 7 * 7;  // 3136
inline constexpr int kHiddenUnits = 512;
inline constexpr int kLocatorClasses = kCells;
inline constexpr std::size_t kActorCriticParamCount = 1'684'645;

enum class HeadKind : std::uint8_t { ActorCritic, Locator };

// Layer order is fixed: conv1 conv2 conv3 fc, then policy value | locator.
enum LayerIndex : int { kConv1 = 0, kConv2 = 1, kConv3 = 2, kFc = 3, kPolicy = 4, kValue = 5, kLocator = 4 };
inline constexpr int kTrunkLayers = 4;

// Eigen picks its vectorised loop split from the buffer address, so storage
// alignment must not vary between runs for results to be bit-reproducible.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct Layer {
  std::string name;
  std::vector<int> weight_shape;  // conv {out, in, k, k}; fc {out, in}
  AlignedVector<T> weight;  // row-major
  AlignedVector<T> bias;
  bool frozen = false;

  int rows() const noexcept { return weight_shape.front(); }
  int cols() const noexcept { return static_cast<int>(weight.size()) / weight_shape.front(); }
  std::size_t size() const noexcept { return weight.size() + bias.size(); }
};

template <typename T>
struct BasicParams {
  HeadKind head = HeadKind::ActorCritic;
  std::vector<Layer<T>> layers;
  std::uint64_t seed = 0;

  std::size_t param_count() const noexcept;
  std::size_t trainable_count() const noexcept;
  int index_of(std::string_view name) const;  // -1 when absent
  Layer<T>& layer(std::string_view name);
  const Layer<T>& layer(std::string_view name) const;
  std::vector<bool> freeze_mask() const;

  template <typename U>
  BasicParams<U> cast() const {
    BasicParams<U> out;
    out.head = head;
    out.seed = seed;
    for (const auto& l : layers) {
      Layer<U> u;
      u.name = l.name;
      u.weight_shape = l.weight_shape;
      u.weight.assign(l.weight.begin(), l.weight.end());
      u.bias.assign(l.bias.begin(), l.bias.end());
      u.frozen = l.frozen;
      out.layers.push_back(std::move(u));
    }
    return out;
  }
};

using NetworkParams = BasicParams<float>;

// Per-layer gradient slots. Frozen layers have present == false and empty arrays.
template <typename T>
struct Gradients {
  struct Slot {
    AlignedVector<T> weight;
    AlignedVector<T> bias;
    bool present = false;
  };
  std::vector<Slot> layers;

  double squared_norm() const noexcept;
  void scale(T factor) noexcept;
};

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights
// and biases. Layer i draws from its own stream derived from (seed, i), so a
// layer's values depend only on the seed and its position.
NetworkParams init_params(std::uint64_t seed, HeadKind head = HeadKind::ActorCritic);
void init_layer(Layer<float>& layer, std::uint64_t seed, int layer_index);

std::vector<std::string> layer_names(HeadKind head);

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws ShapeError when params do not match the fixed architecture.
template <typename T>
void check_shapes(const BasicParams<T>& params);

// Scratch buffers plus cached activations for one batch. Not thread-safe;
// use one instance per thread.
template <typename T>
class Network {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

  // Activations are stored channel-major per position: matrix(channel, sample * positions + y * size + x).
  void forward(const BasicParams<T>& params, std::span<const Observation> batch);

  int batch_size() const noexcept { return batch_; }
  const Matrix& head_output(int head) const { return head_out_[static_cast<std::size_t>(head)]; }
  const Matrix& conv_activation(int conv) const { return act_[static_cast<std::size_t>(conv)]; }
  const Matrix& hidden() const { return hidden_; }

  // Pre-activation sign pattern of every ReLU unit, in a fixed order.
  std::vector<std::uint8_t> relu_pattern() const;

  // d_heads[i] has the shape of head_output(i). Gradients are written for
  // trainable layers only; backpropagation stops below the lowest one.
  void backward(const BasicParams<T>& params, std::span<const Matrix> d_heads, Gradients<T>& grads);

 private:
  int batch_ = 0;
  std::array<Matrix, 3> col_;   // im2col per conv layer
  std::array<Matrix, 3> pre_;   // conv pre-activations
  std::array<Matrix, 3> act_;   // conv post-ReLU
  Matrix flat_;                 // 3136 x B
  Matrix hidden_pre_;
  Matrix hidden_;               // 512 x B post-ReLU
  std::array<Matrix, 2> head_out_;
};

// ---- losses ----

struct LossCoefs {
  double value = 0.5;
  double entropy = 0.1;

  friend bool operator==(const LossCoefs&, const LossCoefs&) = default;
};

struct LossStats {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

// Flattened actor-critic training batch.
struct PolicyBatch {
  std::span<const Observation> observations;
  std::span<const int> actions;
  std::span<const float> returns;
};

// loss = -mean(log pi(a|s) * A) + c_v * mean((R - V)^2) - c_e * mean(H(pi(s))),
// with A = R - V held constant. When `advantages` is non-empty it replaces R - V
// in the policy term (used by finite-difference checks, which must hold A fixed).
template <typename T>
LossStats a2c_loss_and_grads(Network<T>& net, const BasicParams<T>& params, const PolicyBatch& batch,
                             const LossCoefs& coefs, Gradients<T>* grads, std::span<const T> advantages = {});

// Mean cross-entropy of the locator head against cell labels.
template <typename T>
double locator_loss_and_grads(Network<T>& net, const BasicParams<T>& params, std::span<const Observation> obs,
                              std::span<const int> labels, Gradients<T>* grads);

// Row-wise softmax of a (classes x batch) logit matrix.
template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> softmax_columns(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& logits);

// ---- optimizer ----

struct RmsPropConfig {
  double lr = 7e-4;
  double alpha = 0.99;
  double eps = 1e-5;
  double max_grad_norm = 0.0;  // 0 disables clipping

  friend bool operator==(const RmsPropConfig&, const RmsPropConfig&) = default;
};

// acc <- alpha * acc + (1 - alpha) * g^2;  param <- param - lr * g / (sqrt(acc) + eps)
void rmsprop_update(std::span<float> param, std::span<const float> grad, std::span<float> acc,
                    const RmsPropConfig& config);

class RmsProp {
 public:
  explicit RmsProp(const NetworkParams& params, RmsPropConfig config = {});

  // Frozen layers are skipped entirely.
  void step(NetworkParams& params, Gradients<float>& grads);

  const RmsPropConfig& config() const noexcept { return config_; }
  const std::vector<float>& weight_accumulator(int layer) const { return acc_w_[static_cast<std::size_t>(layer)]; }

 private:
  RmsPropConfig config_;
  std::vector<std::vector<float>> acc_w_;
  std::vector<std::vector<float>> acc_b_;
};

// ---- checkpoints ----

struct CheckpointMeta {
  std::string source_task = "none";
  std::uint64_t env_steps = 0;
};

inline constexpr std::string_view kCheckpointMagic = "SOKOTL1";

// Magic, u32 LE header length, JSON header, then each layer's weight and bias
// as little-endian float32 in header order.
std::string serialize_checkpoint(const NetworkParams& params, const CheckpointMeta& meta);
NetworkParams deserialize_checkpoint(std::string_view bytes, CheckpointMeta* meta = nullptr);

void save_checkpoint(const std::string& path, const NetworkParams& params, const CheckpointMeta& meta);
NetworkParams load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

// Byte-level equality of one layer's arrays.
bool layer_bits_equal(const Layer<float>& a, const Layer<float>& b) noexcept;

}  // namespace sokotl
