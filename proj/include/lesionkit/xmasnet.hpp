#pragma once

// XmasNet: four 3x3 conv layers (Conv -> BN -> ReLU) with two 2x2 max pools,
// two ReLU fully connected layers and a two-way softmax head, trained with
// Adam and early-stopped on multiview validation AUC.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lesionkit/augment.hpp"
#include "lesionkit/ensemble.hpp"
#include "lesionkit/layers.hpp"

namespace lesionkit::xmasnet {

enum class LayerKind { Conv, MaxPool, FullyConnected, Softmax };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  int kernel = 0;  // 0 for fully connected layers
  int stride = 0;
  std::array<int, 3> output{0, 0, 0};  // H, W, C; fully connected layers are 1 x 1 x C
};

/// Fixed-shape description of the network. Each conv is followed by batch
/// norm and ReLU; fc1 and fc2 by ReLU.
struct NetworkConfig {
  int input_size = 32;
  int input_channels = 3;
  std::vector<LayerSpec> layers;

  static NetworkConfig xmasnet();
  /// Output (N, C, H, W) of each layer for a batch of n.
  std::vector<std::array<int, 4>> shape_chain(int n) const;
  /// Canonical JSON rendering stored in model files.
  std::string to_json() const;
};

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;
  bool learnable = true;
};

/// Tensors in a fixed order: for each conv i in 1..4 conv{i}.weight, conv{i}.bias,
/// bn{i}.gamma, bn{i}.beta, bn{i}.running_mean, bn{i}.running_var; then
/// fc1.weight, fc1.bias, fc2.weight, fc2.bias, head.weight, head.bias.
template <typename T>
struct NetworkParams {
  std::vector<ParamTensor<T>> tensors;

  /// Correct shapes; weights zero, gamma 1, running_var 1.
  static NetworkParams blank();
  /// He-normal (fan-in) weights, zero biases, gamma 1, beta 0.
  static NetworkParams he_normal(std::uint64_t seed);

  std::size_t total_size() const;
  /// ShapeMismatch on layout problems, InvalidArgument on non-finite values or negative running_var.
  void validate() const;

  ParamTensor<T>& conv_weight(int i) { return tensors[6 * i]; }
  ParamTensor<T>& conv_bias(int i) { return tensors[6 * i + 1]; }
  ParamTensor<T>& bn_gamma(int i) { return tensors[6 * i + 2]; }
  ParamTensor<T>& bn_beta(int i) { return tensors[6 * i + 3]; }
  ParamTensor<T>& bn_mean(int i) { return tensors[6 * i + 4]; }
  ParamTensor<T>& bn_var(int i) { return tensors[6 * i + 5]; }
  ParamTensor<T>& fc_weight(int j) { return tensors[24 + 2 * j]; }
  ParamTensor<T>& fc_bias(int j) { return tensors[25 + 2 * j]; }
};

template <typename To, typename From>
NetworkParams<To> cast_params(const NetworkParams<From>& p) {
  NetworkParams<To> out;
  for (const auto& t : p.tensors) {
    out.tensors.push_back({t.name, t.shape, std::vector<To>(t.data.begin(), t.data.end()), t.learnable});
  }
  return out;
}

/// One buffer per parameter tensor; empty for running statistics.
template <typename T>
using Gradients = std::vector<std::vector<T>>;

template <typename T>
Gradients<T> zero_gradients(const NetworkParams<T>& params);

/// Forward/backward workspace bound to a parameter set.
template <typename T>
class Network {
 public:
  explicit Network(NetworkParams<T>& params) : p_(&params) {}

  /// `x` holds n samples of 3 x 32 x 32 (channel-major). Returns N x 2 logits.
  /// Train mode uses batch statistics and updates the running estimates.
  std::span<const T> forward(std::span<const T> x, int n, bool train);

  /// Backpropagates d loss / d logits through the last train-mode forward.
  void backward(std::span<const T> grad_logits, Gradients<T>& grads, std::vector<T>* grad_input = nullptr);

  /// (N, C, H, W) after each layer of the last forward, in config order.
  std::vector<std::array<int, 4>> last_shapes() const;

 private:
  NetworkParams<T>* p_;
  int n_ = 0;
  bool trained_forward_ = false;
  Tensor4<T> x_;
  std::array<Tensor4<T>, 4> conv_, bn_, relu_;
  std::array<BatchNormCache<T>, 4> bn_cache_;
  std::array<Tensor4<T>, 2> pool_;
  std::array<std::vector<std::int32_t>, 2> argmax_;
  std::vector<T> fc1_, fc1_relu_, fc2_, fc2_relu_, logits_;
};

struct TrainConfig {
  double learning_rate = 2e-6;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 64;
  int max_steps = 2000;
  int eval_every = 50;
  int patience = 10;
  std::uint64_t seed = 0;
  bool mirror = true;  // random horizontal flips with probability 0.5
  int jobs = 1;        // validation inference threads

  void validate() const;
};

template <typename T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m, v;
};

/// Coupled L2: g' = g + weight_decay * theta, then Adam with bias correction.
/// NonFiniteGradient leaves params and state untouched.
template <typename T>
void adam_step(NetworkParams<T>& params, const Gradients<T>& grads, AdamState<T>& state, const TrainConfig& cfg);

struct HistoryEntry {
  int step = 0;
  double train_loss = 0.0;  // mean minibatch loss since the previous evaluation
  double val_auc = 0.0;
};

struct TrainedModel {
  NetworkParams<float> params;
  std::string channel_set;
  std::uint64_t seed = 0;
  int best_step = 0;
  double best_val_auc = 0.0;
  std::vector<HistoryEntry> history;
};

/// Minibatch Adam over shuffled samples, evaluating multiview validation AUC
/// every eval_every steps and keeping the best snapshot. Stops after
/// `patience` evaluations without improvement or at max_steps.
TrainedModel train(const augment::SampleArchive& train_set, const augment::SampleArchive& val_set,
                   const TrainConfig& cfg, const std::function<void(const HistoryEntry&)>& on_eval = {});

/// Probability of class 1 per sample, infer-mode batch norm. Each sample's
/// result is independent of batching and thread count.
std::vector<double> predict(const NetworkParams<float>& params, std::span<const float> samples, int jobs = 1);
std::vector<double> predict(const NetworkParams<float>& params, const augment::SampleArchive& archive, int jobs = 1);

std::vector<ensemble::ViewPrediction> to_view_predictions(const std::string& model_id,
                                                          const augment::SampleArchive& archive,
                                                          const std::vector<double>& probs);

/// Lesion-level AUC after averaging each finding's views.
double multiview_auc(const augment::SampleArchive& archive, const std::vector<double>& probs);

inline constexpr int kModelFormatVersion = 1;

/// `<path>` manifest plus `<path>.raw` float32 little-endian payload.
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace lesionkit::xmasnet
