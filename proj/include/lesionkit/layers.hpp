#pragma once

// CNN building blocks with hand-written backward passes. Instantiated for
// float (training) and double (gradient checks).

#include <cstdint>
#include <span>
#include <vector>

namespace lesionkit::xmasnet {

/// Dense N x C x H x W activation, row-major.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_) { resize(n_, c_, h_, w_); }

  void resize(int n_, int c_, int h_, int w_) {
    n = n_, c = c_, h = h_, w = w_;
    data.assign(static_cast<std::size_t>(n) * c * h * w, T(0));
  }
  std::size_t size() const { return data.size(); }
  std::size_t per_sample() const { return static_cast<std::size_t>(c) * h * w; }
  T& at(int in, int ic, int y, int x) { return data[((static_cast<std::size_t>(in) * c + ic) * h + y) * w + x]; }
  T at(int in, int ic, int y, int x) const {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + y) * w + x];
  }
};

/// 3x3 cross-correlation, stride 1, zero padding 1. weight is [K][C][3][3].
template <typename T>
void conv3x3_forward(const Tensor4<T>& in, std::span<const T> weight, std::span<const T> bias, int out_ch,
                     Tensor4<T>& out);

/// grad_w / grad_b are overwritten. grad_in may be null (first layer).
template <typename T>
void conv3x3_backward(const Tensor4<T>& in, std::span<const T> weight, const Tensor4<T>& grad_out,
                      Tensor4<T>* grad_in, std::span<T> grad_w, std::span<T> grad_b);

template <typename T>
struct BatchNormCache {
  std::vector<T> xhat;
  std::vector<T> inv_std;  // per channel
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;

/// Train mode normalizes with batch statistics over N*H*W and folds them into
/// the running estimates (running = 0.9 running + 0.1 batch, unbiased variance).
/// Infer mode uses the running estimates.
template <typename T>
void batchnorm_forward(const Tensor4<T>& in, std::span<const T> gamma, std::span<const T> beta,
                       std::span<T> running_mean, std::span<T> running_var, bool train, Tensor4<T>& out,
                       BatchNormCache<T>* cache);

/// Train-mode gradient. grad_gamma / grad_beta are overwritten.
template <typename T>
void batchnorm_backward(const Tensor4<T>& grad_out, std::span<const T> gamma, const BatchNormCache<T>& cache,
                        Tensor4<T>& grad_in, std::span<T> grad_gamma, std::span<T> grad_beta);

template <typename T>
void relu_forward(std::span<const T> in, std::span<T> out);
/// Gradient gated on the forward output being positive.
template <typename T>
void relu_backward(std::span<const T> out, std::span<const T> grad_out, std::span<T> grad_in);

/// 2x2 window, stride 2. argmax holds the winning input offset per output;
/// ties go to the first element in row-major scan order.
template <typename T>
void maxpool2x2_forward(const Tensor4<T>& in, Tensor4<T>& out, std::vector<std::int32_t>& argmax);
template <typename T>
void maxpool2x2_backward(const Tensor4<T>& grad_out, const std::vector<std::int32_t>& argmax, Tensor4<T>& grad_in);

/// out[n][o] = bias[o] + sum_k in[n][k] * weight[o][k]. Every element is
/// summed in the same fixed order, so a row's result does not depend on which
/// other rows share the batch.
template <typename T>
void fc_forward(std::span<const T> in, int n, int in_features, std::span<const T> weight, std::span<const T> bias,
                int out_features, std::span<T> out);
/// grad_w / grad_b are overwritten. grad_in may be empty.
template <typename T>
void fc_backward(std::span<const T> in, int n, int in_features, std::span<const T> weight, int out_features,
                 std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_w, std::span<T> grad_b);

/// Max-shifted softmax over 2 classes with mean cross-entropy. Writes probs
/// (N x 2) and, when grad is non-empty, (probs - onehot) / N.
template <typename T>
double softmax_xent(std::span<const T> logits, std::span<const int> labels, std::span<T> probs, std::span<T> grad);

}  // namespace lesionkit::xmasnet
