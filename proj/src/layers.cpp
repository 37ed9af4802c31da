#include "lesionkit/layers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "lesionkit/error.hpp"

namespace lesionkit::xmasnet {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::ShapeMismatch, what);
}

// cols is (C*9) x (H*W); row r = c*9 + ky*3 + kx.
template <typename T>
void im2col(const T* img, int C, int H, int W, T* cols) {
  const int HW = H * W;
  for (int c = 0; c < C; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * HW;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * HW;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - 1;
          T* dst = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, T(0));
            continue;
          }
          const T* src = plane + sy * W;
          for (int x = 0; x < W; ++x) {
            const int sx = x + kx - 1;
            dst[x] = (sx < 0 || sx >= W) ? T(0) : src[sx];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void conv3x3_forward(const Tensor4<T>& in, std::span<const T> weight, std::span<const T> bias, int out_ch,
                     Tensor4<T>& out) {
  const int C = in.c, H = in.h, W = in.w, HW = H * W;
  require(out_ch > 0 && weight.size() == static_cast<std::size_t>(out_ch) * C * 9,
          "conv weight must be [K][C][3][3]");
  require(bias.size() == static_cast<std::size_t>(out_ch), "conv bias must have K entries");
  require(in.size() == static_cast<std::size_t>(in.n) * C * HW && in.n > 0, "conv input shape");
  out.resize(in.n, out_ch, H, W);

  std::vector<T> cols(static_cast<std::size_t>(C) * 9 * HW);
  CMapMat<T> wm(weight.data(), out_ch, C * 9);
  CMapMat<T> cm(cols.data(), C * 9, HW);
  for (int n = 0; n < in.n; ++n) {
    im2col(in.data.data() + n * in.per_sample(), C, H, W, cols.data());
    MapMat<T> om(out.data.data() + n * out.per_sample(), out_ch, HW);
    om.noalias() = wm * cm;
    for (int k = 0; k < out_ch; ++k) om.row(k).array() += bias[k];
  }
}

template <typename T>
void conv3x3_backward(const Tensor4<T>& in, std::span<const T> weight, const Tensor4<T>& grad_out,
                      Tensor4<T>* grad_in, std::span<T> grad_w, std::span<T> grad_b) {
  const int C = in.c, H = in.h, W = in.w, HW = H * W, K = grad_out.c;
  require(grad_out.n == in.n && grad_out.h == H && grad_out.w == W, "conv grad_out shape");
  require(weight.size() == static_cast<std::size_t>(K) * C * 9 && grad_w.size() == weight.size() &&
              grad_b.size() == static_cast<std::size_t>(K),
          "conv gradient buffers");

  std::vector<T> cols(static_cast<std::size_t>(std::max(C, K)) * 9 * HW);
  MapMat<T> gw(grad_w.data(), K, C * 9);
  gw.setZero();
  std::fill(grad_b.begin(), grad_b.end(), T(0));

  for (int n = 0; n < in.n; ++n) {
    im2col(in.data.data() + n * in.per_sample(), C, H, W, cols.data());
    CMapMat<T> cm(cols.data(), C * 9, HW);
    CMapMat<T> go(grad_out.data.data() + n * grad_out.per_sample(), K, HW);
    gw.noalias() += go * cm.transpose();
    // Plain loops: Eigen reductions peel by address alignment, which would make
    // sums depend on where the allocator placed the buffer.
    for (int k = 0; k < K; ++k) {
      const T* row = grad_out.data.data() + n * grad_out.per_sample() + static_cast<std::size_t>(k) * HW;
      T s = 0;
      for (int i = 0; i < HW; ++i) s += row[i];
      grad_b[k] += s;
    }
  }
  if (!grad_in) return;

  // The input gradient is a padded 3x3 correlation of grad_out with the
  // kernels transposed over (in, out) channels and flipped in space.
  std::vector<T> flipped(weight.size());
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < 9; ++t) flipped[(c * K + k) * 9 + t] = weight[(k * C + c) * 9 + (8 - t)];
  grad_in->resize(in.n, C, H, W);
  CMapMat<T> fm(flipped.data(), C, K * 9);
  CMapMat<T> gm(cols.data(), K * 9, HW);
  for (int n = 0; n < in.n; ++n) {
    im2col(grad_out.data.data() + n * grad_out.per_sample(), K, H, W, cols.data());
    MapMat<T>(grad_in->data.data() + n * grad_in->per_sample(), C, HW).noalias() = fm * gm;
  }
}

template <typename T>
void batchnorm_forward(const Tensor4<T>& in, std::span<const T> gamma, std::span<const T> beta,
                       std::span<T> running_mean, std::span<T> running_var, bool train, Tensor4<T>& out,
                       BatchNormCache<T>* cache) {
  const int C = in.c;
  const std::size_t HW = static_cast<std::size_t>(in.h) * in.w;
  require(gamma.size() == static_cast<std::size_t>(C) && beta.size() == gamma.size() &&
              running_mean.size() == gamma.size() && running_var.size() == gamma.size(),
          "batchnorm parameter length");
  out.resize(in.n, in.c, in.h, in.w);

  if (!train) {
    for (int c = 0; c < C; ++c) {
      const T scale = gamma[c] / static_cast<T>(std::sqrt(static_cast<double>(running_var[c]) + kBnEps));
      const T shift = beta[c] - scale * running_mean[c];
      for (int n = 0; n < in.n; ++n) {
        const T* src = in.data.data() + (static_cast<std::size_t>(n) * C + c) * HW;
        T* dst = out.data.data() + (static_cast<std::size_t>(n) * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) dst[i] = scale * src[i] + shift;
      }
    }
    return;
  }

  const std::size_t M = static_cast<std::size_t>(in.n) * HW;
  if (M < 2) fail(ErrorCode::DegenerateBatch, "batch statistics need at least two values per channel");
  if (cache) {
    cache->xhat.resize(in.size());
    cache->inv_std.resize(C);
  }
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    for (int n = 0; n < in.n; ++n) {
      const T* src = in.data.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) sum += src[i];
    }
    const double mean = sum / static_cast<double>(M);
    double ss = 0.0;
    for (int n = 0; n < in.n; ++n) {
      const T* src = in.data.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const double d = src[i] - mean;
        ss += d * d;
      }
    }
    const double var = ss / static_cast<double>(M);
    const double inv_std = 1.0 / std::sqrt(var + kBnEps);
    for (int n = 0; n < in.n; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T xh = static_cast<T>((in.data[base + i] - mean) * inv_std);
        if (cache) cache->xhat[base + i] = xh;
        out.data[base + i] = gamma[c] * xh + beta[c];
      }
    }
    if (cache) cache->inv_std[c] = static_cast<T>(inv_std);
    const double unbiased = ss / static_cast<double>(M - 1);
    running_mean[c] = static_cast<T>(kBnMomentum * running_mean[c] + (1.0 - kBnMomentum) * mean);
    running_var[c] = static_cast<T>(kBnMomentum * running_var[c] + (1.0 - kBnMomentum) * unbiased);
  }
}

template <typename T>
void batchnorm_backward(const Tensor4<T>& grad_out, std::span<const T> gamma, const BatchNormCache<T>& cache,
                        Tensor4<T>& grad_in, std::span<T> grad_gamma, std::span<T> grad_beta) {
  const int C = grad_out.c;
  const std::size_t HW = static_cast<std::size_t>(grad_out.h) * grad_out.w;
  require(cache.xhat.size() == grad_out.size() && cache.inv_std.size() == static_cast<std::size_t>(C),
          "batchnorm cache does not match gradient");
  require(grad_gamma.size() == static_cast<std::size_t>(C) && grad_beta.size() == grad_gamma.size(),
          "batchnorm gradient buffers");
  grad_in.resize(grad_out.n, grad_out.c, grad_out.h, grad_out.w);
  const double M = static_cast<double>(grad_out.n) * static_cast<double>(HW);

  for (int c = 0; c < C; ++c) {
    double sdy = 0.0, sdyx = 0.0;
    for (int n = 0; n < grad_out.n; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        sdy += grad_out.data[base + i];
        sdyx += static_cast<double>(grad_out.data[base + i]) * cache.xhat[base + i];
      }
    }
    grad_gamma[c] = static_cast<T>(sdyx);
    grad_beta[c] = static_cast<T>(sdy);
    const double k = static_cast<double>(gamma[c]) * cache.inv_std[c] / M;
    for (int n = 0; n < grad_out.n; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        grad_in.data[base + i] =
            static_cast<T>(k * (M * grad_out.data[base + i] - sdy - cache.xhat[base + i] * sdyx));
      }
    }
  }
}

template <typename T>
void relu_forward(std::span<const T> in, std::span<T> out) {
  require(in.size() == out.size(), "relu length");
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

template <typename T>
void relu_backward(std::span<const T> out, std::span<const T> grad_out, std::span<T> grad_in) {
  require(out.size() == grad_out.size() && out.size() == grad_in.size(), "relu gradient length");
  for (std::size_t i = 0; i < out.size(); ++i) grad_in[i] = out[i] > T(0) ? grad_out[i] : T(0);
}

template <typename T>
void maxpool2x2_forward(const Tensor4<T>& in, Tensor4<T>& out, std::vector<std::int32_t>& argmax) {
  require(in.h % 2 == 0 && in.w % 2 == 0 && in.h > 0, "maxpool needs even spatial dims");
  const int OH = in.h / 2, OW = in.w / 2;
  out.resize(in.n, in.c, OH, OW);
  argmax.assign(out.size(), 0);
  const int planes = in.n * in.c;
  for (int p = 0; p < planes; ++p) {
    const T* src = in.data.data() + static_cast<std::size_t>(p) * in.h * in.w;
    T* dst = out.data.data() + static_cast<std::size_t>(p) * OH * OW;
    std::int32_t* am = argmax.data() + static_cast<std::size_t>(p) * OH * OW;
    for (int y = 0; y < OH; ++y) {
      for (int x = 0; x < OW; ++x) {
        int best = (2 * y) * in.w + 2 * x;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * y + dy) * in.w + 2 * x + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        dst[y * OW + x] = src[best];
        am[y * OW + x] = best;
      }
    }
  }
}

template <typename T>
void maxpool2x2_backward(const Tensor4<T>& grad_out, const std::vector<std::int32_t>& argmax, Tensor4<T>& grad_in) {
  require(argmax.size() == grad_out.size(), "maxpool argmax length");
  grad_in.resize(grad_out.n, grad_out.c, grad_out.h * 2, grad_out.w * 2);
  const int planes = grad_out.n * grad_out.c;
  const std::size_t oplane = static_cast<std::size_t>(grad_out.h) * grad_out.w;
  const std::size_t iplane = oplane * 4;
  for (int p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < oplane; ++i) {
      grad_in.data[p * iplane + argmax[p * oplane + i]] += grad_out.data[p * oplane + i];
    }
  }
}

// Dot products over 16 independent lanes reduced in a fixed order; every
// output element follows the same arithmetic whatever block it falls in.
template <typename T, int R, int P>
void fc_block(const T* x, std::size_t K, const T* w, const T* bias, std::size_t O, std::size_t r0, std::size_t o0,
              T* out) {
  constexpr int L = 16;
  T acc[R][P][L] = {};
  const std::size_t kv = K / L * L;
  for (std::size_t k = 0; k < kv; k += L) {
    for (int r = 0; r < R; ++r) {
      const T* xr = x + (r0 + r) * K + k;
      for (int p = 0; p < P; ++p) {
        const T* wp = w + (o0 + p) * K + k;
        for (int l = 0; l < L; ++l) acc[r][p][l] += xr[l] * wp[l];
      }
    }
  }
  for (int r = 0; r < R; ++r) {
    for (int p = 0; p < P; ++p) {
      T s = acc[r][p][0];
      for (int l = 1; l < L; ++l) s += acc[r][p][l];
      for (std::size_t k = kv; k < K; ++k) s += x[(r0 + r) * K + k] * w[(o0 + p) * K + k];
      out[(r0 + r) * O + o0 + p] = bias[o0 + p] + s;
    }
  }
}

template <typename T>
void fc_forward(std::span<const T> in, int n, int in_features, std::span<const T> weight, std::span<const T> bias,
                int out_features, std::span<T> out) {
  const std::size_t K = in_features, O = out_features, N = n;
  require(in.size() == N * K, "fc input length");
  require(weight.size() == O * K && bias.size() == O, "fc weight must be [out][in]");
  require(out.size() == N * O, "fc output length");
  const T *x = in.data(), *w = weight.data(), *b = bias.data();
  T* y = out.data();
  // Output blocks outermost so a block of weight rows stays cached across the batch.
  std::size_t o = 0;
  for (; o + 4 <= O; o += 4) {
    std::size_t r = 0;
    for (; r + 4 <= N; r += 4) fc_block<T, 4, 4>(x, K, w, b, O, r, o, y);
    for (; r < N; ++r) fc_block<T, 1, 4>(x, K, w, b, O, r, o, y);
  }
  for (; o < O; ++o) {
    std::size_t r = 0;
    for (; r + 4 <= N; r += 4) fc_block<T, 4, 1>(x, K, w, b, O, r, o, y);
    for (; r < N; ++r) fc_block<T, 1, 1>(x, K, w, b, O, r, o, y);
  }
}

template <typename T>
void fc_backward(std::span<const T> in, int n, int in_features, std::span<const T> weight, int out_features,
                 std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_w, std::span<T> grad_b) {
  const int K = in_features, O = out_features;
  require(in.size() == static_cast<std::size_t>(n) * K && grad_out.size() == static_cast<std::size_t>(n) * O,
          "fc gradient input length");
  require(grad_w.size() == weight.size() && weight.size() == static_cast<std::size_t>(O) * K &&
              grad_b.size() == static_cast<std::size_t>(O),
          "fc gradient buffers");
  CMapMat<T> x(in.data(), n, K);
  CMapMat<T> g(grad_out.data(), n, O);
  MapMat<T>(grad_w.data(), O, K).noalias() = g.transpose() * x;
  std::fill(grad_b.begin(), grad_b.end(), T(0));
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < O; ++o) grad_b[o] += grad_out[static_cast<std::size_t>(r) * O + o];
  if (!grad_in.empty()) {
    require(grad_in.size() == in.size(), "fc grad_in length");
    MapMat<T>(grad_in.data(), n, K).noalias() = g * CMapMat<T>(weight.data(), O, K);
  }
}

template <typename T>
double softmax_xent(std::span<const T> logits, std::span<const int> labels, std::span<T> probs, std::span<T> grad) {
  const std::size_t n = labels.size();
  require(n > 0 && logits.size() == 2 * n && probs.size() == 2 * n, "softmax expects N x 2 logits");
  require(grad.empty() || grad.size() == 2 * n, "softmax gradient length");
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) fail(ErrorCode::InvalidArgument, "labels must be 0 or 1");
    const double l0 = logits[2 * i], l1 = logits[2 * i + 1];
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    const double s = e0 + e1;
    const double p0 = e0 / s, p1 = e1 / s;
    probs[2 * i] = static_cast<T>(p0);
    probs[2 * i + 1] = static_cast<T>(p1);
    const double ly = labels[i] == 0 ? l0 : l1;
    loss += -(ly - m - std::log(s));
    if (!grad.empty()) {
      grad[2 * i] = static_cast<T>((p0 - (labels[i] == 0 ? 1.0 : 0.0)) / static_cast<double>(n));
      grad[2 * i + 1] = static_cast<T>((p1 - (labels[i] == 1 ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  return loss / static_cast<double>(n);
}

#define LK_INSTANTIATE_LAYERS(T)                                                                                  \
  template void conv3x3_forward<T>(const Tensor4<T>&, std::span<const T>, std::span<const T>, int, Tensor4<T>&); \
  template void conv3x3_backward<T>(const Tensor4<T>&, std::span<const T>, const Tensor4<T>&, Tensor4<T>*,      \
                                    std::span<T>, std::span<T>);                                                 \
  template void batchnorm_forward<T>(const Tensor4<T>&, std::span<const T>, std::span<const T>, std::span<T>,    \
                                     std::span<T>, bool, Tensor4<T>&, BatchNormCache<T>*);                       \
  template void batchnorm_backward<T>(const Tensor4<T>&, std::span<const T>, const BatchNormCache<T>&,          \
                                      Tensor4<T>&, std::span<T>, std::span<T>);                                  \
  template void relu_forward<T>(std::span<const T>, std::span<T>);                                               \
  template void relu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);                          \
  template void maxpool2x2_forward<T>(const Tensor4<T>&, Tensor4<T>&, std::vector<std::int32_t>&);               \
  template void maxpool2x2_backward<T>(const Tensor4<T>&, const std::vector<std::int32_t>&, Tensor4<T>&);        \
  template void fc_forward<T>(std::span<const T>, int, int, std::span<const T>, std::span<const T>, int,         \
                              std::span<T>);                                                                     \
  template void fc_backward<T>(std::span<const T>, int, int, std::span<const T>, int, std::span<const T>,        \
                               std::span<T>, std::span<T>, std::span<T>);                                        \
  template double softmax_xent<T>(std::span<const T>, std::span<const int>, std::span<T>, std::span<T>);

LK_INSTANTIATE_LAYERS(float)
LK_INSTANTIATE_LAYERS(double)

#undef LK_INSTANTIATE_LAYERS

}  // namespace lesionkit::xmasnet
