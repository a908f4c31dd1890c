#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tsbnet/blas.hpp"
#include "tsbnet/rng.hpp"
#include "tsbnet/tensor.hpp"

namespace tsbnet {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// ---------------------------------------------------------------------------
// conv2d: stride-1 cross-correlation with "same" zero padding, kernel odd.
// Implemented as per-sample im2col + GEMM; the quadruple-loop reference the
// tests compare against lives in test code.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W,
            std::int64_t k, std::int64_t pad, T* col) {
  const std::int64_t HW = H * W;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj, ++row) {
        T* dst = col + row * HW;
        for (std::int64_t h = 0; h < H; ++h) {
          const std::int64_t sh = h + ki - pad;
          if (sh < 0 || sh >= H) {
            std::fill(dst + h * W, dst + (h + 1) * W, T{});
            continue;
          }
          const T* src = x + (c * H + sh) * W;
          for (std::int64_t w = 0; w < W; ++w) {
            const std::int64_t sw = w + kj - pad;
            dst[h * W + w] = (sw < 0 || sw >= W) ? T{} : src[sw];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_accum(const T* col, std::int64_t C, std::int64_t H, std::int64_t W,
                  std::int64_t k, std::int64_t pad, T* gx) {
  const std::int64_t HW = H * W;
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj, ++row) {
        const T* src = col + row * HW;
        for (std::int64_t h = 0; h < H; ++h) {
          const std::int64_t sh = h + ki - pad;
          if (sh < 0 || sh >= H) continue;
          T* dst = gx + (c * H + sh) * W;
          for (std::int64_t w = 0; w < W; ++w) {
            const std::int64_t sw = w + kj - pad;
            if (sw >= 0 && sw < W) dst[sw] += src[h * W + w];
          }
        }
      }
    }
  }
}

inline void check_conv_shapes(const std::vector<std::int64_t>& xs,
                              const std::vector<std::int64_t>& ws) {
  require(xs.size() == 4, "conv2d: input must be [N,C,H,W]");
  require(ws.size() == 4, "conv2d: weights must be [K,C,kh,kw]");
  require(ws[1] == xs[1], "conv2d: input channels mismatch");
  require(ws[2] == ws[3], "conv2d: kernel must be square");
  require(ws[2] % 2 == 1, "conv2d: kernel must be odd");
}

}  // namespace detail

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const Tensor<T>& b) {
  detail::check_conv_shapes(x.shape(), w.shape());
  require(b.rank() == 1 && b.dim(0) == w.dim(0), "conv2d: bias must be [K]");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t K = w.dim(0), k = w.dim(2), pad = (k - 1) / 2;
  const std::int64_t ckk = C * k * k, HW = H * W;

  Tensor<T> y({N, K, H, W});
  std::vector<T> col(static_cast<std::size_t>(ckk) * HW);
  for (std::int64_t n = 0; n < N; ++n) {
    detail::im2col(x.data() + n * C * HW, C, H, W, k, pad, col.data());
    T* yn = y.data() + n * K * HW;
    gemm(false, false, static_cast<int>(K), static_cast<int>(HW),
         static_cast<int>(ckk), T{1}, w.data(), static_cast<int>(ckk), col.data(),
         static_cast<int>(HW), T{0}, yn, static_cast<int>(HW));
    for (std::int64_t kk = 0; kk < K; ++kk) {
      const T beta = b[static_cast<std::size_t>(kk)];
      T* row = yn + kk * HW;
      for (std::int64_t i = 0; i < HW; ++i) row[i] += beta;
    }
  }
  return y;
}

template <class T>
struct Conv2dGrads {
  Tensor<T> gx, gw, gb;
};

template <class T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w,
                               const Tensor<T>& gy, bool need_gx = true) {
  detail::check_conv_shapes(x.shape(), w.shape());
  require(gy.rank() == 4 && gy.dim(0) == x.dim(0) && gy.dim(1) == w.dim(0) &&
              gy.dim(2) == x.dim(2) && gy.dim(3) == x.dim(3),
          "conv2d_backward: upstream gradient shape mismatch");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t K = w.dim(0), k = w.dim(2), pad = (k - 1) / 2;
  const std::int64_t ckk = C * k * k, HW = H * W;

  Conv2dGrads<T> g{need_gx ? Tensor<T>(x.shape()) : Tensor<T>{},
                   Tensor<T>(w.shape()), Tensor<T>({K})};
  std::vector<T> col(static_cast<std::size_t>(ckk) * HW);
  std::vector<T> gcol(need_gx ? static_cast<std::size_t>(ckk) * HW : 0);

  for (std::int64_t n = 0; n < N; ++n) {
    const T* gyn = gy.data() + n * K * HW;
    detail::im2col(x.data() + n * C * HW, C, H, W, k, pad, col.data());
    // gw += gy_n * col^T
    gemm(false, true, static_cast<int>(K), static_cast<int>(ckk),
         static_cast<int>(HW), T{1}, gyn, static_cast<int>(HW), col.data(),
         static_cast<int>(HW), T{1}, g.gw.data(), static_cast<int>(ckk));
    for (std::int64_t kk = 0; kk < K; ++kk) {
      T acc{};
      const T* row = gyn + kk * HW;
      for (std::int64_t i = 0; i < HW; ++i) acc += row[i];
      g.gb[static_cast<std::size_t>(kk)] += acc;
    }
    if (need_gx) {
      gemm(true, false, static_cast<int>(ckk), static_cast<int>(HW),
           static_cast<int>(K), T{1}, w.data(), static_cast<int>(ckk), gyn,
           static_cast<int>(HW), T{0}, gcol.data(), static_cast<int>(HW));
      detail::col2im_accum(gcol.data(), C, H, W, k, pad, g.gx.data() + n * C * HW);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Ties go to the first element in row-major
// window order; argmax keeps flat indices into the input for the backward
// scatter.
// ---------------------------------------------------------------------------

template <class T>
struct Pool2Out {
  Tensor<T> y;
  Tensor<std::int64_t> argmax;
};

template <class T>
Pool2Out<T> maxpool2_forward(const Tensor<T>& x) {
  require(x.rank() == 4, "maxpool2: input must be [N,C,H,W]");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(H % 2 == 0 && W % 2 == 0, "maxpool2: spatial dims must be even");
  const std::int64_t Ho = H / 2, Wo = W / 2;

  Pool2Out<T> out{Tensor<T>({N, C, Ho, Wo}), Tensor<std::int64_t>({N, C, Ho, Wo})};
  std::size_t o = 0;
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = x.data() + nc * H * W;
    const std::int64_t base = nc * H * W;
    for (std::int64_t i = 0; i < Ho; ++i) {
      for (std::int64_t j = 0; j < Wo; ++j, ++o) {
        std::int64_t best = 2 * i * W + 2 * j;
        T bv = plane[best];
        const std::int64_t cand[3] = {2 * i * W + 2 * j + 1, (2 * i + 1) * W + 2 * j,
                                      (2 * i + 1) * W + 2 * j + 1};
        for (std::int64_t idx : cand) {
          if (plane[idx] > bv) {
            bv = plane[idx];
            best = idx;
          }
        }
        out.y[o] = bv;
        out.argmax[o] = base + best;
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> maxpool2_backward(const Tensor<std::int64_t>& argmax, const Tensor<T>& gy,
                            const std::vector<std::int64_t>& input_shape) {
  require(argmax.shape() == gy.shape(),
          "maxpool2_backward: argmax/gradient shape mismatch");
  Tensor<T> gx(input_shape);
  for (std::size_t i = 0; i < gy.size(); ++i)
    gx[static_cast<std::size_t>(argmax[i])] += gy[i];
  return gx;
}

// ---------------------------------------------------------------------------
// Fully connected: y = x * W^T + b with x [N,D], W [M,D], b [M].
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> fc_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(x.rank() == 2 && w.rank() == 2, "fc: x must be [N,D], w [M,D]");
  require(x.dim(1) == w.dim(1), "fc: inner dimension mismatch");
  require(b.rank() == 1 && b.dim(0) == w.dim(0), "fc: bias must be [M]");
  const std::int64_t N = x.dim(0), D = x.dim(1), M = w.dim(0);
  Tensor<T> y({N, M});
  for (std::int64_t n = 0; n < N; ++n)
    std::copy(b.data(), b.data() + M, y.data() + n * M);
  gemm(false, true, static_cast<int>(N), static_cast<int>(M), static_cast<int>(D),
       T{1}, x.data(), static_cast<int>(D), w.data(), static_cast<int>(D), T{1},
       y.data(), static_cast<int>(M));
  return y;
}

template <class T>
struct FcGrads {
  Tensor<T> gx, gw, gb;
};

template <class T>
FcGrads<T> fc_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                       bool need_gx = true) {
  require(gy.rank() == 2 && gy.dim(0) == x.dim(0) && gy.dim(1) == w.dim(0),
          "fc_backward: upstream gradient shape mismatch");
  const std::int64_t N = x.dim(0), D = x.dim(1), M = w.dim(0);
  FcGrads<T> g{need_gx ? Tensor<T>({N, D}) : Tensor<T>{}, Tensor<T>({M, D}),
               Tensor<T>({M})};
  gemm(true, false, static_cast<int>(M), static_cast<int>(D), static_cast<int>(N),
       T{1}, gy.data(), static_cast<int>(M), x.data(), static_cast<int>(D), T{0},
       g.gw.data(), static_cast<int>(D));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t m = 0; m < M; ++m) g.gb[static_cast<std::size_t>(m)] += gy[n * M + m];
  if (need_gx)
    gemm(false, false, static_cast<int>(N), static_cast<int>(D), static_cast<int>(M),
         T{1}, gy.data(), static_cast<int>(M), w.data(), static_cast<int>(D), T{0},
         g.gx.data(), static_cast<int>(D));
  return g;
}

// ---------------------------------------------------------------------------
// PReLU with one slope per channel (dim 1). x == 0 takes the slope branch.
// ---------------------------------------------------------------------------

namespace detail {
inline std::int64_t prelu_inner(const std::vector<std::int64_t>& shape) {
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) inner *= shape[i];
  return inner;
}
}  // namespace detail

template <class T>
Tensor<T> prelu_forward(const Tensor<T>& x, const Tensor<T>& slopes) {
  require(x.rank() >= 2, "prelu: input must have a channel dimension");
  require(slopes.rank() == 1 && slopes.dim(0) == x.dim(1),
          "prelu: one slope per channel required");
  const std::int64_t C = x.dim(1), inner = detail::prelu_inner(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::int64_t c = (static_cast<std::int64_t>(i) / inner) % C;
    const T v = x[i];
    y[i] = v > T{0} ? v : slopes[static_cast<std::size_t>(c)] * v;
  }
  return y;
}

template <class T>
struct PreluGrads {
  Tensor<T> gx, gslopes;
};

template <class T>
PreluGrads<T> prelu_backward(const Tensor<T>& x, const Tensor<T>& slopes,
                             const Tensor<T>& gy) {
  require(x.same_shape(gy), "prelu_backward: shape mismatch");
  const std::int64_t C = x.dim(1), inner = detail::prelu_inner(x.shape());
  PreluGrads<T> g{Tensor<T>(x.shape()), Tensor<T>({C})};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = static_cast<std::size_t>((static_cast<std::int64_t>(i) / inner) % C);
    const T v = x[i];
    if (v > T{0}) {
      g.gx[i] = gy[i];
    } else {
      g.gx[i] = slopes[c] * gy[i];
      g.gslopes[c] += v * gy[i];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Residual addition. Backward is the sum rule: both branches receive the
// upstream gradient unchanged, so no explicit backward kernel is needed.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> residual_add(const Tensor<T>& main, const Tensor<T>& skip) {
  require(main.same_shape(skip), "residual_add: shape mismatch " + main.shape_str() +
                                     " vs " + skip.shape_str());
  Tensor<T> y(main.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = main[i] + skip[i];
  return y;
}

// ---------------------------------------------------------------------------
// Mean squared error over all elements; grad = 2 (pred - label) / numel.
// ---------------------------------------------------------------------------

template <class T>
struct MseOut {
  double loss = 0.0;
  Tensor<T> grad;
};

template <class T>
MseOut<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& label) {
  require(pred.same_shape(label), "mse_loss: shape mismatch");
  MseOut<T> out{0.0, Tensor<T>(pred.shape())};
  const double inv = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(label[i]);
    out.loss += d * d;
    out.grad[i] = static_cast<T>(2.0 * d * inv);
  }
  out.loss *= inv;
  return out;
}

// ---------------------------------------------------------------------------
// Initialization: fan-in scaled uniform for weights, zeros for biases,
// 0.25 for PReLU slopes.
// ---------------------------------------------------------------------------

template <class T>
void init_fan_in_uniform(Tensor<T>& w, std::int64_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace tsbnet
