#pragma once

// Differentiable primitives. Forward results are checked for NaN/Inf.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "derain/nn/parallel.hpp"
#include "derain/nn/tensor.hpp"

namespace derain::nn {

namespace detail {

// Patch matrix with rows (c, ky, kx) and columns (y, x); out-of-image taps are 0.
template <class T>
void im2col(const T* src, int C, int H, int W, int K, T* col) {
  const int P = K / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        T* row = col + ((static_cast<std::size_t>(c) * K + ky) * K + kx) * HW;
        const T* plane = src + static_cast<std::size_t>(c) * HW;
        const int dy = ky - P, dx = kx - P;
        for (int y = 0; y < H; ++y) {
          T* dst = row + static_cast<std::size_t>(y) * W;
          const int sy = y + dy;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, T(0));
            continue;
          }
          const T* s = plane + static_cast<std::size_t>(sy) * W + dx;
          const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
          std::fill(dst, dst + x0, T(0));
          std::copy(s + x0, s + x1, dst + x0);
          std::fill(dst + x1, dst + W, T(0));
        }
      }
}

// Adjoint of im2col: scatters patch-matrix gradients back onto the image.
template <class T>
void col2im_add(const T* col, int C, int H, int W, int K, T* dst) {
  const int P = K / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(c) * K + ky) * K + kx) * HW;
        T* plane = dst + static_cast<std::size_t>(c) * HW;
        const int dy = ky - P, dx = kx - P;
        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
        for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y) {
          const T* s = row + static_cast<std::size_t>(y) * W;
          T* d = plane + static_cast<std::size_t>(y + dy) * W + dx;
          for (int x = x0; x < x1; ++x) d[x] += s[x];
        }
      }
}

// Dot product with a fixed 16-lane accumulation order, so it vectorizes
// without reassociation and stays bitwise reproducible.
template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T lanes[16] = {};
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16)
    for (int j = 0; j < 16; ++j) lanes[j] += a[i + j] * b[i + j];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  T acc = 0;
  for (T l : lanes) acc += l;
  return acc + tail;
}

}  // namespace detail

/// Stride-1 convolution with zero padding k/2, so the spatial size is kept.
/// weight: (out, in, k, k); bias: (1, out, 1, 1).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape xs = x.shape(), ws = weight.shape();
  if (ws.c != xs.c) throw std::invalid_argument("conv2d: channel mismatch, weights expect " +
                                                std::to_string(ws.c) + " got " + std::to_string(xs.c));
  if (ws.h != ws.w || (ws.h != 1 && ws.h != 3)) throw std::invalid_argument("conv2d: kernel must be 1 or 3");
  if (bias.size() != static_cast<std::size_t>(ws.n)) throw std::invalid_argument("conv2d: bias size");
  const int N = xs.n, C = xs.c, H = xs.h, W = xs.w, O = ws.n, K = ws.h;
  const int R = C * K * K;  // patch-matrix rows
  const std::size_t HW = xs.plane();
  const Shape os{N, O, H, W};

  // A 1x1 kernel needs no patch matrix: the input planes already are one.
  auto patches = [=](const T* img, std::vector<T>& buf) -> const T* {
    if (K == 1) return img;
    buf.resize(static_cast<std::size_t>(R) * HW);
    detail::im2col(img, C, H, W, K, buf.data());
    return buf.data();
  };

  std::vector<T> out(os.size());
  {
    const T* wv = weight.data().data();
    const T* bv = bias.data().data();
    parallel_for(N, [&](int n) {
      std::vector<T> buf;
      const T* col = patches(x.data().data() + static_cast<std::size_t>(n) * C * HW, buf);
      for (int o = 0; o < O; ++o) {
        T* dst = out.data() + (static_cast<std::size_t>(n) * O + o) * HW;
        std::fill(dst, dst + HW, bv[o]);
        for (int r = 0; r < R; ++r) {
          const T w = wv[static_cast<std::size_t>(o) * R + r];
          const T* src = col + static_cast<std::size_t>(r) * HW;
          for (std::size_t i = 0; i < HW; ++i) dst[i] += w * src[i];
        }
      }
    });
  }

  return make_result<T>(
      os, std::move(out), {x, weight, bias},
      [x, weight, bias, N, C, H, W, O, K, R, HW, patches](Node<T>& self) {
        const T* g = self.grad.data();
        const T* wv = weight.data().data();
        if (x.requires_grad()) {
          T* gx = x.grad().data();
          parallel_for(N, [&](int n) {
            std::vector<T> dcol(static_cast<std::size_t>(R) * HW, T(0));
            for (int o = 0; o < O; ++o) {
              const T* go = g + (static_cast<std::size_t>(n) * O + o) * HW;
              for (int r = 0; r < R; ++r) {
                const T w = wv[static_cast<std::size_t>(o) * R + r];
                T* d = dcol.data() + static_cast<std::size_t>(r) * HW;
                for (std::size_t i = 0; i < HW; ++i) d[i] += w * go[i];
              }
            }
            T* dst = gx + static_cast<std::size_t>(n) * C * HW;
            if (K == 1) {
              for (std::size_t i = 0; i < dcol.size(); ++i) dst[i] += dcol[i];
            } else {
              detail::col2im_add(dcol.data(), C, H, W, K, dst);
            }
          });
        }
        if (weight.requires_grad() || bias.requires_grad()) {
          T* gw = weight.requires_grad() ? weight.grad().data() : nullptr;
          T* gb = bias.requires_grad() ? bias.grad().data() : nullptr;
          std::vector<T> buf;
          for (int n = 0; n < N; ++n) {
            const T* col = patches(x.data().data() + static_cast<std::size_t>(n) * C * HW, buf);
            parallel_for(O, [&](int o) {
              const T* go = g + (static_cast<std::size_t>(n) * O + o) * HW;
              if (gb) {
                T s = 0;
                for (std::size_t i = 0; i < HW; ++i) s += go[i];
                gb[o] += s;
              }
              if (gw)
                for (int r = 0; r < R; ++r)
                  gw[static_cast<std::size_t>(o) * R + r] += detail::dot(go, col + static_cast<std::size_t>(r) * HW, HW);
            });
          }
        }
      },
      "conv2d");
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b},
                        [a, b](Node<T>& self) {
                          for (const Tensor<T>* t : {&a, &b})
                            if (t->requires_grad()) {
                              auto g = t->grad();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                            }
                        },
                        "add");
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("sub: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b},
                        [a, b](Node<T>& self) {
                          if (a.requires_grad()) {
                            auto g = a.grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (b.requires_grad()) {
                            auto g = b.grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
                          }
                        },
                        "sub");
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    out[i] = v < T(0) ? T(0) : v;  // lets NaN through to the finiteness check
  }
  return make_result<T>(x.shape(), std::move(out), {x},
                        [x](Node<T>& self) {
                          auto g = x.grad();
                          auto v = x.data();
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (v[i] > T(0)) g[i] += self.grad[i];
                        },
                        "relu");
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
  return make_result<T>(x.shape(), out, {x},
                        [x, out](Node<T>& self) {
                          auto g = x.grad();
                          for (std::size_t i = 0; i < g.size(); ++i)
                            g[i] += self.grad[i] * out[i] * (T(1) - out[i]);
                        },
                        "sigmoid");
}

/// Global average pooling: (n,c,h,w) -> (n,c,1,1).
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape s = x.shape();
  const std::size_t HW = s.plane();
  std::vector<T> out(static_cast<std::size_t>(s.n) * s.c);
  for (std::size_t p = 0; p < out.size(); ++p) {
    T acc = 0;
    for (std::size_t i = 0; i < HW; ++i) acc += x.data()[p * HW + i];
    out[p] = acc / static_cast<T>(HW);
  }
  return make_result<T>({s.n, s.c, 1, 1}, std::move(out), {x},
                        [x, HW](Node<T>& self) {
                          auto g = x.grad();
                          const T inv = T(1) / static_cast<T>(HW);
                          for (std::size_t p = 0; p < self.grad.size(); ++p)
                            for (std::size_t i = 0; i < HW; ++i) g[p * HW + i] += self.grad[p] * inv;
                        },
                        "global_avg_pool");
}

/// x * s with s of shape (n,c,1,1) broadcast over space.
template <class T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  const Shape xs = x.shape();
  if (!(s.shape() == Shape{xs.n, xs.c, 1, 1})) throw std::invalid_argument("scale_channels: scale shape");
  const std::size_t HW = xs.plane();
  std::vector<T> out(x.size());
  for (std::size_t p = 0; p < s.size(); ++p)
    for (std::size_t i = 0; i < HW; ++i) out[p * HW + i] = x.data()[p * HW + i] * s.data()[p];
  return make_result<T>(xs, std::move(out), {x, s},
                        [x, s, HW](Node<T>& self) {
                          const T* g = self.grad.data();
                          if (x.requires_grad()) {
                            auto gx = x.grad();
                            for (std::size_t p = 0; p < s.size(); ++p)
                              for (std::size_t i = 0; i < HW; ++i) gx[p * HW + i] += g[p * HW + i] * s.data()[p];
                          }
                          if (s.requires_grad()) {
                            auto gs = s.grad();
                            for (std::size_t p = 0; p < s.size(); ++p) {
                              T acc = 0;
                              for (std::size_t i = 0; i < HW; ++i) acc += g[p * HW + i] * x.data()[p * HW + i];
                              gs[p] += acc;
                            }
                          }
                        },
                        "scale_channels");
}

/// x * s with s of shape (n,1,h,w) broadcast over channels.
template <class T>
Tensor<T> scale_pixels(const Tensor<T>& x, const Tensor<T>& s) {
  const Shape xs = x.shape();
  if (!(s.shape() == Shape{xs.n, 1, xs.h, xs.w})) throw std::invalid_argument("scale_pixels: scale shape");
  const std::size_t HW = xs.plane();
  const int C = xs.c;
  std::vector<T> out(x.size());
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i)
        out[(static_cast<std::size_t>(n) * C + c) * HW + i] =
            x.data()[(static_cast<std::size_t>(n) * C + c) * HW + i] * s.data()[n * HW + i];
  return make_result<T>(xs, std::move(out), {x, s},
                        [x, s, HW, C, N = xs.n](Node<T>& self) {
                          const T* g = self.grad.data();
                          T* gx = x.requires_grad() ? x.grad().data() : nullptr;
                          T* gs = s.requires_grad() ? s.grad().data() : nullptr;
                          for (int n = 0; n < N; ++n)
                            for (int c = 0; c < C; ++c)
                              for (std::size_t i = 0; i < HW; ++i) {
                                const std::size_t k = (static_cast<std::size_t>(n) * C + c) * HW + i;
                                if (gx) gx[k] += g[k] * s.data()[n * HW + i];
                                if (gs) gs[n * HW + i] += g[k] * x.data()[k];
                              }
                        },
                        "scale_pixels");
}

/// Per-pixel max and mean over channels, stacked as two channels. Ties in the
/// max route the gradient to the lowest channel index.
template <class T>
Tensor<T> channel_pool(const Tensor<T>& x) {
  const Shape xs = x.shape();
  const std::size_t HW = xs.plane();
  const int C = xs.c;
  std::vector<T> out(static_cast<std::size_t>(xs.n) * 2 * HW);
  std::vector<int> argmax(static_cast<std::size_t>(xs.n) * HW);
  for (int n = 0; n < xs.n; ++n)
    for (std::size_t i = 0; i < HW; ++i) {
      T best = -std::numeric_limits<T>::infinity(), sum = 0;
      int arg = 0;
      for (int c = 0; c < C; ++c) {
        const T v = x.data()[(static_cast<std::size_t>(n) * C + c) * HW + i];
        if (v > best) {
          best = v;
          arg = c;
        }
        sum += v;
      }
      out[(static_cast<std::size_t>(n) * 2) * HW + i] = best;
      out[(static_cast<std::size_t>(n) * 2 + 1) * HW + i] = sum / static_cast<T>(C);
      argmax[n * HW + i] = arg;
    }
  return make_result<T>({xs.n, 2, xs.h, xs.w}, std::move(out), {x},
                        [x, argmax = std::move(argmax), HW, C, N = xs.n](Node<T>& self) {
                          auto gx = x.grad();
                          const T invC = T(1) / static_cast<T>(C);
                          for (int n = 0; n < N; ++n)
                            for (std::size_t i = 0; i < HW; ++i) {
                              const T gmax = self.grad[(static_cast<std::size_t>(n) * 2) * HW + i];
                              const T gmean = self.grad[(static_cast<std::size_t>(n) * 2 + 1) * HW + i];
                              for (int c = 0; c < C; ++c) gx[(static_cast<std::size_t>(n) * C + c) * HW + i] += gmean * invC;
                              gx[(static_cast<std::size_t>(n) * C + argmax[n * HW + i]) * HW + i] += gmax;
                            }
                        },
                        "channel_pool");
}

/// Mean absolute error over every element; the gradient at exact ties is 0.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (!(pred.shape() == target.shape())) throw std::invalid_argument("l1_loss: shape mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred.data()[i] - target.data()[i]);
  const T inv = T(1) / static_cast<T>(pred.size());
  return make_result<T>({1, 1, 1, 1}, {acc * inv}, {pred, target},
                        [pred, target, inv](Node<T>& self) {
                          const T g = self.grad[0] * inv;
                          for (const Tensor<T>* t : {&pred, &target}) {
                            if (!t->requires_grad()) continue;
                            const T sgn = t == &pred ? T(1) : T(-1);
                            auto gt = t->grad();
                            for (std::size_t i = 0; i < gt.size(); ++i) {
                              const T d = pred.data()[i] - target.data()[i];
                              gt[i] += sgn * g * static_cast<T>((d > 0) - (d < 0));
                            }
                          }
                        },
                        "l1_loss");
}

/// sum_i x_i * coeffs_i. Turns any tensor into a scalar for gradient checks.
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::vector<T> coeffs) {
  if (coeffs.size() != x.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i] * coeffs[i];
  return make_result<T>({1, 1, 1, 1}, {acc}, {x},
                        [x, coeffs = std::move(coeffs)](Node<T>& self) {
                          auto g = x.grad();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * coeffs[i];
                        },
                        "weighted_sum");
}

}  // namespace derain::nn
