#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "slc/error.hpp"
#include "slc/tensor.hpp"

namespace slc {

/// Stride of a convolution. Padding is implicit: centered zero padding of
/// K/2 on every side, so the output is ceil(H / stride_h) x ceil(W / stride_w).
struct ConvConfig {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;

  void validate() const {
    auto ok = [](std::size_t s) { return s == 1 || s == 2; };
    if (!ok(stride_h) || !ok(stride_w)) throw ConfigError("stride must be 1 or 2");
  }
  std::size_t out_height(std::size_t h) const { return (h + stride_h - 1) / stride_h; }
  std::size_t out_width(std::size_t w) const { return (w + stride_w - 1) / stride_w; }
};

/// Standard convolution parameters: weights [K_h, K_w, C_x, C_y], bias [C_y].
struct ConvKernel {
  Tensor weights;
  Tensor bias;

  ConvKernel() = default;
  ConvKernel(Tensor w, Tensor b) : weights(std::move(w)), bias(std::move(b)) { validate(); }
  ConvKernel(std::size_t kh, std::size_t kw, std::size_t cx, std::size_t cy)
      : weights(Shape{kh, kw, cx, cy}), bias(Shape{cy}) {
    validate();
  }

  std::size_t kernel_h() const { return weights.dim(0); }
  std::size_t kernel_w() const { return weights.dim(1); }
  std::size_t in_channels() const { return weights.dim(2); }
  std::size_t out_channels() const { return weights.dim(3); }

  void validate() const {
    if (weights.shape().rank() != 4) throw ShapeError("conv weights must be rank 4 [K_h,K_w,C_x,C_y]");
    if (kernel_h() % 2 == 0 || kernel_w() % 2 == 0) throw ShapeError("kernel extents must be odd");
    if (!(bias.shape() == Shape{out_channels()})) throw ShapeError("conv bias must have shape [C_y]");
  }
};

/// Semi-local convolution parameters: alpha independent kernel components
/// stacked on the last axis. weights [K_h, K_w, C_x, C_y, alpha], bias [C_y, alpha].
struct SlcKernel {
  Tensor weights;
  Tensor bias;
  std::size_t alpha = 1;

  SlcKernel() = default;
  SlcKernel(Tensor w, Tensor b, std::size_t a) : weights(std::move(w)), bias(std::move(b)), alpha(a) {
    validate();
  }
  SlcKernel(std::size_t kh, std::size_t kw, std::size_t cx, std::size_t cy, std::size_t a)
      : weights(Shape{kh, kw, cx, cy, a}), bias(Shape{cy, a}), alpha(a) {
    validate();
  }

  std::size_t kernel_h() const { return weights.dim(0); }
  std::size_t kernel_w() const { return weights.dim(1); }
  std::size_t in_channels() const { return weights.dim(2); }
  std::size_t out_channels() const { return weights.dim(3); }

  void validate() const {
    if (alpha < 1) throw ConfigError("alpha must be >= 1");
    if (weights.shape().rank() != 5) {
      throw ShapeError("slc weights must be rank 5 [K_h,K_w,C_x,C_y,alpha]");
    }
    if (weights.dim(4) != alpha) throw ShapeError("slc weights last dim must equal alpha");
    if (kernel_h() % 2 == 0 || kernel_w() % 2 == 0) throw ShapeError("kernel extents must be odd");
    if (!(bias.shape() == Shape{out_channels(), alpha})) {
      throw ShapeError("slc bias must have shape [C_y, alpha]");
    }
  }

  /// Copies one standard kernel into component `a`.
  void set_component(std::size_t a, const ConvKernel& k) {
    if (a >= alpha) throw std::out_of_range("component index out of range");
    if (k.weights.size() * alpha != weights.size() || k.kernel_h() != kernel_h() ||
        k.kernel_w() != kernel_w() || k.in_channels() != in_channels()) {
      throw ShapeError("component kernel shape mismatch");
    }
    for (std::size_t i = 0; i < k.weights.size(); ++i) weights[i * alpha + a] = k.weights[i];
    for (std::size_t c = 0; c < out_channels(); ++c) bias[c * alpha + a] = k.bias[c];
  }

  ConvKernel component(std::size_t a) const {
    if (a >= alpha) throw std::out_of_range("component index out of range");
    ConvKernel k(kernel_h(), kernel_w(), in_channels(), out_channels());
    for (std::size_t i = 0; i < k.weights.size(); ++i) k.weights[i] = weights[i * alpha + a];
    for (std::size_t c = 0; c < out_channels(); ++c) k.bias[c] = bias[c * alpha + a];
    return k;
  }
};

/// Kernel component serving output row h: floor(alpha * (h * stride_h) / H_x).
inline std::size_t band_index(std::size_t h, std::size_t input_height, std::size_t alpha,
                              std::size_t stride_h = 1) {
  if (alpha < 1 || alpha > input_height) {
    throw ConfigError("alpha must satisfy 1 <= alpha <= H (alpha=" + std::to_string(alpha) +
                      ", H=" + std::to_string(input_height) + ")");
  }
  if (stride_h < 1) throw ConfigError("stride must be >= 1");
  const std::size_t out_h = (input_height + stride_h - 1) / stride_h;
  if (h >= out_h) throw std::out_of_range("output row out of range");
  return alpha * (h * stride_h) / input_height;
}

/// Up to two (component, weight) pairs that make up one output row.
struct RowMix {
  struct Term {
    std::size_t component = 0;
    double weight = 1.0;
  };
  std::array<Term, 2> terms{};
  std::size_t count = 1;
};

/// Blend weights used by the soft variant for the row at input position p.
///
/// Component a is centered at c_a = (a + 0.5) * H / alpha. Between two
/// neighbouring centers the weights are (1 - t, t) with t the fractional
/// position; outside the outermost centers the nearest component gets 1.
inline RowMix soft_row_mix(std::size_t p, std::size_t input_height, std::size_t alpha) {
  RowMix mix;
  if (alpha == 1) return mix;
  // Work in units of 1 / (2H) so every center is an integer: 2*alpha*p vs (2a+1)*H.
  const long long twice_h = 2 * static_cast<long long>(input_height);
  const long long num = 2 * static_cast<long long>(alpha) * static_cast<long long>(p) -
                        static_cast<long long>(input_height);
  if (num <= 0) {
    mix.terms[0] = {0, 1.0};
    return mix;
  }
  const std::size_t a = static_cast<std::size_t>(num / twice_h);
  if (a >= alpha - 1) {
    mix.terms[0] = {alpha - 1, 1.0};
    return mix;
  }
  const long long rem = num - static_cast<long long>(a) * twice_h;
  if (rem == 0) {
    mix.terms[0] = {a, 1.0};
    return mix;
  }
  const double t = static_cast<double>(rem) / static_cast<double>(twice_h);
  mix.terms[0] = {a, 1.0 - t};
  mix.terms[1] = {a + 1, t};
  mix.count = 2;
  return mix;
}

/// Dense per-component soft weights w_a(h) for output row h; sums to 1.
inline std::vector<double> soft_band_weights(std::size_t h, std::size_t input_height, std::size_t alpha,
                                             std::size_t stride_h = 1) {
  band_index(h, input_height, alpha, stride_h);  // range checks
  std::vector<double> w(alpha, 0.0);
  const RowMix mix = soft_row_mix(h * stride_h, input_height, alpha);
  for (std::size_t t = 0; t < mix.count; ++t) w[mix.terms[t].component] += mix.terms[t].weight;
  return w;
}

struct ConvGradients {
  Tensor dx;
  Tensor dweights;
  Tensor dbias;
};

namespace detail {

struct KernelGeometry {
  std::size_t kh, kw, cx, cy, alpha;
};

inline void check_input(const Tensor& x, const KernelGeometry& g) {
  if (x.shape().rank() != 3) throw ShapeError("input must be rank 3 [H,W,C], got " + x.shape().to_string());
  if (x.dim(2) != g.cx) {
    throw ShapeError("input channels " + std::to_string(x.dim(2)) + " != kernel C_x " + std::to_string(g.cx));
  }
}

inline std::vector<RowMix> hard_mixes(std::size_t in_h, std::size_t alpha, const ConvConfig& cfg) {
  const std::size_t out_h = cfg.out_height(in_h);
  std::vector<RowMix> mixes(out_h);
  for (std::size_t oh = 0; oh < out_h; ++oh) mixes[oh].terms[0] = {band_index(oh, in_h, alpha, cfg.stride_h), 1.0};
  return mixes;
}

inline std::vector<RowMix> soft_mixes(std::size_t in_h, std::size_t alpha, const ConvConfig& cfg) {
  band_index(0, in_h, alpha, cfg.stride_h);
  const std::size_t out_h = cfg.out_height(in_h);
  std::vector<RowMix> mixes(out_h);
  for (std::size_t oh = 0; oh < out_h; ++oh) mixes[oh] = soft_row_mix(oh * cfg.stride_h, in_h, alpha);
  return mixes;
}

// Valid tap range [lo, hi) for output coordinate o so that o*s + tap - half stays in [0, n).
inline std::pair<std::size_t, std::size_t> tap_range(std::size_t o, std::size_t s, std::size_t k, std::size_t n) {
  const long long base = static_cast<long long>(o * s) - static_cast<long long>(k / 2);
  const long long lo = std::max(0LL, -base);
  const long long hi = std::min(static_cast<long long>(k), static_cast<long long>(n) - base);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

/// y[oh,ow,:] = sum over the row's terms of weight * (bias_a + sum_{cx,i,j} k_a * x).
/// Per output element the accumulation order is bias, then cx, then i, then j.
inline Tensor mixed_forward(const Tensor& x, const Tensor& weights, const Tensor& bias, const KernelGeometry& g,
                            const ConvConfig& cfg, std::span<const RowMix> mixes) {
  cfg.validate();
  check_input(x, g);
  const std::size_t H = x.dim(0), W = x.dim(1);
  const std::size_t Ho = cfg.out_height(H), Wo = cfg.out_width(W);
  const std::size_t A = g.alpha, Cx = g.cx, Cy = g.cy;
  const std::size_t half_h = g.kh / 2, half_w = g.kw / 2;
  Tensor y(Shape{Ho, Wo, Cy});
  std::vector<double> acc_buf(2 * Cy);
  const double* xd = x.raw();
  const double* wd = weights.raw();
  const double* bd = bias.raw();
  double* yd = y.raw();

  for (std::size_t oh = 0; oh < Ho; ++oh) {
    const RowMix& mix = mixes[oh];
    const auto [i_lo, i_hi] = tap_range(oh, cfg.stride_h, g.kh, H);
    for (std::size_t ow = 0; ow < Wo; ++ow) {
      const auto [j_lo, j_hi] = tap_range(ow, cfg.stride_w, g.kw, W);
      double* yrow = yd + (oh * Wo + ow) * Cy;
      for (std::size_t t = 0; t < mix.count; ++t) {
        const std::size_t a = mix.terms[t].component;
        double* acc = acc_buf.data() + t * Cy;
        for (std::size_t cy = 0; cy < Cy; ++cy) acc[cy] = bd[cy * A + a];
        for (std::size_t cx = 0; cx < Cx; ++cx) {
          for (std::size_t i = i_lo; i < i_hi; ++i) {
            const std::size_t ih = oh * cfg.stride_h + i - half_h;
            for (std::size_t j = j_lo; j < j_hi; ++j) {
              const std::size_t iw = ow * cfg.stride_w + j - half_w;
              const double xv = xd[(ih * W + iw) * Cx + cx];
              const double* wk = wd + ((i * g.kw + j) * Cx + cx) * Cy * A + a;
              for (std::size_t cy = 0; cy < Cy; ++cy) acc[cy] += wk[cy * A] * xv;
            }
          }
        }
      }
      // Two terms blend as acc0 + t * (acc1 - acc0), i.e. weights (1 - t, t);
      // equal components then reproduce the single-kernel output exactly.
      const double* acc0 = acc_buf.data();
      const double* acc1 = acc_buf.data() + Cy;
      if (mix.count == 1) {
        const double w0 = mix.terms[0].weight;
        for (std::size_t cy = 0; cy < Cy; ++cy) yrow[cy] = w0 * acc0[cy];
      } else {
        const double t = mix.terms[1].weight;
        for (std::size_t cy = 0; cy < Cy; ++cy) yrow[cy] = acc0[cy] + t * (acc1[cy] - acc0[cy]);
      }
    }
  }
  return y;
}

inline ConvGradients mixed_backward(const Tensor& x, const Tensor& weights, const Tensor& bias,
                                    const KernelGeometry& g, const ConvConfig& cfg, std::span<const RowMix> mixes,
                                    const Tensor& dy) {
  cfg.validate();
  check_input(x, g);
  const std::size_t H = x.dim(0), W = x.dim(1);
  const std::size_t Ho = cfg.out_height(H), Wo = cfg.out_width(W);
  if (!(dy.shape() == Shape{Ho, Wo, g.cy})) {
    throw ShapeError("dy shape " + dy.shape().to_string() + " does not match forward output [" +
                     std::to_string(Ho) + "," + std::to_string(Wo) + "," + std::to_string(g.cy) + "]");
  }
  const std::size_t A = g.alpha, Cx = g.cx, Cy = g.cy;
  const std::size_t half_h = g.kh / 2, half_w = g.kw / 2;
  ConvGradients out{Tensor(x.shape()), Tensor(weights.shape()), Tensor(bias.shape())};
  std::vector<double> gr(Cy);
  const double* xd = x.raw();
  const double* wd = weights.raw();
  const double* dyd = dy.raw();
  double* dxd = out.dx.raw();
  double* dwd = out.dweights.raw();
  double* dbd = out.dbias.raw();

  for (std::size_t oh = 0; oh < Ho; ++oh) {
    const RowMix& mix = mixes[oh];
    const auto [i_lo, i_hi] = tap_range(oh, cfg.stride_h, g.kh, H);
    for (std::size_t t = 0; t < mix.count; ++t) {
      const std::size_t a = mix.terms[t].component;
      const double wt = mix.terms[t].weight;
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        const auto [j_lo, j_hi] = tap_range(ow, cfg.stride_w, g.kw, W);
        const double* dyrow = dyd + (oh * Wo + ow) * Cy;
        for (std::size_t cy = 0; cy < Cy; ++cy) {
          gr[cy] = wt * dyrow[cy];
          dbd[cy * A + a] += gr[cy];
        }
        for (std::size_t cx = 0; cx < Cx; ++cx) {
          for (std::size_t i = i_lo; i < i_hi; ++i) {
            const std::size_t ih = oh * cfg.stride_h + i - half_h;
            for (std::size_t j = j_lo; j < j_hi; ++j) {
              const std::size_t iw = ow * cfg.stride_w + j - half_w;
              const std::size_t xoff = (ih * W + iw) * Cx + cx;
              const double xv = xd[xoff];
              const std::size_t woff = ((i * g.kw + j) * Cx + cx) * Cy * A + a;
              double dsum = 0.0;
              for (std::size_t cy = 0; cy < Cy; ++cy) {
                dwd[woff + cy * A] += gr[cy] * xv;
                dsum += wd[woff + cy * A] * gr[cy];
              }
              dxd[xoff] += dsum;
            }
          }
        }
      }
    }
  }
  return out;
}

inline KernelGeometry geometry(const ConvKernel& k) {
  k.validate();
  return {k.kernel_h(), k.kernel_w(), k.in_channels(), k.out_channels(), 1};
}

inline KernelGeometry geometry(const SlcKernel& k) {
  k.validate();
  return {k.kernel_h(), k.kernel_w(), k.in_channels(), k.out_channels(), k.alpha};
}

inline void check_alpha(const Tensor& x, const SlcKernel& k) {
  if (x.shape().rank() != 3) throw ShapeError("input must be rank 3 [H,W,C]");
  if (k.alpha > x.dim(0)) {
    throw ConfigError("alpha " + std::to_string(k.alpha) + " exceeds input height " + std::to_string(x.dim(0)));
  }
}

}  // namespace detail

/// Zero-padded cross-correlation with a centered odd kernel, plus bias.
inline Tensor conv2d_forward(const Tensor& x, const ConvKernel& k, const ConvConfig& cfg = {}) {
  const auto g = detail::geometry(k);
  detail::check_input(x, g);
  const auto mixes = detail::hard_mixes(x.dim(0), 1, cfg);
  return detail::mixed_forward(x, k.weights, k.bias, g, cfg, mixes);
}

inline ConvGradients conv2d_backward(const Tensor& x, const ConvKernel& k, const ConvConfig& cfg, const Tensor& dy) {
  const auto g = detail::geometry(k);
  detail::check_input(x, g);
  const auto mixes = detail::hard_mixes(x.dim(0), 1, cfg);
  return detail::mixed_backward(x, k.weights, k.bias, g, cfg, mixes, dy);
}

/// Semi-local convolution: output row h uses component band_index(h, H, alpha, stride_h).
inline Tensor slc_forward(const Tensor& x, const SlcKernel& k, const ConvConfig& cfg = {}) {
  const auto g = detail::geometry(k);
  detail::check_alpha(x, k);
  detail::check_input(x, g);
  const auto mixes = detail::hard_mixes(x.dim(0), k.alpha, cfg);
  return detail::mixed_forward(x, k.weights, k.bias, g, cfg, mixes);
}

inline ConvGradients slc_backward(const Tensor& x, const SlcKernel& k, const ConvConfig& cfg, const Tensor& dy) {
  const auto g = detail::geometry(k);
  detail::check_alpha(x, k);
  detail::check_input(x, g);
  const auto mixes = detail::hard_mixes(x.dim(0), k.alpha, cfg);
  return detail::mixed_backward(x, k.weights, k.bias, g, cfg, mixes, dy);
}

/// Soft semi-local convolution: each output row is a convex blend of the two
/// components whose band centers bracket it (see soft_row_mix).
inline Tensor soft_slc_forward(const Tensor& x, const SlcKernel& k, const ConvConfig& cfg = {}) {
  const auto g = detail::geometry(k);
  detail::check_alpha(x, k);
  detail::check_input(x, g);
  const auto mixes = detail::soft_mixes(x.dim(0), k.alpha, cfg);
  return detail::mixed_forward(x, k.weights, k.bias, g, cfg, mixes);
}

inline ConvGradients soft_slc_backward(const Tensor& x, const SlcKernel& k, const ConvConfig& cfg,
                                       const Tensor& dy) {
  const auto g = detail::geometry(k);
  detail::check_alpha(x, k);
  detail::check_input(x, g);
  const auto mixes = detail::soft_mixes(x.dim(0), k.alpha, cfg);
  return detail::mixed_backward(x, k.weights, k.bias, g, cfg, mixes, dy);
}

inline Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

/// Gradient at exactly 0 is 0.
inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  if (!(x.shape() == dy.shape())) throw ShapeError("relu_backward: shape mismatch");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

/// Uniform initialization in +-sqrt(6 / (K_h*K_w*C_x)). Every SLC component
/// receives the same draw, and the bias starts at zero.
inline ConvKernel init_conv_kernel(std::size_t kh, std::size_t kw, std::size_t cx, std::size_t cy, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(kh * kw * cx));
  return ConvKernel(Tensor::uniform(Shape{kh, kw, cx, cy}, -bound, bound, rng), Tensor(Shape{cy}));
}

inline SlcKernel init_slc_kernel(std::size_t kh, std::size_t kw, std::size_t cx, std::size_t cy, std::size_t alpha,
                                 Rng& rng) {
  const ConvKernel base = init_conv_kernel(kh, kw, cx, cy, rng);
  SlcKernel k(kh, kw, cx, cy, alpha);
  for (std::size_t a = 0; a < alpha; ++a) k.set_component(a, base);
  return k;
}

}  // namespace slc
