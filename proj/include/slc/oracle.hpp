#pragma once

// Reference kernels written as literal nested loops over the defining sums.
// They share no code with layers.hpp beyond the kernel containers, and are
// only meant for equivalence testing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "slc/error.hpp"
#include "slc/layers.hpp"
#include "slc/tensor.hpp"

namespace slc::oracle {

namespace detail {

inline double padded(const Tensor& x, long long h, long long w, std::size_t c) {
  if (h < 0 || w < 0 || h >= static_cast<long long>(x.dim(0)) || w >= static_cast<long long>(x.dim(1))) return 0.0;
  return x.at({static_cast<std::size_t>(h), static_cast<std::size_t>(w), c});
}

// Output element for component a at (h, w, cy): bias + sum_cx sum_i sum_j k * x_hat.
inline double component_sum(const Tensor& x, const Tensor& weights, const Tensor& bias, bool slc, std::size_t a,
                            std::size_t h, std::size_t w, std::size_t cy, const ConvConfig& cfg) {
  const std::size_t kh = weights.dim(0), kw = weights.dim(1), cxn = weights.dim(2);
  const long long half_i = static_cast<long long>(kh / 2), half_j = static_cast<long long>(kw / 2);
  double y = slc ? bias.at({cy, a}) : bias.at({cy});
  for (std::size_t cx = 0; cx < cxn; ++cx) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const long long ih = static_cast<long long>(h * cfg.stride_h) + static_cast<long long>(i) - half_i;
        const long long iw = static_cast<long long>(w * cfg.stride_w) + static_cast<long long>(j) - half_j;
        const double k = slc ? weights.at({i, j, cx, cy, a}) : weights.at({i, j, cx, cy});
        y += k * padded(x, ih, iw, cx);
      }
    }
  }
  return y;
}

inline void check(const Tensor& x, std::size_t cx) {
  if (x.shape().rank() != 3 || x.dim(2) != cx) throw ShapeError("oracle: input/kernel channel mismatch");
}

}  // namespace detail

inline Tensor naive_conv2d_oracle(const Tensor& x, const ConvKernel& k, const ConvConfig& cfg = {}) {
  detail::check(x, k.in_channels());
  const std::size_t ho = (x.dim(0) + cfg.stride_h - 1) / cfg.stride_h;
  const std::size_t wo = (x.dim(1) + cfg.stride_w - 1) / cfg.stride_w;
  Tensor y(Shape{ho, wo, k.out_channels()});
  for (std::size_t h = 0; h < ho; ++h)
    for (std::size_t w = 0; w < wo; ++w)
      for (std::size_t cy = 0; cy < k.out_channels(); ++cy)
        y.at({h, w, cy}) = detail::component_sum(x, k.weights, k.bias, false, 0, h, w, cy, cfg);
  return y;
}

inline Tensor naive_slc_oracle(const Tensor& x, const SlcKernel& k, const ConvConfig& cfg = {}) {
  detail::check(x, k.in_channels());
  const std::size_t H = x.dim(0);
  if (k.alpha < 1 || k.alpha > H) throw ConfigError("oracle: alpha out of range");
  const std::size_t ho = (H + cfg.stride_h - 1) / cfg.stride_h;
  const std::size_t wo = (x.dim(1) + cfg.stride_w - 1) / cfg.stride_w;
  Tensor y(Shape{ho, wo, k.out_channels()});
  for (std::size_t h = 0; h < ho; ++h) {
    const std::size_t a = static_cast<std::size_t>(
        std::floor(static_cast<double>(k.alpha) * static_cast<double>(h * cfg.stride_h) / static_cast<double>(H)));
    for (std::size_t w = 0; w < wo; ++w)
      for (std::size_t cy = 0; cy < k.out_channels(); ++cy)
        y.at({h, w, cy}) = detail::component_sum(x, k.weights, k.bias, true, a, h, w, cy, cfg);
  }
  return y;
}

/// Soft variant with weights from floating-point band centers (a + 0.5) * H / alpha.
inline Tensor naive_soft_slc_oracle(const Tensor& x, const SlcKernel& k, const ConvConfig& cfg = {}) {
  detail::check(x, k.in_channels());
  const std::size_t H = x.dim(0);
  if (k.alpha < 1 || k.alpha > H) throw ConfigError("oracle: alpha out of range");
  const std::size_t ho = (H + cfg.stride_h - 1) / cfg.stride_h;
  const std::size_t wo = (x.dim(1) + cfg.stride_w - 1) / cfg.stride_w;
  const double band = static_cast<double>(H) / static_cast<double>(k.alpha);
  Tensor y(Shape{ho, wo, k.out_channels()});
  for (std::size_t h = 0; h < ho; ++h) {
    const double p = static_cast<double>(h * cfg.stride_h);
    std::vector<double> wts(k.alpha, 0.0);
    for (std::size_t a = 0; a < k.alpha; ++a) {
      const double center = (static_cast<double>(a) + 0.5) * band;
      const double dist = std::abs(p - center) / band;
      wts[a] = std::max(0.0, 1.0 - dist);
    }
    // clamp beyond the outermost centers
    if (p <= 0.5 * band) {
      std::fill(wts.begin(), wts.end(), 0.0);
      wts.front() = 1.0;
    } else if (p >= (static_cast<double>(k.alpha) - 0.5) * band) {
      std::fill(wts.begin(), wts.end(), 0.0);
      wts.back() = 1.0;
    }
    for (std::size_t w = 0; w < wo; ++w)
      for (std::size_t cy = 0; cy < k.out_channels(); ++cy) {
        double v = 0.0;
        for (std::size_t a = 0; a < k.alpha; ++a)
          if (wts[a] != 0.0) v += wts[a] * detail::component_sum(x, k.weights, k.bias, true, a, h, w, cy, cfg);
        y.at({h, w, cy}) = v;
      }
  }
  return y;
}

}  // namespace slc::oracle
