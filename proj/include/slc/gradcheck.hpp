#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slc/layers.hpp"
#include "slc/model.hpp"
#include "slc/tensor.hpp"
#include "slc/train.hpp"

namespace slc::gradcheck {

inline constexpr double kEpsilon = 1e-5;
inline constexpr double kLayerTolerance = 1e-6;
inline constexpr double kNetworkTolerance = 1e-5;
/// Denominator floor of the relative error. Entries whose true gradient is
/// below this magnitude are judged on absolute error at the same tolerance.
inline constexpr double kMagnitudeFloor = 1e-4;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kMagnitudeFloor});
  return std::abs(analytic - numeric) / denom;
}

/// Central difference (f(v + eps) - f(v - eps)) / (2 eps), restoring v afterwards.
inline double central_difference(const std::function<double()>& f, double& v, double eps = kEpsilon) {
  const double saved = v;
  v = saved + eps;
  const double up = f();
  v = saved - eps;
  const double down = f();
  v = saved;
  return (up - down) / (2.0 * eps);
}

/// Worst relative error between `analytic` and central differences of f
/// with respect to every entry of `wrt`.
inline double max_error(const std::function<double()>& f, Tensor& wrt, const Tensor& analytic) {
  if (!(wrt.shape() == analytic.shape())) throw ShapeError("gradcheck: gradient shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < wrt.size(); ++i) worst = std::max(worst, relative_error(analytic[i], central_difference(f, wrt[i])));
  return worst;
}

/// Central difference of L = sum(forward() * r), evaluated as
/// sum((y+ - y-) * r) / (2 eps) so outputs that do not depend on v cancel exactly.
inline double projected_difference(const std::function<Tensor()>& forward, const Tensor& r, double& v,
                                   double eps = kEpsilon) {
  const double saved = v;
  v = saved + eps;
  const Tensor up = forward();
  v = saved - eps;
  const Tensor down = forward();
  v = saved;
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += (up[i] - down[i]) * r[i];
  return s / (2.0 * eps);
}

inline double max_projected_error(const std::function<Tensor()>& forward, const Tensor& r, Tensor& wrt,
                                  const Tensor& analytic) {
  if (!(wrt.shape() == analytic.shape())) throw ShapeError("gradcheck: gradient shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < wrt.size(); ++i)
    worst = std::max(worst, relative_error(analytic[i], projected_difference(forward, r, wrt[i])));
  return worst;
}

struct CaseResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = kLayerTolerance;
  bool passed() const { return max_rel_error <= tolerance; }
};

struct Report {
  std::vector<CaseResult> cases;
  bool passed() const {
    return std::all_of(cases.begin(), cases.end(), [](const CaseResult& c) { return c.passed(); });
  }
  /// Case with the largest error relative to its tolerance.
  const CaseResult& worst() const {
    return *std::max_element(cases.begin(), cases.end(), [](const CaseResult& a, const CaseResult& b) {
      return a.max_rel_error / a.tolerance < b.max_rel_error / b.tolerance;
    });
  }
};

enum class ConvFlavor { Conv, Slc, SoftSlc };

inline std::string flavor_name(ConvFlavor f) {
  switch (f) {
    case ConvFlavor::Conv: return "conv";
    case ConvFlavor::Slc: return "slc";
    case ConvFlavor::SoftSlc: return "soft_slc";
  }
  return "?";
}

/// Checks dx, dweights and dbias of one convolution flavor under the scalar
/// loss L = sum(y * R) for a fixed random projection R.
inline CaseResult check_conv_layer(ConvFlavor flavor, std::size_t H, std::size_t W, std::size_t cx, std::size_t cy,
                                   std::size_t k, std::size_t alpha, ConvConfig cfg, Rng& rng, bool corrupt = false) {
  Tensor x = Tensor::uniform(Shape{H, W, cx}, -1.0, 1.0, rng);
  SlcKernel sk(Tensor::uniform(Shape{k, k, cx, cy, alpha}, -1.0, 1.0, rng),
               Tensor::uniform(Shape{cy, alpha}, -1.0, 1.0, rng), alpha);
  ConvKernel ck = sk.component(0);

  auto forward = [&]() -> Tensor {
    switch (flavor) {
      case ConvFlavor::Conv: return conv2d_forward(x, ck, cfg);
      case ConvFlavor::Slc: return slc_forward(x, sk, cfg);
      case ConvFlavor::SoftSlc: return soft_slc_forward(x, sk, cfg);
    }
    return {};
  };
  const Tensor r = Tensor::uniform(forward().shape(), -1.0, 1.0, rng);

  ConvGradients g;
  switch (flavor) {
    case ConvFlavor::Conv: g = conv2d_backward(x, ck, cfg, r); break;
    case ConvFlavor::Slc: g = slc_backward(x, sk, cfg, r); break;
    case ConvFlavor::SoftSlc: g = soft_slc_backward(x, sk, cfg, r); break;
  }
  if (corrupt) g.dweights[0] += 1e-3;

  Tensor& w = flavor == ConvFlavor::Conv ? ck.weights : sk.weights;
  Tensor& b = flavor == ConvFlavor::Conv ? ck.bias : sk.bias;
  const double err = std::max({max_projected_error(forward, r, x, g.dx), max_projected_error(forward, r, w, g.dweights),
                               max_projected_error(forward, r, b, g.dbias)});

  CaseResult res;
  res.name = flavor_name(flavor) + " H=" + std::to_string(H) + " W=" + std::to_string(W) + " C=" +
             std::to_string(cx) + "->" + std::to_string(cy) + " K=" + std::to_string(k) +
             (flavor == ConvFlavor::Conv ? "" : " alpha=" + std::to_string(alpha)) + " stride=" +
             std::to_string(cfg.stride_h) + "x" + std::to_string(cfg.stride_w);
  res.max_rel_error = err;
  return res;
}

inline CaseResult check_relu(Rng& rng) {
  Tensor x = Tensor::uniform(Shape{4, 5, 3}, -1.0, 1.0, rng);
  // keep every entry well away from the kink
  for (double& v : x.data()) v += v >= 0.0 ? 0.1 : -0.1;
  const Tensor r = Tensor::uniform(x.shape(), -1.0, 1.0, rng);
  auto forward = [&]() { return relu_forward(x); };
  return {"relu 4x5x3", max_projected_error(forward, r, x, relu_backward(x, r)), kLayerTolerance};
}

inline CaseResult check_softmax_xent(Rng& rng) {
  const std::size_t H = 3, W = 4, C = 5;
  Tensor z = Tensor::uniform(Shape{H, W, C}, -3.0, 3.0, rng);
  std::vector<std::uint16_t> labels(H * W);
  std::vector<std::uint8_t> mask(H * W, 1);
  for (std::size_t p = 0; p < labels.size(); ++p) labels[p] = static_cast<std::uint16_t>(rng.below(C + 1));
  labels[0] = 1;
  mask[1] = 0;
  auto loss = [&]() { return softmax_xent(z, labels, mask).loss; };
  return {"softmax_xent 3x4x5", max_error(loss, z, softmax_xent(z, labels, mask).dlogits), kLayerTolerance};
}

/// conv3x3 -> relu -> (soft) slc3x3 -> relu -> conv1x1 on an 8x8x2 input, loss = softmax_xent.
inline CaseResult check_network(bool soft, std::size_t alpha, Rng& rng) {
  NetworkSpec spec;
  spec.input_shape = {8, 8, 2};
  spec.num_classes = 3;
  spec.layers = {LayerSpec::conv(4, 3), LayerSpec::relu(), LayerSpec::conv(4, 3), LayerSpec::relu(),
                 LayerSpec::conv(3, 1)};
  spec = replace_convs_with_slc(spec, alpha, soft);
  Network net = build_network(spec, rng);
  // distinct components and nonzero biases so every band path is exercised
  for (Tensor* p : net.parameters())
    for (double& v : p->data()) v += rng.uniform(-0.3, 0.3);

  Tensor x = Tensor::uniform(Shape{8, 8, 2}, -1.0, 1.0, rng);
  std::vector<std::uint16_t> labels(64);
  std::vector<std::uint8_t> mask(64, 1);
  for (auto& l : labels) l = static_cast<std::uint16_t>(1 + rng.below(3));
  labels[5] = 0;
  mask[9] = 0;

  auto loss = [&]() { return softmax_xent(network_forward(net, x).logits(), labels, mask).loss; };
  const auto cache = network_forward(net, x);
  const auto lr = softmax_xent(cache.logits(), labels, mask);
  const auto grads = network_backward(net, cache, lr.dlogits);
  const auto params = net.parameters();
  double err = max_error(loss, x, grads.input);
  for (std::size_t k = 0; k < params.size(); ++k) err = std::max(err, max_error(loss, *params[k], grads.params[k]));
  return {std::string("network 8x8x2 ") + (soft ? "soft_slc" : "slc") + " alpha=" + std::to_string(alpha), err,
          kNetworkTolerance};
}

/// Finite-difference suite over every layer type, both strides and several
/// alpha values. With `corrupt` the first analytic gradient is perturbed,
/// which must make the suite fail.
inline Report run_suite(std::uint64_t seed, bool corrupt = false) {
  Rng rng(seed);
  Report rep;
  const ConvConfig strides[] = {{1, 1}, {2, 1}, {1, 2}, {2, 2}};
  bool first = true;
  for (const ConvConfig& cfg : strides) {
    rep.cases.push_back(check_conv_layer(ConvFlavor::Conv, 5, 6, 2, 3, 3, 1, cfg, rng, corrupt && first));
    first = false;
    rep.cases.push_back(check_conv_layer(ConvFlavor::Conv, 5, 6, 2, 2, 5, 1, cfg, rng));
    for (std::size_t alpha : {1u, 2u, 3u, 5u}) {
      rep.cases.push_back(check_conv_layer(ConvFlavor::Slc, 5, 6, 2, 3, 3, alpha, cfg, rng));
      rep.cases.push_back(check_conv_layer(ConvFlavor::SoftSlc, 5, 6, 2, 3, 3, alpha, cfg, rng));
    }
  }
  rep.cases.push_back(check_conv_layer(ConvFlavor::Slc, 7, 4, 3, 2, 1, 7, {}, rng));
  rep.cases.push_back(check_conv_layer(ConvFlavor::SoftSlc, 8, 4, 2, 2, 3, 4, {}, rng));
  rep.cases.push_back(check_relu(rng));
  rep.cases.push_back(check_softmax_xent(rng));
  rep.cases.push_back(check_network(false, 1, rng));
  rep.cases.push_back(check_network(false, 4, rng));
  rep.cases.push_back(check_network(true, 3, rng));
  return rep;
}

}  // namespace slc::gradcheck
