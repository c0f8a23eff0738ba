#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "slc/error.hpp"
#include "slc/layers.hpp"
#include "slc/tensor.hpp"

namespace slc {

enum class LayerKind { Conv, Slc, SoftSlc, Relu };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Slc: return "slc";
    case LayerKind::SoftSlc: return "soft_slc";
    case LayerKind::Relu: return "relu";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "slc") return LayerKind::Slc;
  if (s == "soft_slc") return LayerKind::SoftSlc;
  if (s == "relu") return LayerKind::Relu;
  throw ConfigError("unknown layer kind '" + s + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t out_channels = 0;
  std::array<std::size_t, 2> kernel{1, 1};
  std::array<std::size_t, 2> stride{1, 1};
  std::optional<std::size_t> alpha;

  bool parameterized() const { return kind != LayerKind::Relu; }
  bool semi_local() const { return kind == LayerKind::Slc || kind == LayerKind::SoftSlc; }

  static LayerSpec conv(std::size_t out, std::size_t k, std::size_t stride_w = 1) {
    return {LayerKind::Conv, out, {k, k}, {1, stride_w}, std::nullopt};
  }
  static LayerSpec relu() { return {LayerKind::Relu, 0, {1, 1}, {1, 1}, std::nullopt}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  std::array<std::size_t, 3> input_shape{1, 1, 1};  // H, W, C
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 2;

  std::vector<std::size_t> parameterized_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].parameterized()) idx.push_back(i);
    return idx;
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Feature-map shapes [H, W, C] entering each layer, plus the final output
/// (size layers.size() + 1). Throws on any inconsistency in the spec.
inline std::vector<std::array<std::size_t, 3>> propagate_shapes(const NetworkSpec& spec) {
  const auto [H, W, C] = spec.input_shape;
  if (H < 1 || W < 1 || C < 1) throw ConfigError("input_shape dims must be >= 1");
  if (spec.num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (spec.layers.empty()) throw ConfigError("network has no layers");
  std::vector<std::array<std::size_t, 3>> shapes{spec.input_shape};
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    auto cur = shapes.back();
    const std::string where = "layer " + std::to_string(l) + " (" + to_string(ls.kind) + "): ";
    if (ls.alpha.has_value() != ls.semi_local()) {
      throw ConfigError(where + "alpha must be present exactly for slc/soft_slc layers");
    }
    if (ls.parameterized()) {
      ConvConfig{ls.stride[0], ls.stride[1]}.validate();
      if (ls.kernel[0] % 2 == 0 || ls.kernel[1] % 2 == 0) throw ConfigError(where + "kernel extents must be odd");
      if (ls.out_channels < 1) throw ConfigError(where + "out_channels must be >= 1");
      if (ls.semi_local() && (*ls.alpha < 1 || *ls.alpha > cur[0])) {
        throw ConfigError(where + "alpha " + std::to_string(*ls.alpha) + " must satisfy 1 <= alpha <= H=" +
                          std::to_string(cur[0]));
      }
      const ConvConfig cc{ls.stride[0], ls.stride[1]};
      cur = {cc.out_height(cur[0]), cc.out_width(cur[1]), ls.out_channels};
    }
    shapes.push_back(cur);
  }
  const LayerSpec& last = spec.layers.back();
  if (!last.parameterized() || last.out_channels != spec.num_classes) {
    throw ConfigError("final layer must be a parameterized layer with num_classes outputs");
  }
  if (shapes.back()[0] != H || shapes.back()[1] != W) {
    throw ConfigError("network output must keep the input spatial resolution");
  }
  return shapes;
}

struct ParameterCount {
  std::size_t total = 0;
  std::vector<std::size_t> per_layer;
  std::size_t interior = 0;  // all parameterized layers except the first and last
  std::size_t boundary = 0;
};

inline ParameterCount count_parameters(const NetworkSpec& spec) {
  const auto shapes = propagate_shapes(spec);
  ParameterCount pc;
  pc.per_layer.resize(spec.layers.size(), 0);
  const auto pidx = spec.parameterized_indices();
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    if (!ls.parameterized()) continue;
    const std::size_t a = ls.semi_local() ? *ls.alpha : 1;
    const std::size_t cin = shapes[l][2];
    pc.per_layer[l] = a * (ls.kernel[0] * ls.kernel[1] * cin * ls.out_channels + ls.out_channels);
    pc.total += pc.per_layer[l];
    const bool edge = l == pidx.front() || l == pidx.back();
    (edge ? pc.boundary : pc.interior) += pc.per_layer[l];
  }
  return pc;
}

/// Every Conv layer except the first and last parameterized layer becomes
/// Slc (or SoftSlc) with the given alpha.
inline NetworkSpec replace_convs_with_slc(const NetworkSpec& spec, std::size_t alpha, bool soft = false) {
  if (alpha < 1) throw ConfigError("alpha must be >= 1");
  const auto pidx = spec.parameterized_indices();
  if (pidx.size() < 3) throw ConfigError("substitution needs at least 3 parameterized layers");
  NetworkSpec out = spec;
  for (std::size_t n = 1; n + 1 < pidx.size(); ++n) {
    LayerSpec& ls = out.layers[pidx[n]];
    if (ls.kind != LayerKind::Conv) continue;
    ls.kind = soft ? LayerKind::SoftSlc : LayerKind::Slc;
    ls.alpha = alpha;
  }
  return out;
}

/// Divides the output width of every parameterized layer except the
/// classifier by `divisor`.
inline NetworkSpec scale_widths(const NetworkSpec& spec, std::size_t divisor) {
  if (divisor < 1) throw ConfigError("width divisor must be >= 1");
  const auto pidx = spec.parameterized_indices();
  if (pidx.empty()) throw ConfigError("network has no parameterized layers");
  NetworkSpec out = spec;
  for (std::size_t n = 0; n + 1 < pidx.size(); ++n) {
    LayerSpec& ls = out.layers[pidx[n]];
    if (ls.out_channels % divisor != 0) {
      throw ConfigError("layer " + std::to_string(pidx[n]) + " width " + std::to_string(ls.out_channels) +
                        " is not divisible by " + std::to_string(divisor));
    }
    ls.out_channels /= divisor;
  }
  return out;
}

using LayerParams = std::variant<std::monostate, ConvKernel, SlcKernel>;

/// Activations recorded by network_forward: activations[l] enters layer l,
/// activations.back() holds the logits.
struct ForwardCache {
  std::vector<Tensor> activations;
  const Tensor& logits() const { return activations.back(); }
};

struct NetworkGradients {
  std::vector<Tensor> params;  // same order as Network::parameters()
  Tensor input;
};

class Network {
 public:
  Network(NetworkSpec spec, std::vector<LayerParams> params) : spec_(std::move(spec)), params_(std::move(params)) {
    shapes_ = propagate_shapes(spec_);
    if (params_.size() != spec_.layers.size()) throw ShapeError("one parameter slot per layer required");
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) check_layer(l);
  }

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<LayerParams>& layer_params() const { return params_; }
  LayerParams& layer_params(std::size_t l) { return params_[l]; }
  const std::vector<std::array<std::size_t, 3>>& feature_shapes() const { return shapes_; }

  /// Trainable tensors, (weights, bias) per parameterized layer in layer order.
  std::vector<Tensor*> parameters() { return collect<Tensor>(params_); }
  std::vector<const Tensor*> parameters() const { return collect<const Tensor>(params_); }

 private:
  template <class T, class Params>
  static std::vector<T*> collect(Params& params) {
    std::vector<T*> out;
    for (auto& p : params) {
      if (auto* c = std::get_if<ConvKernel>(&p)) out.insert(out.end(), {&c->weights, &c->bias});
      if (auto* s = std::get_if<SlcKernel>(&p)) out.insert(out.end(), {&s->weights, &s->bias});
    }
    return out;
  }

  void check_layer(std::size_t l) const {
    const LayerSpec& ls = spec_.layers[l];
    const std::size_t cin = shapes_[l][2];
    const std::string where = "layer " + std::to_string(l) + ": ";
    switch (ls.kind) {
      case LayerKind::Relu:
        if (!std::holds_alternative<std::monostate>(params_[l])) throw ShapeError(where + "relu takes no parameters");
        return;
      case LayerKind::Conv: {
        const auto* k = std::get_if<ConvKernel>(&params_[l]);
        if (!k) throw ShapeError(where + "expected conv parameters");
        k->validate();
        if (!(k->weights.shape() == Shape{ls.kernel[0], ls.kernel[1], cin, ls.out_channels}))
          throw ShapeError(where + "conv weight shape mismatch");
        return;
      }
      case LayerKind::Slc:
      case LayerKind::SoftSlc: {
        const auto* k = std::get_if<SlcKernel>(&params_[l]);
        if (!k) throw ShapeError(where + "expected slc parameters");
        k->validate();
        if (!(k->weights.shape() == Shape{ls.kernel[0], ls.kernel[1], cin, ls.out_channels, *ls.alpha}))
          throw ShapeError(where + "slc weight shape mismatch");
        return;
      }
    }
  }

  NetworkSpec spec_;
  std::vector<LayerParams> params_;
  std::vector<std::array<std::size_t, 3>> shapes_;
};

/// Initializes every parameterized layer with init_conv_kernel / init_slc_kernel
/// in layer order. The number of draws does not depend on alpha, so two specs
/// that differ only in alpha receive identical base kernels from one seed.
inline Network build_network(const NetworkSpec& spec, Rng& rng) {
  const auto shapes = propagate_shapes(spec);
  std::vector<LayerParams> params(spec.layers.size());
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    const std::size_t cin = shapes[l][2];
    if (ls.kind == LayerKind::Conv) {
      params[l] = init_conv_kernel(ls.kernel[0], ls.kernel[1], cin, ls.out_channels, rng);
    } else if (ls.semi_local()) {
      params[l] = init_slc_kernel(ls.kernel[0], ls.kernel[1], cin, ls.out_channels, *ls.alpha, rng);
    }
  }
  return Network(spec, std::move(params));
}

inline ParameterCount count_parameters(const Network& net) { return count_parameters(net.spec()); }

inline ForwardCache network_forward(const Network& net, const Tensor& x) {
  const auto& in = net.spec().input_shape;
  if (!(x.shape() == Shape{in[0], in[1], in[2]})) {
    throw ShapeError("network input " + x.shape().to_string() + " does not match input_shape");
  }
  ForwardCache cache;
  cache.activations.reserve(net.spec().layers.size() + 1);
  cache.activations.push_back(x);
  for (std::size_t l = 0; l < net.spec().layers.size(); ++l) {
    const LayerSpec& ls = net.spec().layers[l];
    const Tensor& cur = cache.activations.back();
    const ConvConfig cc{ls.stride[0], ls.stride[1]};
    const LayerParams& p = net.layer_params()[l];
    switch (ls.kind) {
      case LayerKind::Relu: cache.activations.push_back(relu_forward(cur)); break;
      case LayerKind::Conv: cache.activations.push_back(conv2d_forward(cur, std::get<ConvKernel>(p), cc)); break;
      case LayerKind::Slc: cache.activations.push_back(slc_forward(cur, std::get<SlcKernel>(p), cc)); break;
      case LayerKind::SoftSlc: cache.activations.push_back(soft_slc_forward(cur, std::get<SlcKernel>(p), cc)); break;
    }
  }
  return cache;
}

inline NetworkGradients network_backward(const Network& net, const ForwardCache& cache, const Tensor& dlogits) {
  const std::size_t n = net.spec().layers.size();
  if (cache.activations.size() != n + 1) throw ShapeError("forward cache does not match network");
  if (!(dlogits.shape() == cache.logits().shape())) throw ShapeError("dlogits shape mismatch");
  std::vector<Tensor> per_layer_w(n), per_layer_b(n);
  Tensor grad = dlogits;
  for (std::size_t l = n; l-- > 0;) {
    const LayerSpec& ls = net.spec().layers[l];
    const Tensor& xin = cache.activations[l];
    const ConvConfig cc{ls.stride[0], ls.stride[1]};
    const LayerParams& p = net.layer_params()[l];
    ConvGradients g;
    switch (ls.kind) {
      case LayerKind::Relu: grad = relu_backward(xin, grad); continue;
      case LayerKind::Conv: g = conv2d_backward(xin, std::get<ConvKernel>(p), cc, grad); break;
      case LayerKind::Slc: g = slc_backward(xin, std::get<SlcKernel>(p), cc, grad); break;
      case LayerKind::SoftSlc: g = soft_slc_backward(xin, std::get<SlcKernel>(p), cc, grad); break;
    }
    per_layer_w[l] = std::move(g.dweights);
    per_layer_b[l] = std::move(g.dbias);
    grad = std::move(g.dx);
  }
  NetworkGradients out;
  for (std::size_t l = 0; l < n; ++l) {
    if (!net.spec().layers[l].parameterized()) continue;
    out.params.push_back(std::move(per_layer_w[l]));
    out.params.push_back(std::move(per_layer_b[l]));
  }
  out.input = std::move(grad);
  return out;
}

// JSON: field names follow the struct members.

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = nlohmann::json{{"kind", to_string(l.kind)}};
  if (l.parameterized()) {
    j["out_channels"] = l.out_channels;
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
  }
  if (l.alpha) j["alpha"] = *l.alpha;
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  l = LayerSpec{};
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  if (l.parameterized()) {
    l.out_channels = j.at("out_channels").get<std::size_t>();
    l.kernel = j.value("kernel", std::array<std::size_t, 2>{1, 1});
    l.stride = j.value("stride", std::array<std::size_t, 2>{1, 1});
  }
  if (j.contains("alpha")) l.alpha = j.at("alpha").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = nlohmann::json{{"input_shape", s.input_shape}, {"layers", s.layers}, {"num_classes", s.num_classes}};
}

inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
  s.input_shape = j.at("input_shape").get<std::array<std::size_t, 3>>();
  s.layers = j.at("layers").get<std::vector<LayerSpec>>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
}

inline NetworkSpec parse_network_spec(const std::string& text) {
  try {
    NetworkSpec s = nlohmann::json::parse(text).get<NetworkSpec>();
    propagate_shapes(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid network spec: ") + e.what());
  }
}

}  // namespace slc
