#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "slc/data.hpp"
#include "slc/error.hpp"
#include "slc/model.hpp"
#include "slc/tensor.hpp"

namespace slc {

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;
};

/// Mean softmax cross-entropy over pixels with mask set and label != 0.
/// Label c in 1..C targets logit channel c - 1.
inline LossResult softmax_xent(const Tensor& logits, std::span<const std::uint16_t> labels,
                               std::span<const std::uint8_t> mask) {
  if (logits.shape().rank() != 3) throw ShapeError("logits must be [H,W,C]");
  const std::size_t n = logits.dim(0) * logits.dim(1), C = logits.dim(2);
  if (labels.size() != n || mask.size() != n) throw ShapeError("labels/mask size does not match logits");
  std::size_t included = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (labels[p] > C) throw ShapeError("label " + std::to_string(labels[p]) + " exceeds class count");
    if (mask[p] && labels[p] != 0) ++included;
  }
  if (included == 0) throw ConfigError("softmax_xent: no included pixels");

  LossResult r{0.0, Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(included);
  std::vector<double> prob(C);
  for (std::size_t p = 0; p < n; ++p) {
    if (!mask[p] || labels[p] == 0) continue;
    const double* z = logits.raw() + p * C;
    double zmax = z[0];
    for (std::size_t c = 1; c < C; ++c) zmax = std::max(zmax, z[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      prob[c] = std::exp(z[c] - zmax);
      denom += prob[c];
    }
    const std::size_t target = labels[p] - 1u;
    r.loss += (std::log(denom) - (z[target] - zmax)) * inv_n;
    double* g = r.dlogits.raw() + p * C;
    for (std::size_t c = 0; c < C; ++c) g[c] = (prob[c] / denom - (c == target ? 1.0 : 0.0)) * inv_n;
  }
  return r;
}

struct SgdState {
  std::vector<Tensor> velocity;
};

/// v <- momentum * v + g; p <- p - lr * v.
inline void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr, double momentum,
                     SgdState& state) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: params/grads count mismatch");
  if (state.velocity.empty()) {
    for (const Tensor* p : params) state.velocity.emplace_back(p->shape());
  }
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: state does not match params");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Tensor& v = state.velocity[k];
    const Tensor& g = grads[k];
    if (!(p.shape() == g.shape()) || !(p.shape() == v.shape())) throw ShapeError("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
}

/// Counts indexed by class id 0..C; rows are ground truth, columns predictions.
/// Pixels whose label equals ignore_class are never accumulated.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_ids, std::uint16_t ignore_class = 0)
      : n_(num_ids), ignore_(ignore_class), counts_(num_ids * num_ids, 0) {
    if (num_ids < 2) throw ConfigError("confusion matrix needs at least 2 ids");
  }

  std::size_t size() const { return n_; }
  std::uint16_t ignore_class() const { return ignore_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1) {
    if (truth >= n_ || pred >= n_) throw std::out_of_range("class id out of range");
    counts_[truth * n_ + pred] += n;
  }

  void accumulate(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> labels,
                  std::span<const std::uint8_t> mask) {
    if (pred.size() != labels.size() || mask.size() != labels.size()) throw ShapeError("accumulate: size mismatch");
    for (std::size_t p = 0; p < labels.size(); ++p) {
      if (!mask[p] || labels[p] == ignore_) continue;
      add(labels[p], pred[p]);
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.n_ != n_ || o.ignore_ != ignore_) throw ShapeError("cannot merge confusion matrices of different layout");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

 private:
  std::size_t n_;
  std::uint16_t ignore_;
  std::vector<std::uint64_t> counts_;
};

/// Per-pixel argmax over channels as class ids 1..C; ties go to the lowest index.
inline std::vector<std::uint16_t> argmax_classes(const Tensor& logits) {
  const std::size_t n = logits.dim(0) * logits.dim(1), C = logits.dim(2);
  std::vector<std::uint16_t> pred(n);
  for (std::size_t p = 0; p < n; ++p) {
    const double* z = logits.raw() + p * C;
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (z[c] > z[best]) best = c;
    pred[p] = static_cast<std::uint16_t>(best + 1);
  }
  return pred;
}

struct Metrics {
  double accuracy = 0.0;
  std::vector<std::optional<double>> class_iou;  // index = class id; nullopt when absent or ignored
  double miou = 0.0;
};

/// IoU_c = TP / (TP + FP + FN); classes with an empty union are left out of the mean.
inline Metrics metrics(const ConfusionMatrix& cm) {
  const std::size_t n = cm.size();
  const std::uint64_t total = cm.total();
  if (total == 0) throw ConfigError("metrics: no evaluated pixels");
  Metrics m;
  m.class_iou.assign(n, std::nullopt);
  std::uint64_t diag = 0;
  double iou_sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n; ++c) {
    if (c == cm.ignore_class()) continue;
    const std::uint64_t tp = cm(c, c);
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == c) continue;
      fp += cm(o, c);
      fn += cm(c, o);
    }
    diag += tp;
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    m.class_iou[c] = iou;
    iou_sum += iou;
    ++counted;
  }
  m.accuracy = static_cast<double>(diag) / static_cast<double>(total);
  m.miou = counted ? iou_sum / static_cast<double>(counted) : 0.0;
  return m;
}

/// Standardized network input with its targets.
struct Sample {
  Tensor input;
  std::vector<std::uint16_t> labels;
  std::vector<std::uint8_t> mask;

  bool has_targets() const {
    for (std::size_t p = 0; p < labels.size(); ++p)
      if (mask[p] && labels[p] != 0) return true;
    return false;
  }
};

inline Sample make_sample(const RangeScan& scan, const ChannelStats& stats) {
  return {standardize(scan, stats), scan.labels, scan.mask};
}

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 10;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"momentum", c.momentum},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
}

inline ConfusionMatrix evaluate(const Network& net, std::span<const Sample> data) {
  ConfusionMatrix cm(net.spec().num_classes + 1, 0);
  for (const Sample& s : data) {
    const auto cache = network_forward(net, s.input);
    cm.accumulate(argmax_classes(cache.logits()), s.labels, s.mask);
  }
  return cm;
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean training loss over the epoch
  Metrics metrics;    // on the evaluation set
};

/// Minibatch SGD with momentum. The sample order of each epoch is a seeded
/// shuffle; gradients of a batch are averaged before the step. Metrics are
/// computed on `eval` after every epoch (on `data` when `eval` is empty).
inline std::vector<EpochLog> train(Network& net, std::span<const Sample> data, const TrainConfig& cfg,
                                   std::span<const Sample> eval = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].has_targets()) usable.push_back(i);
  if (usable.empty()) throw ConfigError("training set has no labeled pixels");
  if (eval.empty()) eval = data;

  Rng rng(cfg.seed);
  SgdState state;
  const auto params = net.parameters();
  std::vector<EpochLog> log;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = usable;
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      std::vector<Tensor> grads;
      for (std::size_t b = b0; b < b1; ++b) {
        const Sample& s = data[order[b]];
        const auto cache = network_forward(net, s.input);
        auto loss = softmax_xent(cache.logits(), s.labels, s.mask);
        loss_sum += loss.loss;
        auto g = network_backward(net, cache, loss.dlogits);
        if (grads.empty()) {
          grads = std::move(g.params);
        } else {
          for (std::size_t k = 0; k < grads.size(); ++k)
            for (std::size_t i = 0; i < grads[k].size(); ++i) grads[k][i] += g.params[k][i];
        }
      }
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      for (Tensor& g : grads)
        for (double& v : g.data()) v *= scale;
      sgd_step(params, grads, cfg.learning_rate, cfg.momentum, state);
    }
    EpochLog e;
    e.epoch = epoch;
    e.loss = loss_sum / static_cast<double>(order.size());
    e.metrics = metrics(evaluate(net, eval));
    log.push_back(std::move(e));
  }
  return log;
}

/// CSV with header epoch,loss,accuracy,miou,iou_1..iou_C; absent classes print "nan".
inline void write_metrics_csv(std::ostream& os, std::span<const EpochLog> log, std::size_t num_classes) {
  os << "epoch,loss,accuracy,miou";
  for (std::size_t c = 1; c <= num_classes; ++c) os << ",iou_" << c;
  os << '\n';
  os << std::setprecision(17);
  for (const EpochLog& e : log) {
    os << e.epoch << ',' << e.loss << ',' << e.metrics.accuracy << ',' << e.metrics.miou;
    for (std::size_t c = 1; c <= num_classes; ++c) {
      os << ',';
      if (c < e.metrics.class_iou.size() && e.metrics.class_iou[c]) {
        os << *e.metrics.class_iou[c];
      } else {
        os << "nan";
      }
    }
    os << '\n';
  }
}

}  // namespace slc
