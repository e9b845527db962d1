#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "inrank/data.hpp"
#include "inrank/errors.hpp"
#include "inrank/linalg.hpp"
#include "inrank/net.hpp"
#include "inrank/optim.hpp"
#include "inrank/rng.hpp"
#include "inrank/spectrum.hpp"

namespace inrank {

struct InRankConfig {
  std::size_t r0 = 2;
  std::size_t b = 100;  // clamped per layer to min(out, in) − r0
  double alpha = 0.9;
  double eps = 1e-3;
  std::size_t check_interval = 100;
  bool efficient = false;
  std::size_t fuse_after = 0;  // iterations before fusion (efficient mode)
  VariationMeasure measure = VariationMeasure::sum_of_squares;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("inrank.alpha must be in (0, 1)");
    if (r0 < 1) throw ParameterError("inrank.r0 must be >= 1");
    if (b < 1) throw ParameterError("inrank.b must be >= 1");
    if (!(eps > 0.0) || !std::isfinite(eps)) throw ParameterError("inrank.eps must be positive");
    if (check_interval < 1) throw ParameterError("inrank.check_interval must be >= 1");
    if (efficient && fuse_after < 1) throw ParameterError("inrank.fuse_after must be >= 1 in efficient mode");
  }

  /// Buffer actually used for a layer of the given shape.
  std::size_t buffer_for(std::size_t out, std::size_t in) const {
    const std::size_t max_rank = std::min(out, in);
    if (r0 > max_rank) {
      throw ParameterError("inrank.r0 = " + std::to_string(r0) + " exceeds min(out, in) = " + std::to_string(max_rank));
    }
    return std::min(b, max_rank - r0);
  }
};

struct RankEvent {
  std::size_t iteration = 0;
  std::size_t rank = 0;
  bool saturated = false;  // growth was clamped at min(out, in)
};

/// Per-layer active-rank history; ranks never decrease.
class RankSchedule {
 public:
  void record(std::size_t layer, std::size_t iteration, std::size_t rank, bool saturated = false) {
    if (layer >= layers_.size()) layers_.resize(layer + 1);
    auto& seq = layers_[layer];
    if (!seq.empty() && rank < seq.back().rank) {
      throw UsageError("rank schedule: layer " + std::to_string(layer) + " rank decreased from " +
                       std::to_string(seq.back().rank) + " to " + std::to_string(rank));
    }
    if (!seq.empty() && iteration < seq.back().iteration) {
      throw UsageError("rank schedule: iterations must not go backwards");
    }
    seq.push_back({iteration, rank, saturated});
  }

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const std::vector<RankEvent>& layer(std::size_t l) const { return layers_.at(l); }

  /// Last recorded rank of layer `l`, or 0 if none.
  std::size_t final_rank(std::size_t l) const {
    return l < layers_.size() && !layers_[l].empty() ? layers_[l].back().rank : 0;
  }

 private:
  std::vector<std::vector<RankEvent>> layers_;
};

/// Replaces each dense layer listed in `which` (all when empty) by
/// W0 + U·V with W0 = the dense weight, zero factors of width r0 + b, rank r0.
inline Model make_factorized(const Model& dense, const InRankConfig& cfg, std::span<const std::size_t> which = {}) {
  cfg.validate();
  Model m;
  m.loss = dense.loss;
  for (std::size_t l = 0; l < dense.layers.size(); ++l) {
    const bool selected = which.empty() || std::find(which.begin(), which.end(), l) != which.end();
    const auto* d = std::get_if<DenseLayer>(&dense.layers[l]);
    if (!selected || !d) {
      m.layers.push_back(dense.layers[l]);
      continue;
    }
    const std::size_t buf = cfg.buffer_for(d->w.rows(), d->w.cols());
    m.layers.emplace_back(FactorizedLayer(d->w, cfg.r0 + buf, cfg.r0, d->bias, d->activation));
  }
  m.validate();
  return m;
}

namespace detail {

inline bool growable(const Layer& l) {
  const auto* f = std::get_if<FactorizedLayer>(&l);
  return f && f->has_base();
}

inline Matrix scaled_output_grad(const Model& model, const Matrix& y, const Matrix& target, double* value) {
  LossResult r = loss(model.loss, y, target);
  if (model.loss == LossKind::squared) {
    const double inv = 1.0 / static_cast<double>(y.cols());
    r.value *= inv;
    r.grad *= inv;
  }
  if (value) *value = r.value;
  return std::move(r.grad);
}

}  // namespace detail

/// Gradient-aligned start: with G = ∂L/∂W at W0 and its top-(r0+b) SVD
/// u_g·diag(s_g)·v_gᵀ, sets U = −ε·u_g and V = ε·v_gᵀ. Layers whose gradient
/// is exactly zero get gaussian(ε) factors instead; one warning per such layer
/// is returned.
inline std::vector<std::string> inrank_init(Model& model, const Matrix& x, const Matrix& target,
                                            const InRankConfig& cfg, Rng& rng, RankSchedule* schedule = nullptr) {
  cfg.validate();
  std::vector<std::string> warnings;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!detail::growable(model.layers[l])) continue;
    const auto& f = std::get<FactorizedLayer>(model.layers[l]);
    if (f.u.max_abs() != 0.0 || f.v.max_abs() != 0.0) {
      throw UsageError("inrank_init: layer " + std::to_string(l) + " factors are not zero");
    }
  }
  auto fw = forward(model, x);
  const Matrix dy = detail::scaled_output_grad(model, fw.y, target, nullptr);
  const GradientSet grads = backward(model, fw.cache, dy, true);

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!detail::growable(model.layers[l])) continue;
    auto& f = std::get<FactorizedLayer>(model.layers[l]);
    const Matrix& g = grads.layers[l].weight;
    if (!g.all_finite()) throw NumericError("non-finite gradient at initialization", static_cast<long>(l));
    const std::size_t width = f.width();
    if (g.max_abs() == 0.0) {
      Rng lr = rng.split("init-fallback").split(l);
      for (double& v : f.u.data()) v = cfg.eps * lr.normal();
      for (double& v : f.v.data()) v = cfg.eps * lr.normal();
      warnings.push_back("layer " + std::to_string(l) + ": zero gradient at initialization, using gaussian factors");
    } else {
      const SvdResult s = svd(g, width);
      f.u = s.u * (-cfg.eps);
      f.v = s.v.transpose() * cfg.eps;
    }
    f.rank = std::min(cfg.r0, f.max_rank());
    if (schedule) schedule->record(l, 0, f.rank);
  }
  return warnings;
}

/// Explained-ratio check for factorized layer `layer`. Grows the active rank
/// to the smallest r′ ≥ r with g(r′) ≥ α, appending gaussian(ε/√width) factor
/// modes so the width becomes min(r′ + b, min(out, in)). Returns r′.
inline std::size_t rank_check_and_grow(Model& model, std::size_t layer, const InRankConfig& cfg, Optimizer* opt,
                                       Rng& rng, std::size_t iteration, RankSchedule* schedule = nullptr) {
  auto* f = std::get_if<FactorizedLayer>(&model.layers.at(layer));
  if (!f) throw UsageError("rank_check_and_grow: layer " + std::to_string(layer) + " is not factorized");
  const std::size_t max_rank = f->max_rank();
  const std::size_t buf = cfg.buffer_for(f->out_dim(), f->in_dim());
  const std::size_t r = f->rank;
  if (buf == 0 || r >= max_rank) return r;

  std::vector<double> s;
  try {
    s = thin_svd_of_product(f->u, f->v, std::min(f->width(), max_rank)).s;
  } catch (const NumericError&) {
    throw NumericError("non-finite factors in layer " + std::to_string(layer), static_cast<long>(layer));
  }
  std::size_t r_new = r;
  while (r_new < max_rank && explained_ratio(s, r_new, buf, cfg.measure) < cfg.alpha) ++r_new;
  if (r_new == r) return r;

  const std::size_t old_width = f->width();
  const bool saturated = r_new + buf > max_rank;
  const std::size_t new_width = std::max(old_width, std::min(r_new + buf, max_rank));
  if (new_width > old_width) {
    const std::size_t extra = new_width - old_width;
    const double sd = cfg.eps / std::sqrt(static_cast<double>(new_width));
    Rng gr = rng.split("grow").split(layer).split(iteration);
    Matrix du(f->out_dim(), extra);
    Matrix dv(extra, f->in_dim());
    for (double& v : du.data()) v = sd * gr.normal();
    for (double& v : dv.data()) v = sd * gr.normal();
    f->u = hconcat(f->u, du);
    f->v = vconcat(f->v, dv);
    if (opt) opt->expand_state(layer, old_width, new_width);
  }
  f->rank = r_new;
  f->check();
  if (schedule) schedule->record(layer, iteration, r_new, saturated);
  return r_new;
}

/// Balanced rank-r* reparameterization of W0 + U·V: U* = u*·diag(√s*),
/// V* = diag(√s*)·v*ᵀ. The result has no base weight.
inline FactorizedLayer fuse_to_fixed_rank(const FactorizedLayer& f, std::size_t r_star) {
  if (r_star < 1 || r_star > f.max_rank()) {
    throw ParameterError("fusion rank " + std::to_string(r_star) + " outside [1, " + std::to_string(f.max_rank()) + "]");
  }
  const Layer as_layer = f;
  const SvdResult s = svd(effective_weight(as_layer), r_star);
  Matrix u = s.u;
  Matrix v = s.v.transpose();
  for (std::size_t k = 0; k < r_star; ++k) {
    const double root = std::sqrt(s.s[k]);
    for (std::size_t i = 0; i < u.rows(); ++i) u(i, k) *= root;
    for (double& x : v.row(k)) x *= root;
  }
  return FactorizedLayer::fixed(std::move(u), std::move(v), f.bias, f.activation);
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 0;  // 0 = full batch
  std::size_t metrics_every = 1;   // iterations
  std::size_t spectrum_every = 0;  // iterations; 0 disables
  bool shuffle = true;

  void validate() const {
    if (epochs < 1) throw ParameterError("optim.epochs must be >= 1");
    if (metrics_every < 1) throw ParameterError("logging.metrics_every must be >= 1");
  }
};

struct MetricsRow {
  std::size_t iteration = 0;
  double loss = 0.0;
  std::optional<double> accuracy;
  std::vector<std::size_t> ranks;  // active rank per layer; min(out, in) for dense layers
};

using MetricsSink = std::function<void(const MetricsRow&)>;

struct TrainResult {
  std::vector<MetricsRow> metrics;
  RankSchedule schedule;
  SpectrumTrace trace;
  std::optional<std::size_t> fused_at;
  std::vector<std::string> warnings;
  std::size_t iterations = 0;

  double final_loss() const { return metrics.empty() ? 0.0 : metrics.back().loss; }
};

inline std::vector<std::size_t> layer_ranks(const Model& model) {
  std::vector<std::size_t> r;
  for (const Layer& l : model.layers) {
    if (const auto* f = std::get_if<FactorizedLayer>(&l)) r.push_back(f->rank);
    else r.push_back(std::min(out_dim(l), in_dim(l)));
  }
  return r;
}

/// Full-dataset loss (per-sample mean for squared loss) and accuracy.
inline MetricsRow evaluate(const Model& model, const Dataset& data, std::size_t iteration) {
  MetricsRow row;
  row.iteration = iteration;
  const Matrix y = predict(model, data.x);
  detail::scaled_output_grad(model, y, data.target(), &row.loss);
  if (data.is_classification()) row.accuracy = accuracy(y, data.labels);
  row.ranks = layer_ranks(model);
  return row;
}

/// Minibatch training. With `inrank` set, factorized layers that still carry
/// their base are initialized from the gradient, checked every
/// `check_interval` iterations, and (efficient mode) fused at `fuse_after`.
/// The squared loss is averaged over the batch. `sink` sees each metrics row
/// as it is produced, so rows survive a NumericError.
inline TrainResult train_model(Model& model, const Dataset& data, const TrainConfig& tcfg, Optimizer& opt, Rng& rng,
                               const InRankConfig* inrank = nullptr, const MetricsSink& sink = {}) {
  tcfg.validate();
  model.validate();
  if (inrank) inrank->validate();
  const Matrix target = data.target();
  const std::size_t n = data.samples();
  const std::size_t batch = tcfg.batch_size == 0 ? n : std::min(tcfg.batch_size, n);

  TrainResult res;
  const auto emit = [&](std::size_t it) {
    if (!res.metrics.empty() && res.metrics.back().iteration == it) return;
    res.metrics.push_back(evaluate(model, data, it));
    if (sink) sink(res.metrics.back());
  };

  if (inrank) {
    Rng init_rng = rng.split("inrank-init");
    res.warnings = inrank_init(model, data.x, target, *inrank, init_rng, &res.schedule);
  }
  if (tcfg.spectrum_every > 0) snapshot_spectrum(model, 0, res.trace);
  emit(0);

  Rng shuffle_rng = rng.split("shuffle");
  Rng grow_rng = rng.split("grow");
  std::vector<std::size_t> order(n);
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (tcfg.shuffle && batch < n) {
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const bool whole = len == n && !tcfg.shuffle;
      const Matrix xb = whole ? data.x : select_columns(data.x, idx);
      const Matrix tb = whole ? target : select_columns(target, idx);

      auto fw = forward(model, xb);
      double value = 0.0;
      const Matrix dy = detail::scaled_output_grad(model, fw.y, tb, &value);
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at iteration " + std::to_string(t + 1));
      }
      opt.step(model, backward(model, fw.cache, dy));
      ++t;

      if (inrank && t % inrank->check_interval == 0 && (!inrank->efficient || t <= inrank->fuse_after)) {
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
          if (detail::growable(model.layers[l])) rank_check_and_grow(model, l, *inrank, &opt, grow_rng, t, &res.schedule);
        }
      }
      if (inrank && inrank->efficient && t == inrank->fuse_after) {
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
          if (!detail::growable(model.layers[l])) continue;
          const auto& f = std::get<FactorizedLayer>(model.layers[l]);
          model.layers[l] = fuse_to_fixed_rank(f, f.rank);
          opt.reset_layer(l);
        }
        res.fused_at = t;
      }
      if (tcfg.spectrum_every > 0 && t % tcfg.spectrum_every == 0) snapshot_spectrum(model, t, res.trace);
      if (t % tcfg.metrics_every == 0) emit(t);
    }
  }
  emit(t);
  res.iterations = t;
  return res;
}

}  // namespace inrank
