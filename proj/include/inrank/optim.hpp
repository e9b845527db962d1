#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "inrank/errors.hpp"
#include "inrank/matrix.hpp"
#include "inrank/net.hpp"

namespace inrank {

enum class OptimizerKind { sgd, momentum, adam, adamw };

inline OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "momentum") return OptimizerKind::momentum;
  if (name == "adam") return OptimizerKind::adam;
  if (name == "adamw") return OptimizerKind::adamw;
  throw ParameterError("unknown optimizer '" + std::string(name) + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // AdamW only
  double momentum = 0.9;
  std::size_t warmup_steps = 0;  // linear warmup; 0 keeps lr constant

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ParameterError("beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("beta2 must be in [0, 1)");
    if (!(eps > 0.0)) throw ParameterError("adam epsilon must be positive");
    if (!(weight_decay >= 0.0)) throw ParameterError("weight decay must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must be in [0, 1)");
  }
};

/// First-order optimizer with per-parameter state that can widen when a
/// factorized layer grows.
class Optimizer {
 public:
  struct Slot {
    Matrix first;   // momentum buffer or Adam first moment
    Matrix second;  // Adam second moment
  };

  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const OptimizerConfig& config() const noexcept { return cfg_; }
  std::size_t step_count() const noexcept { return t_; }

  double current_lr() const noexcept {
    if (cfg_.warmup_steps == 0) return cfg_.lr;
    const double frac = static_cast<double>(std::min(t_, cfg_.warmup_steps)) / static_cast<double>(cfg_.warmup_steps);
    return cfg_.lr * frac;
  }

  /// Applies one update to every trainable parameter of `model`.
  void step(Model& model, const GradientSet& grads) {
    if (grads.layers.size() != model.layers.size()) {
      throw ShapeError("optimizer: gradient set has " + std::to_string(grads.layers.size()) + " layers, model has " +
                       std::to_string(model.layers.size()));
    }
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      auto params = trainable_parameters(model.layers[l]);
      const auto& g = grads.layers[l].params;
      if (g.size() != params.size()) throw ShapeError("optimizer: layer " + std::to_string(l) + " gradient count mismatch");
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (g[p].rows() != params[p]->rows() || g[p].cols() != params[p]->cols()) {
          throw ShapeError("optimizer: layer " + std::to_string(l) + " gradient " + g[p].shape() +
                           " does not match parameter " + params[p]->shape());
        }
        if (!g[p].all_finite()) {
          throw NumericError("non-finite gradient in layer " + std::to_string(l), static_cast<long>(l));
        }
      }
    }

    ++t_;
    const double lr = current_lr();
    if (slots_.size() < model.layers.size()) slots_.resize(model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      auto params = trainable_parameters(model.layers[l]);
      auto& layer_slots = slots_[l];
      if (layer_slots.empty()) layer_slots.resize(params.size());
      if (layer_slots.size() != params.size()) {
        throw UsageError("optimizer: layer " + std::to_string(l) + " changed its parameter list");
      }
      for (std::size_t p = 0; p < params.size(); ++p) {
        update(*params[p], grads.layers[l].params[p], layer_slots[p], lr, l);
      }
    }
  }

  /// Widens the state of factorized layer `layer` from `old_width` to
  /// `new_width`: zero columns for u, zero rows for v. Existing entries and the
  /// step counter are untouched.
  void expand_state(std::size_t layer, std::size_t old_width, std::size_t new_width) {
    if (new_width <= old_width) {
      throw UsageError("expand_state: new width " + std::to_string(new_width) + " must exceed old width " +
                       std::to_string(old_width));
    }
    if (layer >= slots_.size() || slots_[layer].empty()) return;  // no state yet
    auto& s = slots_[layer];
    if (s.size() < 2) throw UsageError("expand_state: layer " + std::to_string(layer) + " is not factorized");
    const std::size_t extra = new_width - old_width;
    for (Matrix* m : {&s[0].first, &s[0].second}) {
      if (m->empty()) continue;
      if (m->cols() != old_width) throw UsageError("expand_state: u state width mismatch in layer " + std::to_string(layer));
      *m = hconcat(*m, Matrix(m->rows(), extra));
    }
    for (Matrix* m : {&s[1].first, &s[1].second}) {
      if (m->empty()) continue;
      if (m->rows() != old_width) throw UsageError("expand_state: v state width mismatch in layer " + std::to_string(layer));
      *m = vconcat(*m, Matrix(extra, m->cols()));
    }
  }

  /// Drops all state of one layer; it is re-created as zeros on the next step.
  void reset_layer(std::size_t layer) {
    if (layer < slots_.size()) slots_[layer].clear();
  }

  const std::vector<Slot>& slots(std::size_t layer) const {
    static const std::vector<Slot> none;
    return layer < slots_.size() ? slots_[layer] : none;
  }

 private:
  static void ensure(Matrix& m, const Matrix& like) {
    if (m.empty()) {
      m = Matrix(like.rows(), like.cols());
    } else if (m.rows() != like.rows() || m.cols() != like.cols()) {
      throw UsageError("optimizer state " + m.shape() + " is not congruent with parameter " + like.shape());
    }
  }

  void update(Matrix& param, const Matrix& grad, Slot& slot, double lr, std::size_t layer) {
    auto p = param.data();
    auto g = grad.data();
    switch (cfg_.kind) {
      case OptimizerKind::sgd:
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
        break;
      case OptimizerKind::momentum: {
        ensure(slot.first, param);
        auto m = slot.first.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = cfg_.momentum * m[i] + g[i];
          p[i] -= lr * m[i];
        }
        break;
      }
      case OptimizerKind::adam:
      case OptimizerKind::adamw: {
        ensure(slot.first, param);
        ensure(slot.second, param);
        auto m = slot.first.data();
        auto v = slot.second.data();
        const double t = static_cast<double>(t_);
        const double c1 = 1.0 - std::pow(cfg_.beta1, t);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t);
        const bool decoupled = cfg_.kind == OptimizerKind::adamw && cfg_.weight_decay != 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          const double mhat = m[i] / c1;
          const double vhat = v[i] / c2;
          if (decoupled) p[i] -= lr * cfg_.weight_decay * p[i];
          p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        break;
      }
    }
    if (!param.all_finite()) {
      throw NumericError("parameter became non-finite in layer " + std::to_string(layer), static_cast<long>(layer));
    }
  }

  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<Slot>> slots_;
};

}  // namespace inrank
