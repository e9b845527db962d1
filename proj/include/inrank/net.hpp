#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "inrank/errors.hpp"
#include "inrank/linalg.hpp"
#include "inrank/matrix.hpp"
#include "inrank/rng.hpp"

namespace inrank {

enum class Activation { linear, relu, tanh };

inline Activation parse_activation(std::string_view name) {
  if (name == "linear") return Activation::linear;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ParameterError("unknown activation '" + std::string(name) + "'");
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

/// Dense weight `w` (out x in) with optional bias (out x 1). Remembers its
/// weights at construction so cumulative updates can be measured.
class DenseLayer {
 public:
  DenseLayer(Matrix weight, std::optional<Matrix> bias_ = std::nullopt, Activation act = Activation::linear)
      : w(std::move(weight)), bias(std::move(bias_)), activation(act), w0_(w) {
    if (bias && (bias->rows() != w.rows() || bias->cols() != 1)) {
      throw ShapeError("dense bias must be " + Matrix::shape_string(w.rows(), 1) + ", got " + bias->shape());
    }
  }

  Matrix w;
  std::optional<Matrix> bias;
  Activation activation;

  /// Weights as they were at construction; never modified.
  const Matrix& initial() const noexcept { return w0_; }

 private:
  Matrix w0_;
};

/// W = W0 + U·V with a frozen base W0 and trainable factors.
///
/// The factor width is `rank + buffer`: the first `rank` modes are the active
/// rank, the rest are look-ahead buffer modes. After fusion the base is gone
/// and the layer computes U·V alone.
class FactorizedLayer {
 public:
  /// Base-carrying layer with zero factors of the given width.
  FactorizedLayer(Matrix w0, std::size_t width, std::size_t active_rank, std::optional<Matrix> bias_ = std::nullopt,
                  Activation act = Activation::linear)
      : u(w0.rows(), width), v(width, w0.cols()), bias(std::move(bias_)), activation(act), rank(active_rank),
        out_(w0.rows()), in_(w0.cols()), w0_(std::move(w0)) {
    check();
  }

  /// Base-free layer W = U·V.
  static FactorizedLayer fixed(Matrix u_, Matrix v_, std::optional<Matrix> bias_ = std::nullopt,
                               Activation act = Activation::linear) {
    FactorizedLayer f;
    f.out_ = u_.rows();
    f.in_ = v_.cols();
    f.rank = u_.cols();
    f.u = std::move(u_);
    f.v = std::move(v_);
    f.bias = std::move(bias_);
    f.activation = act;
    f.check();
    return f;
  }

  Matrix u;
  Matrix v;
  std::optional<Matrix> bias;
  Activation activation = Activation::linear;
  std::size_t rank = 0;

  std::size_t width() const noexcept { return u.cols(); }
  std::size_t buffer() const noexcept { return width() - rank; }
  std::size_t out_dim() const noexcept { return out_; }
  std::size_t in_dim() const noexcept { return in_; }
  std::size_t max_rank() const noexcept { return std::min(out_, in_); }

  bool has_base() const noexcept { return w0_.has_value(); }
  const Matrix& base() const {
    if (!w0_) throw UsageError("factorized layer has no base weight (fused)");
    return *w0_;
  }

  /// Throws ShapeError unless all factor and bias shapes are consistent.
  void check() const {
    if (u.rows() != out_ || v.cols() != in_ || u.cols() != v.rows()) {
      throw ShapeError("factorized layer shapes inconsistent: u " + u.shape() + ", v " + v.shape());
    }
    if (rank > width() || rank > max_rank()) {
      throw ParameterError("active rank " + std::to_string(rank) + " exceeds width " + std::to_string(width()) +
                           " or min(out, in)");
    }
    if (bias && (bias->rows() != out_ || bias->cols() != 1)) {
      throw ShapeError("factorized bias must be " + Matrix::shape_string(out_, 1) + ", got " + bias->shape());
    }
  }

 private:
  FactorizedLayer() = default;

  std::size_t out_ = 0;
  std::size_t in_ = 0;
  std::optional<Matrix> w0_;
};

using Layer = std::variant<DenseLayer, FactorizedLayer>;

inline std::size_t out_dim(const Layer& l) {
  return std::visit(
      [](const auto& x) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, DenseLayer>) return x.w.rows();
        else return x.out_dim();
      },
      l);
}

inline std::size_t in_dim(const Layer& l) {
  return std::visit(
      [](const auto& x) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, DenseLayer>) return x.w.cols();
        else return x.in_dim();
      },
      l);
}

inline Activation activation_of(const Layer& l) {
  return std::visit([](const auto& x) { return x.activation; }, l);
}

inline const std::optional<Matrix>& bias_of(const Layer& l) {
  return std::visit([](const auto& x) -> const std::optional<Matrix>& { return x.bias; }, l);
}

/// The weight the layer applies: w, or w0 + u·v (u·v when fused).
inline Matrix effective_weight(const Layer& l) {
  if (const auto* d = std::get_if<DenseLayer>(&l)) return d->w;
  const auto& f = std::get<FactorizedLayer>(l);
  Matrix uv = matmul(f.u, f.v);
  if (f.has_base()) uv += f.base();
  return uv;
}

/// Trainable tensors in a fixed order: dense {w, bias?}; factorized {u, v, bias?}.
/// The frozen base of a factorized layer is never listed.
inline std::vector<Matrix*> trainable_parameters(Layer& l) {
  std::vector<Matrix*> p;
  if (auto* d = std::get_if<DenseLayer>(&l)) {
    p.push_back(&d->w);
    if (d->bias) p.push_back(&*d->bias);
  } else {
    auto& f = std::get<FactorizedLayer>(l);
    p.push_back(&f.u);
    p.push_back(&f.v);
    if (f.bias) p.push_back(&*f.bias);
  }
  return p;
}

inline std::vector<const Matrix*> trainable_parameters(const Layer& l) {
  std::vector<const Matrix*> p;
  if (const auto* d = std::get_if<DenseLayer>(&l)) {
    p.push_back(&d->w);
    if (d->bias) p.push_back(&*d->bias);
  } else {
    const auto& f = std::get<FactorizedLayer>(l);
    p.push_back(&f.u);
    p.push_back(&f.v);
    if (f.bias) p.push_back(&*f.bias);
  }
  return p;
}

enum class LossKind { squared, cross_entropy };

inline LossKind parse_loss(std::string_view name) {
  if (name == "squared") return LossKind::squared;
  if (name == "cross-entropy" || name == "cross_entropy") return LossKind::cross_entropy;
  throw ParameterError("unknown loss '" + std::string(name) + "'");
}

/// Ordered layers plus the training loss.
struct Model {
  std::vector<Layer> layers;
  LossKind loss = LossKind::squared;

  std::size_t input_dim() const { return in_dim(layers.front()); }
  std::size_t output_dim() const { return out_dim(layers.back()); }

  void validate() const {
    if (layers.empty()) throw ParameterError("model has no layers");
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
      if (out_dim(layers[l]) != in_dim(layers[l + 1])) {
        throw ShapeError("layer " + std::to_string(l) + " output " + std::to_string(out_dim(layers[l])) +
                         " does not feed layer " + std::to_string(l + 1) + " input " +
                         std::to_string(in_dim(layers[l + 1])));
      }
    }
  }
};

/// Activations saved by `forward` for the matching `backward` call.
struct ForwardCache {
  std::vector<Matrix> inputs;     // input to each layer
  std::vector<Matrix> pre;        // pre-activation of each layer
  std::vector<Matrix> projected;  // v·x for factorized layers, empty otherwise
  std::vector<std::array<std::size_t, 3>> signature;  // out, in, factor width (0 for dense)
  Matrix output;
};

struct ForwardResult {
  Matrix y;
  ForwardCache cache;
};

namespace detail {

inline void add_bias(Matrix& z, const std::optional<Matrix>& bias) {
  if (!bias) return;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const double b = (*bias)(i, 0);
    for (double& x : z.row(i)) x += b;
  }
}

inline Matrix activate(const Matrix& z, Activation a) {
  Matrix out = z;
  switch (a) {
    case Activation::linear: break;
    case Activation::relu:
      for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::tanh:
      for (double& x : out.data()) x = std::tanh(x);
      break;
  }
  return out;
}

// dL/dz from dL/da; relu'(0) is 0.
inline void apply_activation_grad(Matrix& grad, const Matrix& z, Activation a) {
  switch (a) {
    case Activation::linear: break;
    case Activation::relu: {
      auto g = grad.data();
      auto zz = z.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(zz[i] > 0.0)) g[i] = 0.0;
      break;
    }
    case Activation::tanh: {
      auto g = grad.data();
      auto zz = z.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double t = std::tanh(zz[i]);
        g[i] *= 1.0 - t * t;
      }
      break;
    }
  }
}

inline std::array<std::size_t, 3> signature_of(const Layer& l) {
  if (const auto* f = std::get_if<FactorizedLayer>(&l)) return {f->out_dim(), f->in_dim(), f->width()};
  return {out_dim(l), in_dim(l), 0};
}

inline Matrix row_sums(const Matrix& m) {
  Matrix s(m.rows(), 1);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    for (double x : m.row(i)) acc += x;
    s(i, 0) = acc;
  }
  return s;
}

}  // namespace detail

/// Forward pass over a batch whose columns are samples (x is in x batch).
/// Factorized layers compute w0·x + u·(v·x) and never form u·v.
inline ForwardResult forward(const Model& model, const Matrix& x) {
  model.validate();
  if (x.rows() != model.input_dim()) {
    throw ShapeError("forward input " + x.shape() + " does not match model input dimension " +
                     std::to_string(model.input_dim()));
  }
  ForwardCache cache;
  Matrix a = x;
  for (const Layer& layer : model.layers) {
    cache.inputs.push_back(a);
    cache.signature.push_back(detail::signature_of(layer));
    Matrix z;
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      z = matmul(d->w, a);
      cache.projected.emplace_back();
    } else {
      const auto& f = std::get<FactorizedLayer>(layer);
      Matrix h = matmul(f.v, a);
      z = matmul(f.u, h);
      if (f.has_base()) z += matmul(f.base(), a);
      cache.projected.push_back(std::move(h));
    }
    detail::add_bias(z, bias_of(layer));
    a = detail::activate(z, activation_of(layer));
    cache.pre.push_back(std::move(z));
  }
  cache.output = a;
  return {std::move(a), std::move(cache)};
}

/// Forward pass without keeping a cache.
inline Matrix predict(const Model& model, const Matrix& x) { return forward(model, x).y; }

/// Loss value and its gradient with respect to the network output.
struct LossResult {
  double value = 0.0;
  Matrix grad;
};

namespace detail {

inline Matrix softmax_columns(const Matrix& logits) {
  Matrix p = logits;
  for (std::size_t j = 0; j < p.cols(); ++j) {
    double mx = p(0, j);
    for (std::size_t i = 1; i < p.rows(); ++i) mx = std::max(mx, p(i, j));
    double sum = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
      p(i, j) = std::exp(p(i, j) - mx);
      sum += p(i, j);
    }
    for (std::size_t i = 0; i < p.rows(); ++i) p(i, j) /= sum;
  }
  return p;
}

}  // namespace detail

/// squared: ½ Σ (target − y)² summed over every entry, gradient y − target.
/// cross-entropy: `target` is one-hot (or a probability vector) per column;
/// softmax then mean negative log-likelihood over the batch.
inline LossResult loss(LossKind kind, const Matrix& y, const Matrix& target) {
  if (y.rows() != target.rows() || y.cols() != target.cols()) {
    throw ShapeError("loss shape mismatch: output " + y.shape() + " vs target " + target.shape());
  }
  LossResult r;
  if (kind == LossKind::squared) {
    r.grad = y - target;
    double s = 0.0;
    for (double d : r.grad.data()) s += d * d;
    r.value = 0.5 * s;
    return r;
  }
  const Matrix p = detail::softmax_columns(y);
  const double batch = static_cast<double>(y.cols());
  double nll = 0.0;
  for (std::size_t j = 0; j < y.cols(); ++j) {
    double mx = y(0, j);
    for (std::size_t i = 1; i < y.rows(); ++i) mx = std::max(mx, y(i, j));
    double lse = 0.0;
    for (std::size_t i = 0; i < y.rows(); ++i) lse += std::exp(y(i, j) - mx);
    lse = mx + std::log(lse);
    for (std::size_t i = 0; i < y.rows(); ++i) nll += target(i, j) * (lse - y(i, j));
  }
  r.value = nll / batch;
  r.grad = (p - target) * (1.0 / batch);
  return r;
}

/// Class-index targets for cross-entropy.
inline Matrix one_hot(std::span<const int> labels, std::size_t n_classes) {
  Matrix t(n_classes, labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] < 0 || static_cast<std::size_t>(labels[j]) >= n_classes) {
      throw ParameterError("label " + std::to_string(labels[j]) + " outside [0, " + std::to_string(n_classes) + ")");
    }
    t(static_cast<std::size_t>(labels[j]), j) = 1.0;
  }
  return t;
}

inline LossResult cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.cols()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + logits.shape());
  }
  return loss(LossKind::cross_entropy, logits, one_hot(labels, logits.rows()));
}

/// Fraction of columns whose arg-max matches the label.
inline double accuracy(const Matrix& logits, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < logits.cols(); ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.rows(); ++i)
      if (logits(i, j) > logits(best, j)) best = i;
    if (static_cast<int>(best) == labels[j]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Per-layer gradients, index-aligned with `trainable_parameters`.
struct LayerGradient {
  std::vector<Matrix> params;
  Matrix weight;  // dL/dW of the effective weight; only filled on request
};

struct GradientSet {
  std::vector<LayerGradient> layers;

  bool all_finite() const {
    for (const auto& l : layers)
      for (const auto& p : l.params)
        if (!p.all_finite()) return false;
    return true;
  }
};

/// Reverse pass. For W = W0 + U·V with upstream G = ∂L/∂W: ∂L/∂U = G·Vᵀ and
/// ∂L/∂V = Uᵀ·G, evaluated through the cached v·x so G is never formed unless
/// `with_weight_gradients` asks for it.
inline GradientSet backward(const Model& model, const ForwardCache& cache, const Matrix& dy,
                            bool with_weight_gradients = false) {
  const std::size_t n = model.layers.size();
  if (cache.inputs.size() != n || cache.signature.size() != n) {
    throw UsageError("backward: cache was recorded for a model with a different layer count");
  }
  for (std::size_t l = 0; l < n; ++l) {
    if (cache.signature[l] != detail::signature_of(model.layers[l])) {
      throw UsageError("backward: stale cache, layer " + std::to_string(l) + " changed shape since forward");
    }
  }
  if (dy.rows() != cache.output.rows() || dy.cols() != cache.output.cols()) {
    throw ShapeError("backward: upstream gradient " + dy.shape() + " does not match output " + cache.output.shape());
  }

  GradientSet grads;
  grads.layers.resize(n);
  Matrix upstream = dy;
  for (std::size_t l = n; l-- > 0;) {
    const Layer& layer = model.layers[l];
    Matrix dz = std::move(upstream);
    detail::apply_activation_grad(dz, cache.pre[l], activation_of(layer));
    const Matrix& x = cache.inputs[l];
    LayerGradient& g = grads.layers[l];

    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      g.params.push_back(matmul_nt(dz, x));
      if (d->bias) g.params.push_back(detail::row_sums(dz));
      if (with_weight_gradients) g.weight = g.params.front();
      if (l > 0) upstream = matmul_tn(d->w, dz);
    } else {
      const auto& f = std::get<FactorizedLayer>(layer);
      const Matrix& h = cache.projected[l];
      Matrix t = matmul_tn(f.u, dz);  // Uᵀ dz
      g.params.push_back(matmul_nt(dz, h));
      g.params.push_back(matmul_nt(t, x));
      if (f.bias) g.params.push_back(detail::row_sums(dz));
      if (with_weight_gradients) g.weight = matmul_nt(dz, x);
      if (l > 0) {
        upstream = matmul_tn(f.v, t);
        if (f.has_base()) upstream += matmul_tn(f.base(), dz);
      }
    }
  }
  return grads;
}

/// Deep linear network: dense layers, linear activations, no bias.
/// Layer l maps dims[l] -> dims[l+1] and draws from its own substream.
inline Model build_deep_linear(std::span<const std::size_t> dims, const InitScheme& scheme, Rng& rng) {
  if (dims.size() < 2) throw ParameterError("build_deep_linear needs at least two dimensions");
  Model m;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Rng layer_rng = rng.split("layer").split(l);
    m.layers.emplace_back(DenseLayer(init_weights(dims[l + 1], dims[l], scheme, layer_rng)));
  }
  return m;
}

/// MLP with `hidden` activations and a linear output layer. Biases start at 0.
inline Model build_mlp(std::span<const std::size_t> dims, Activation hidden, const InitScheme& scheme, bool with_bias,
                       LossKind loss_kind, Rng& rng) {
  if (dims.size() < 2) throw ParameterError("build_mlp needs at least two dimensions");
  Model m;
  m.loss = loss_kind;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Rng layer_rng = rng.split("layer").split(l);
    std::optional<Matrix> b;
    if (with_bias) b = Matrix(dims[l + 1], 1);
    const Activation act = (l + 2 == dims.size()) ? Activation::linear : hidden;
    m.layers.emplace_back(DenseLayer(init_weights(dims[l + 1], dims[l], scheme, layer_rng), std::move(b), act));
  }
  return m;
}

/// Product matrix W^L … W^1 of a purely linear, bias-free model.
inline Matrix collapse_product(const Model& model) {
  model.validate();
  Matrix a;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Layer& layer = model.layers[l];
    if (activation_of(layer) != Activation::linear) {
      throw UsageError("collapse_product: layer " + std::to_string(l) + " has a nonlinear activation");
    }
    if (bias_of(layer)) throw UsageError("collapse_product: layer " + std::to_string(l) + " has a bias");
    Matrix w = effective_weight(layer);
    a = (l == 0) ? std::move(w) : matmul(w, a);
  }
  return a;
}

}  // namespace inrank
