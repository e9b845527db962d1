#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "inrank/errors.hpp"
#include "inrank/linalg.hpp"
#include "inrank/matrix.hpp"

namespace inrank {

/// Convex cost C(A) = ½‖A − target‖² over the product matrix A (ny x nx).
struct GlrlTask {
  Matrix target;

  double cost(const Matrix& a) const {
    const double e = (a - target).frobenius_norm();
    return 0.5 * e * e;
  }
  Matrix gradient(const Matrix& a) const { return a - target; }

  /// ½·Σ_{i>w} sᵢ² of the target: the best cost reachable at rank w.
  double eckart_young_bound(std::size_t w) const {
    const auto s = singular_values(target);
    double acc = 0.0;
    for (std::size_t i = w; i < s.size(); ++i) acc += s[i] * s[i];
    return 0.5 * acc;
  }

  /// Minimum of C over all product matrices; 0 since any ny x nx matrix is
  /// reachable once the width reaches min(ny, nx).
  double minimum() const { return 0.0; }
};

struct GlrlConfig {
  std::size_t depth = 3;
  double eps = 1e-4;
  double lr = 0.1;
  std::size_t steps_per_width = 150000;  // T; the cap per width in plateau mode
  double tol = 1e-6;                     // stop once C ≤ C_min + tol
  bool plateau_mode = false;
  std::size_t plateau_window = 200;
  double plateau_tol = 1e-7;
  std::size_t max_width = 0;  // 0 = min(ny, nx)
  std::size_t record_every = 100;

  void validate() const {
    if (depth < 2) throw ParameterError("glrl.depth must be >= 2");
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw ParameterError("glrl.eps must be >= 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("glrl.lr must be positive");
    if (steps_per_width < 1) throw ParameterError("glrl.steps_per_width must be >= 1");
    if (!(tol >= 0.0)) throw ParameterError("glrl.tol must be >= 0");
    if (plateau_window < 1) throw ParameterError("glrl.plateau_window must be >= 1");
    if (!(plateau_tol >= 0.0)) throw ParameterError("glrl.plateau_tol must be >= 0");
    if (record_every < 1) throw ParameterError("glrl.record_every must be >= 1");
  }
};

/// Factors W¹ … Wᴸ of a deep linear chain at width w: W¹ is w x nx, inner
/// layers are w x w, Wᴸ is ny x w.
struct GlrlState {
  std::vector<Matrix> w;
  double eps = 0.0;

  std::size_t width() const { return w.front().rows(); }

  Matrix product() const {
    Matrix a = w.front();
    for (std::size_t l = 1; l < w.size(); ++l) a = matmul(w[l], a);
    return a;
  }
};

/// Width-one start from the top singular pair (u, v) of ∇C(0):
/// θ = (−ε·vᵀ, ε, …, ε, ε·u), so A = −εᴸ·u·vᵀ.
inline GlrlState glrl_init(const GlrlTask& task, std::size_t depth, double eps) {
  if (depth < 2) throw ParameterError("glrl depth must be >= 2");
  const std::size_t ny = task.target.rows();
  const std::size_t nx = task.target.cols();
  const SvdResult top = svd(task.gradient(Matrix(ny, nx)), 1);
  GlrlState st;
  st.eps = eps;
  Matrix first(1, nx);
  for (std::size_t j = 0; j < nx; ++j) first(0, j) = -eps * top.v(j, 0);
  st.w.push_back(std::move(first));
  for (std::size_t l = 1; l + 1 < depth; ++l) st.w.emplace_back(1, 1, eps);
  Matrix last(ny, 1);
  for (std::size_t i = 0; i < ny; ++i) last(i, 0) = eps * top.u(i, 0);
  st.w.push_back(std::move(last));
  return st;
}

/// Adds one unit of width: W¹ gains the row −ε·vᵀ, inner layers a diagonal
/// ε with zero off-blocks, Wᴸ the column ε·u. The product becomes
/// A − εᴸ·u·vᵀ; existing entries are untouched.
inline void expand_width(GlrlState& st, std::span<const double> u, std::span<const double> v) {
  const std::size_t ny = st.w.back().rows();
  const std::size_t nx = st.w.front().cols();
  if (u.size() != ny || v.size() != nx) {
    throw ShapeError("expand_width: singular vectors of length " + std::to_string(u.size()) + ", " +
                     std::to_string(v.size()) + " for a " + std::to_string(ny) + "x" + std::to_string(nx) + " product");
  }
  const double eps = st.eps;
  Matrix row(1, nx);
  for (std::size_t j = 0; j < nx; ++j) row(0, j) = -eps * v[j];
  st.w.front() = vconcat(st.w.front(), row);
  for (std::size_t l = 1; l + 1 < st.w.size(); ++l) {
    const std::size_t w = st.w[l].rows();
    Matrix grown(w + 1, w + 1);
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t j = 0; j < w; ++j) grown(i, j) = st.w[l](i, j);
    grown(w, w) = eps;
    st.w[l] = std::move(grown);
  }
  Matrix col(ny, 1);
  for (std::size_t i = 0; i < ny; ++i) col(i, 0) = eps * u[i];
  st.w.back() = hconcat(st.w.back(), col);
}

/// Gradients of C(A_θ) with respect to every factor.
inline std::vector<Matrix> glrl_gradients(const GlrlTask& task, const GlrlState& st, double* cost = nullptr) {
  const std::size_t n = st.w.size();
  std::vector<Matrix> prefix(n);  // prefix[l] = W_l … W_0
  prefix[0] = st.w[0];
  for (std::size_t l = 1; l < n; ++l) prefix[l] = matmul(st.w[l], prefix[l - 1]);
  const Matrix g = task.gradient(prefix[n - 1]);
  if (cost) *cost = task.cost(prefix[n - 1]);

  std::vector<Matrix> grads(n);
  Matrix back = g;  // (W_{n-1} … W_{l+1})ᵀ·G
  for (std::size_t l = n; l-- > 0;) {
    grads[l] = l == 0 ? back : matmul_nt(back, prefix[l - 1]);
    if (l > 0) back = matmul_tn(st.w[l], back);
  }
  return grads;
}

struct GlrlRecord {
  std::size_t iteration = 0;
  double loss = 0.0;
  std::size_t width = 0;
};

struct GlrlPlateau {
  std::size_t width = 0;
  std::size_t iteration = 0;  // last step trained at this width
  double loss = 0.0;
  double bound = 0.0;  // Eckart-Young cost at this width
};

struct GlrlResult {
  GlrlState state;
  std::vector<std::size_t> width_history;  // width after each expansion, starting at 1
  std::vector<GlrlRecord> history;
  std::vector<GlrlPlateau> plateaus;
  bool converged = false;  // C ≤ C_min + tol
  bool saturated = false;  // stopped at the width limit above tolerance
  std::size_t iterations = 0;
};

/// Greedy low-rank learning: train at width w for T steps (or until the loss
/// plateaus), and while C > C_min + tol widen by the top singular pair of
/// ∇C(A_θ). In plateau mode the detector arms only once the loss has fallen
/// since the last expansion, so the initial saddle escape is not mistaken for
/// a plateau.
inline GlrlResult glrl_train(const GlrlTask& task, const GlrlConfig& cfg,
                             const std::function<void(const GlrlRecord&)>& sink = {}) {
  cfg.validate();
  const std::size_t limit = cfg.max_width == 0 ? std::min(task.target.rows(), task.target.cols())
                                               : std::min(cfg.max_width, std::min(task.target.rows(), task.target.cols()));
  const double c_min = task.minimum();

  GlrlResult res;
  res.state = glrl_init(task, cfg.depth, cfg.eps);
  res.width_history.push_back(1);
  std::size_t it = 0;
  const auto record = [&](double c) {
    if (!res.history.empty() && res.history.back().iteration == it) return;
    res.history.push_back({it, c, res.state.width()});
    if (sink) sink(res.history.back());
  };

  for (;;) {
    double c = task.cost(res.state.product());
    record(c);
    const double start = c;
    std::vector<double> window;
    window.reserve(cfg.plateau_window + 1);
    bool armed = false;
    for (std::size_t k = 0; k < cfg.steps_per_width; ++k) {
      const auto grads = glrl_gradients(task, res.state, &c);
      if (!std::isfinite(c)) throw NumericError("glrl: non-finite loss at iteration " + std::to_string(it));
      for (std::size_t l = 0; l < grads.size(); ++l) res.state.w[l] -= grads[l] * cfg.lr;
      ++it;
      c = task.cost(res.state.product());
      if (!std::isfinite(c)) throw NumericError("glrl: non-finite loss at iteration " + std::to_string(it));
      if (it % cfg.record_every == 0) record(c);
      if (c <= c_min + cfg.tol) break;
      if (cfg.plateau_mode) {
        if (!armed && c < start * (1.0 - 1e-3)) armed = true;
        window.push_back(c);
        if (window.size() > cfg.plateau_window) window.erase(window.begin());
        if (armed && window.size() == cfg.plateau_window && window.front() - window.back() < cfg.plateau_tol) break;
      }
    }
    record(c);
    const std::size_t w = res.state.width();
    res.plateaus.push_back({w, it, c, task.eckart_young_bound(w)});
    if (c <= c_min + cfg.tol) {
      res.converged = true;
      break;
    }
    if (w >= limit) {
      res.saturated = true;
      break;
    }
    const SvdResult top = svd(task.gradient(res.state.product()), 1);
    expand_width(res.state, top.u.col(0), top.v.col(0));
    res.width_history.push_back(res.state.width());
  }
  res.iterations = it;
  return res;
}

}  // namespace inrank
