#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "inrank/errors.hpp"
#include "inrank/linalg.hpp"
#include "inrank/matrix.hpp"
#include "inrank/net.hpp"
#include "inrank/optim.hpp"
#include "inrank/rng.hpp"
#include "inrank/spectrum.hpp"

namespace inrank {

/// One decoupled mode: target strength s, initial strength u0, time constant τ.
struct ModeSpec {
  double s = 1.0;
  double u0 = 0.01;
  double tau = 1.0;

  void validate() const {
    if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("mode s must be positive");
    if (!(u0 > 0.0) || !std::isfinite(u0)) throw ParameterError("mode u0 must be positive");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("mode tau must be positive");
  }
};

/// Residual strength u(t) − u0 of a mode under du/dt = 2u(s − u)/τ, evaluated
/// in the overflow-free form (s − u0)(1 − e^{−x}) / (1 + (s/u0 − 1)e^{−x}),
/// x = 2st/τ.
inline double closed_form_mode(double t, const ModeSpec& m) {
  m.validate();
  if (!(t >= 0.0)) throw ParameterError("closed_form_mode: t must be >= 0");
  const double x = 2.0 * m.s * t / m.tau;
  const double decay = std::exp(-x);
  return (m.s - m.u0) * -std::expm1(-x) / (1.0 + (m.s / m.u0 - 1.0) * decay);
}

/// du/dt at strength u.
inline double mode_rate(const ModeSpec& m, double u) { return 2.0 * u * (m.s - u) / m.tau; }

/// Time at which u(t) reaches s/2; 0 when u0 ≥ s/2.
inline double half_rise_time(const ModeSpec& m) {
  m.validate();
  if (m.u0 >= 0.5 * m.s) return 0.0;
  return m.tau / (2.0 * m.s) * std::log((m.s - m.u0) / m.u0);
}

/// RK4 integration of the scalar mode ODE. Entry k is u(k·dt) − u0.
inline std::vector<double> ode_mode(const ModeSpec& m, double dt, std::size_t steps) {
  m.validate();
  if (!(dt > 0.0) || dt > 0.01 * m.tau / m.s) {
    throw ParameterError("ode_mode: dt must be in (0, 0.01·tau/s]");
  }
  const double upper = std::max(2.0 * m.s, m.u0);
  std::vector<double> out;
  out.reserve(steps + 1);
  double u = m.u0;
  out.push_back(0.0);
  for (std::size_t k = 0; k < steps; ++k) {
    const double k1 = mode_rate(m, u);
    const double k2 = mode_rate(m, u + 0.5 * dt * k1);
    const double k3 = mode_rate(m, u + 0.5 * dt * k2);
    const double k4 = mode_rate(m, u + dt * k3);
    u += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!(u >= 0.0 && u <= upper)) {
      throw NumericError("ode_mode: unstable at step " + std::to_string(k + 1) + " (u = " + std::to_string(u) + ")");
    }
    out.push_back(u - m.u0);
  }
  return out;
}

/// u0 = max(|N(0, b²)|, 1e-6), one draw per mode.
inline std::vector<double> sample_initial_strengths(std::size_t n, double b, Rng& rng) {
  if (!(b > 0.0)) throw ParameterError("initial strength scale must be positive");
  std::vector<double> u0(n);
  for (double& u : u0) u = std::max(std::abs(b * rng.normal()), 1e-6);
  return u0;
}

enum class Integrator { euler, rk4 };

inline Integrator parse_integrator(std::string_view name) {
  if (name == "euler") return Integrator::euler;
  if (name == "rk4") return Integrator::rk4;
  throw ParameterError("unknown integrator '" + std::string(name) + "'");
}

/// Three-layer linear network y = W2·W1·x trained on a planted correlation
/// Σyx = U·diag(s)·Vᵀ with Σxx = I.
struct FlowConfig {
  std::size_t nx = 12;
  std::size_t ny = 12;
  std::size_t nh = 10;
  std::vector<double> spectrum;  // planted s, length ≤ nh
  std::vector<double> u0;        // initial strengths, length nh
  bool random_mixing = false;    // O random orthogonal instead of I
  double dt = 1e-3;
  std::size_t steps = 1000;
  std::size_t record_every = 100;
  Integrator integrator = Integrator::euler;

  void validate() const {
    if (nx < 1 || ny < 1 || nh < 1) throw ParameterError("flow widths must be positive");
    if (nh > std::min(nx, ny)) throw ParameterError("flow: nh must not exceed min(nx, ny)");
    if (spectrum.empty() || spectrum.size() > nh) throw ParameterError("flow: spectrum length must be in [1, nh]");
    if (u0.size() != nh) throw ParameterError("flow: need one initial strength per hidden unit");
    for (double s : spectrum)
      if (!(s > 0.0)) throw ParameterError("flow: planted singular values must be positive");
    for (double u : u0)
      if (!(u > 0.0)) throw ParameterError("flow: initial strengths must be positive");
    if (!(dt > 0.0)) throw ParameterError("flow: dt must be positive");
    if (record_every < 1) throw ParameterError("flow: record_every must be >= 1");
  }
};

/// Concrete planted problem and its structured initialization
/// W2₀ = U·M·Oᵀ, W1₀ = O·M·Vᵀ with M = diag(√u0).
struct FlowProblem {
  Matrix syx;  // ny x nx
  Matrix u;    // ny x ny
  Matrix v;    // nx x nx
  Matrix o;    // nh x nh
  std::vector<double> s;   // planted spectrum padded with zeros to nh
  std::vector<double> u0;  // nh
  Matrix w1_0;             // nh x nx
  Matrix w2_0;             // ny x nh

  /// Modes with positive planted strength, τ = 1.
  std::vector<ModeSpec> modes() const {
    std::vector<ModeSpec> m;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] > 0.0) m.push_back({s[i], u0[i], 1.0});
    return m;
  }
};

inline FlowProblem make_flow_problem(const FlowConfig& cfg, Rng& rng) {
  cfg.validate();
  FlowProblem p;
  Rng ur = rng.split("flow-u");
  Rng vr = rng.split("flow-v");
  Rng orr = rng.split("flow-o");
  p.u = random_orthogonal(cfg.ny, ur);
  p.v = random_orthogonal(cfg.nx, vr);
  p.o = cfg.random_mixing ? random_orthogonal(cfg.nh, orr) : Matrix::identity(cfg.nh);
  p.s = cfg.spectrum;
  p.s.resize(cfg.nh, 0.0);
  p.u0 = cfg.u0;

  Matrix us(cfg.ny, cfg.nh);  // U[:, :nh]·diag(s)
  Matrix um(cfg.ny, cfg.nh);  // U[:, :nh]·M
  Matrix vm(cfg.nx, cfg.nh);  // V[:, :nh]·M
  for (std::size_t k = 0; k < cfg.nh; ++k) {
    const double root = std::sqrt(p.u0[k]);
    for (std::size_t i = 0; i < cfg.ny; ++i) {
      us(i, k) = p.u(i, k) * p.s[k];
      um(i, k) = p.u(i, k) * root;
    }
    for (std::size_t j = 0; j < cfg.nx; ++j) vm(j, k) = p.v(j, k) * root;
  }
  p.syx = matmul_nt(us, p.v.leading_cols(cfg.nh));
  p.w2_0 = matmul_nt(um, p.o);
  p.w1_0 = matmul_nt(p.o, vm);
  return p;
}

/// Projected strengths u_iᵀ·D·v_i for the first nh planted modes.
inline std::vector<double> mode_strengths(const FlowProblem& p, const Matrix& d) {
  std::vector<double> out(p.s.size());
  const Matrix dv = matmul(d, p.v);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d.rows(); ++i) acc += p.u(i, k) * dv(i, k);
    out[k] = acc;
  }
  return out;
}

struct FlowResult {
  SpectrumTrace trace;  // layer 0: singular values of D_t, iteration = step index
  std::vector<double> times;
  std::vector<std::vector<double>> strengths;  // per record, projected mode strengths
  std::vector<double> losses;                  // ½‖Σyx − W2W1‖² per record
  std::vector<double> balance;                 // ‖W1W1ᵀ − W2ᵀW2‖_F per record
  Matrix w1;
  Matrix w2;
};

namespace detail {

class FlowRecorder {
 public:
  FlowRecorder(const FlowProblem& p, FlowResult& r) : p_(p), r_(r), d0_(matmul(p.w2_0, p.w1_0)) {}

  void operator()(std::size_t step, double time, const Matrix& w1, const Matrix& w2) {
    const Matrix prod = matmul(w2, w1);
    const Matrix d = prod - d0_;
    r_.trace.append({step, 0, singular_values(d)});
    r_.times.push_back(time);
    r_.strengths.push_back(mode_strengths(p_, d));
    const double e = (p_.syx - prod).frobenius_norm();
    r_.losses.push_back(0.5 * e * e);
    r_.balance.push_back((matmul_nt(w1, w1) - matmul_tn(w2, w2)).frobenius_norm());
  }

 private:
  const FlowProblem& p_;
  FlowResult& r_;
  Matrix d0_;
};

inline void check_flow_state(const Matrix& w1, const Matrix& w2, double limit, double dt, std::size_t step) {
  if (!w1.all_finite() || !w2.all_finite() || w1.max_abs() > limit || w2.max_abs() > limit) {
    throw NumericError("gradient flow diverged at step " + std::to_string(step) + " with dt = " + std::to_string(dt));
  }
}

}  // namespace detail

/// Integrates dW1/dt = W2ᵀE, dW2/dt = E·W1ᵀ with E = Σyx − W2·W1 from the
/// structured initialization, recording every `record_every` steps and at the
/// end.
inline FlowResult simulate_gradient_flow(const FlowProblem& p, const FlowConfig& cfg) {
  cfg.validate();
  FlowResult res;
  detail::FlowRecorder record(p, res);
  Matrix w1 = p.w1_0;
  Matrix w2 = p.w2_0;
  const double limit = 1e6 * (1.0 + p.syx.max_abs() + w1.max_abs() + w2.max_abs());
  const auto field = [&](const Matrix& a1, const Matrix& a2, Matrix& d1, Matrix& d2) {
    const Matrix e = p.syx - matmul(a2, a1);
    d1 = matmul_tn(a2, e);
    d2 = matmul_nt(e, a1);
  };

  record(0, 0.0, w1, w2);
  Matrix k1a, k1b, k2a, k2b, k3a, k3b, k4a, k4b;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const double dt = cfg.dt;
    if (cfg.integrator == Integrator::euler) {
      field(w1, w2, k1a, k1b);
      w1 += k1a * dt;
      w2 += k1b * dt;
    } else {
      field(w1, w2, k1a, k1b);
      field(w1 + k1a * (0.5 * dt), w2 + k1b * (0.5 * dt), k2a, k2b);
      field(w1 + k2a * (0.5 * dt), w2 + k2b * (0.5 * dt), k3a, k3b);
      field(w1 + k3a * dt, w2 + k3b * dt, k4a, k4b);
      w1 += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0);
      w2 += (k1b + k2b * 2.0 + k3b * 2.0 + k4b) * (dt / 6.0);
    }
    detail::check_flow_state(w1, w2, limit, dt, step);
    if (step % cfg.record_every == 0 || step == cfg.steps) {
      record(step, static_cast<double>(step) * dt, w1, w2);
    }
  }
  res.w1 = std::move(w1);
  res.w2 = std::move(w2);
  return res;
}

/// Full-batch SGD on the planted dataset (x_μ = e_μ, y_μ = Σyx·e_μ) with the
/// summed squared loss, using the network and optimizer of this library.
/// Iteration n corresponds to time n·η.
inline FlowResult train_planted_sgd(const FlowProblem& p, double eta, std::size_t steps, std::size_t record_every) {
  if (!(eta > 0.0)) throw ParameterError("learning rate must be positive");
  if (record_every < 1) throw ParameterError("record_every must be >= 1");
  Model model;
  model.layers.emplace_back(DenseLayer(p.w1_0));
  model.layers.emplace_back(DenseLayer(p.w2_0));
  OptimizerConfig ocfg;
  ocfg.kind = OptimizerKind::sgd;
  ocfg.lr = eta;
  Optimizer opt(ocfg);
  const Matrix x = Matrix::identity(p.syx.cols());
  const Matrix& target = p.syx;

  FlowResult res;
  detail::FlowRecorder record(p, res);
  const auto w1 = [&]() -> const Matrix& { return std::get<DenseLayer>(model.layers[0]).w; };
  const auto w2 = [&]() -> const Matrix& { return std::get<DenseLayer>(model.layers[1]).w; };
  record(0, 0.0, w1(), w2());
  for (std::size_t step = 1; step <= steps; ++step) {
    auto fw = forward(model, x);
    const LossResult l = loss(LossKind::squared, fw.y, target);
    if (!std::isfinite(l.value)) {
      throw NumericError("planted SGD diverged at step " + std::to_string(step) + " with lr = " + std::to_string(eta));
    }
    opt.step(model, backward(model, fw.cache, l.grad));
    if (step % record_every == 0 || step == steps) record(step, static_cast<double>(step) * eta, w1(), w2());
  }
  res.w1 = w1();
  res.w2 = w2();
  return res;
}

/// Integration horizon long enough for every mode to pass its transition:
/// max over modes of (ln(s/u0) + 8) / (2s).
inline double transition_horizon(std::span<const ModeSpec> modes) {
  double t = 0.0;
  for (const auto& m : modes) t = std::max(t, m.tau * (std::log(std::max(m.s / m.u0, 1.0)) + 8.0) / (2.0 * m.s));
  return t;
}

struct TrajectoryReport {
  std::vector<double> max_rel_error;  // per mode, in the order given
  std::vector<std::size_t> points;    // compared points per mode

  double worst() const {
    double w = 0.0;
    for (double e : max_rel_error) w = std::max(w, e);
    return w;
  }
};

/// Compares recorded D_t spectra (layer `layer` of `trace`) with the closed
/// form. Snapshot iteration n maps to time n·time_per_iteration. At each
/// snapshot both the empirical values and the theoretical magnitudes
/// |u_f(t)| are sorted descending and paired in order. Points where
/// |u_f| < threshold·s are skipped.
inline TrajectoryReport verify_trajectory(const SpectrumTrace& trace, std::span<const ModeSpec> modes,
                                          double time_per_iteration, std::size_t layer = 0,
                                          double threshold = 0.05) {
  if (modes.empty()) throw ParameterError("verify_trajectory: no modes");
  if (!(time_per_iteration > 0.0)) throw ParameterError("verify_trajectory: time step must be positive");
  if (layer >= trace.layer_count() || trace.layer(layer).empty()) {
    throw ParameterError("verify_trajectory: trace has no snapshots for layer " + std::to_string(layer));
  }
  TrajectoryReport rep;
  rep.max_rel_error.assign(modes.size(), 0.0);
  rep.points.assign(modes.size(), 0);
  std::vector<double> theory(modes.size());
  std::vector<std::size_t> order(modes.size());
  for (const auto& snap : trace.layer(layer)) {
    if (snap.values.size() < modes.size()) {
      throw ParameterError("verify_trajectory: snapshot has " + std::to_string(snap.values.size()) +
                           " values for " + std::to_string(modes.size()) + " modes");
    }
    const double t = static_cast<double>(snap.iteration) * time_per_iteration;
    for (std::size_t j = 0; j < modes.size(); ++j) theory[j] = std::abs(closed_form_mode(t, modes[j]));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return theory[a] > theory[b]; });
    for (std::size_t k = 0; k < modes.size(); ++k) {
      const std::size_t j = order[k];
      if (theory[j] < threshold * modes[j].s) continue;
      const double err = std::abs(snap.values[k] - theory[j]) / theory[j];
      rep.max_rel_error[j] = std::max(rep.max_rel_error[j], err);
      ++rep.points[j];
    }
  }
  return rep;
}

/// First time at which series k of `strengths` reaches `level`, linearly
/// interpolated between records; negative when never reached.
inline double crossing_time(std::span<const double> times, const std::vector<std::vector<double>>& strengths,
                            std::size_t k, double level) {
  if (times.size() != strengths.size()) throw ParameterError("crossing_time: length mismatch");
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double v = strengths[i].at(k);
    if (v >= level) {
      if (i == 0) return times[0];
      const double prev = strengths[i - 1][k];
      const double frac = (level - prev) / (v - prev);
      return times[i - 1] + frac * (times[i] - times[i - 1]);
    }
  }
  return -1.0;
}

}  // namespace inrank
