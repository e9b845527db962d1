#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <span>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "inrank/errors.hpp"
#include "inrank/matrix.hpp"
#include "inrank/rng.hpp"

namespace inrank {

/// Left singular vectors, descending singular values, right singular vectors.
/// `u` is p x k and `v` is q x k, so the input is approximated by u·diag(s)·vᵀ.
struct SvdResult {
  Matrix u;
  std::vector<double> s;
  Matrix v;
};

/// Thin QR factors of an m x n matrix with m >= n.
struct QrResult {
  Matrix q;  // m x n, orthonormal columns
  Matrix r;  // n x n, upper triangular
};

/// Householder QR. Rank-deficient inputs still yield an orthonormal `q`.
inline QrResult householder_qr(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (m < n) throw ShapeError("householder_qr needs rows >= cols, got " + a.shape());

  Matrix r = a;
  std::vector<std::vector<double>> reflectors(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> v(m - k);
    for (std::size_t i = k; i < m; ++i) v[i - k] = r(i, k);
    const double xnorm = norm2(v);
    if (xnorm == 0.0) continue;
    const double alpha = v[0] >= 0.0 ? -xnorm : xnorm;
    v[0] -= alpha;
    const double vnorm = norm2(v);
    if (vnorm == 0.0) continue;
    for (double& x : v) x /= vnorm;
    for (std::size_t j = k; j < n; ++j) {
      double proj = 0.0;
      for (std::size_t i = k; i < m; ++i) proj += v[i - k] * r(i, j);
      proj *= 2.0;
      for (std::size_t i = k; i < m; ++i) r(i, j) -= proj * v[i - k];
    }
    reflectors[k] = std::move(v);
  }

  Matrix q(m, n);
  for (std::size_t j = 0; j < n; ++j) q(j, j) = 1.0;
  for (std::size_t kk = n; kk-- > 0;) {
    const auto& v = reflectors[kk];
    if (v.empty()) continue;
    for (std::size_t j = 0; j < n; ++j) {
      double proj = 0.0;
      for (std::size_t i = kk; i < m; ++i) proj += v[i - kk] * q(i, j);
      proj *= 2.0;
      for (std::size_t i = kk; i < m; ++i) q(i, j) -= proj * v[i - kk];
    }
  }

  Matrix rr(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) rr(i, j) = r(i, j);
  return {std::move(q), std::move(rr)};
}

namespace detail {

// Fills `cols` (indices into u) with unit vectors orthogonal to every other
// column of u. Used for null-space directions of rank-deficient inputs.
inline void complete_orthonormal(Matrix& u, const std::vector<bool>& filled) {
  const std::size_t m = u.rows();
  std::vector<bool> have = filled;
  for (std::size_t j = 0; j < u.cols(); ++j) {
    if (have[j]) continue;
    // Project every standard basis vector off the filled columns and keep the
    // largest residual; some residual has norm >= sqrt(missing / m).
    std::vector<double> best;
    double best_norm = 0.0;
    for (std::size_t candidate = 0; candidate < m; ++candidate) {
      std::vector<double> w(m, 0.0);
      w[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < u.cols(); ++c) {
          if (!have[c]) continue;
          double p = 0.0;
          for (std::size_t i = 0; i < m; ++i) p += u(i, c) * w[i];
          for (std::size_t i = 0; i < m; ++i) w[i] -= p * u(i, c);
        }
      }
      const double nw = norm2(w);
      if (nw > best_norm) {
        best_norm = nw;
        best = std::move(w);
      }
    }
    if (best_norm < 1e-3) throw NumericError("failed to complete orthonormal basis");
    for (std::size_t i = 0; i < m; ++i) u(i, j) = best[i] / best_norm;
    have[j] = true;
  }
}

// Largest-magnitude entry of every column of u made nonnegative; v follows.
inline void canonicalize_signs(Matrix& u, Matrix& v) {
  for (std::size_t j = 0; j < u.cols(); ++j) {
    std::size_t best = 0;
    double mag = -1.0;
    for (std::size_t i = 0; i < u.rows(); ++i) {
      if (std::abs(u(i, j)) > mag) {
        mag = std::abs(u(i, j));
        best = i;
      }
    }
    if (u(best, j) < 0.0) {
      for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
      for (std::size_t i = 0; i < v.rows(); ++i) v(i, j) = -v(i, j);
    }
  }
}

// One-sided (Hestenes) Jacobi on a tall matrix. Returns the full thin
// decomposition: u m x n, s n, v n x n.
inline SvdResult jacobi_svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix at = a.transpose();  // row j holds column j of the working matrix
  Matrix vt = Matrix::identity(n);
  constexpr double tol = 1e-15;
  constexpr int max_sweeps = 100;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* ap = at.row(p).data();
        double* aq = at.row(q).data();
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
          alpha += ap[k] * ap[k];
          beta += aq[k] * aq[k];
          gamma += ap[k] * aq[k];
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < m; ++k) {
          const double x = ap[k];
          const double y = aq[k];
          ap[k] = c * x - s * y;
          aq[k] = s * x + c * y;
        }
        double* vp = vt.row(p).data();
        double* vq = vt.row(q).data();
        for (std::size_t k = 0; k < n; ++k) {
          const double x = vp[k];
          const double y = vq[k];
          vp[k] = c * x - s * y;
          vq[k] = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = norm2(at.row(j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double smax = sigma[order[0]];
  const double zero_cut = smax * 1e-15 * static_cast<double>(std::max(m, n));
  std::vector<bool> filled(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.s[j] = sigma[src];
    for (std::size_t k = 0; k < n; ++k) out.v(k, j) = vt(src, k);
    if (sigma[src] > zero_cut && sigma[src] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, j) = at(src, i) / sigma[src];
      filled[j] = true;
    }
  }
  if (std::find(filled.begin(), filled.end(), false) != filled.end()) {
    complete_orthonormal(out.u, filled);
  }
  return out;
}

inline SvdResult full_svd(const Matrix& m) {
  if (m.empty()) throw ShapeError("svd of an empty matrix");
  if (!m.all_finite()) throw NumericError("svd input contains non-finite entries");
  SvdResult r;
  if (m.rows() >= m.cols()) {
    r = jacobi_svd_tall(m);
  } else {
    SvdResult t = jacobi_svd_tall(m.transpose());
    r = SvdResult{std::move(t.v), std::move(t.s), std::move(t.u)};
  }
  canonicalize_signs(r.u, r.v);
  return r;
}

inline SvdResult truncate(SvdResult r, std::size_t k) {
  r.u = r.u.leading_cols(k);
  r.v = r.v.leading_cols(k);
  r.s.resize(k);
  return r;
}

}  // namespace detail

/// Top-k singular triplets of `m` (one-sided Jacobi on the full matrix, then
/// truncation). Singular values are descending; the largest-magnitude entry of
/// each left singular vector is nonnegative.
inline SvdResult svd(const Matrix& m, std::size_t k) {
  const std::size_t kmax = std::min(m.rows(), m.cols());
  if (k < 1 || k > kmax) {
    throw ParameterError("svd rank " + std::to_string(k) + " outside [1, " + std::to_string(kmax) +
                         "] for " + m.shape());
  }
  return detail::truncate(detail::full_svd(m), k);
}

inline SvdResult svd(const Matrix& m) { return svd(m, std::min(m.rows(), m.cols())); }

/// All min(rows, cols) singular values, descending.
inline std::vector<double> singular_values(const Matrix& m) { return detail::full_svd(m).s; }

/// Top-k SVD of u·v without materializing the product: orthonormalize u and vᵀ,
/// then decompose the small w x w core.
inline SvdResult thin_svd_of_product(const Matrix& u, const Matrix& v, std::size_t k) {
  if (u.cols() != v.rows()) {
    throw ShapeError("thin_svd_of_product inner dimension mismatch: " + u.shape() + " * " + v.shape());
  }
  const std::size_t w = u.cols();
  const std::size_t p = u.rows();
  const std::size_t q = v.cols();
  if (k < 1 || k > w || k > std::min(p, q)) {
    throw ParameterError("thin_svd_of_product rank " + std::to_string(k) + " invalid for " + u.shape() +
                         " * " + v.shape());
  }
  if (!u.all_finite() || !v.all_finite()) throw NumericError("thin_svd_of_product input is non-finite");
  if (p < w || q < w) return svd(matmul(u, v), k);

  QrResult left = householder_qr(u);
  QrResult right = householder_qr(v.transpose());
  const Matrix core = matmul_nt(left.r, right.r);  // R1 R2ᵀ
  SvdResult c = detail::full_svd(core);
  SvdResult out{matmul(left.q, c.u.leading_cols(k)), std::vector<double>(c.s.begin(), c.s.begin() + static_cast<long>(k)),
                matmul(right.q, c.v.leading_cols(k))};
  detail::canonicalize_signs(out.u, out.v);
  return out;
}

/// Haar-distributed n x n orthogonal matrix from the QR of a Gaussian matrix.
inline Matrix random_orthogonal(std::size_t n, Rng& rng) {
  if (n < 1) throw ParameterError("random_orthogonal needs n >= 1");
  Matrix g(n, n);
  for (double& x : g.data()) x = rng.normal();
  QrResult qr = householder_qr(g);
  for (std::size_t j = 0; j < n; ++j) {
    if (qr.r(j, j) < 0.0) {
      for (std::size_t i = 0; i < n; ++i) qr.q(i, j) = -qr.q(i, j);
    }
  }
  return qr.q;
}

/// Weight initialization scheme.
struct InitScheme {
  enum class Kind { kaiming_uniform, orthogonal, zeros, gaussian };

  Kind kind = Kind::kaiming_uniform;
  double sigma = 0.0;  // gaussian only

  static InitScheme kaiming_uniform() { return {Kind::kaiming_uniform, 0.0}; }
  static InitScheme orthogonal() { return {Kind::orthogonal, 0.0}; }
  static InitScheme zeros() { return {Kind::zeros, 0.0}; }
  static InitScheme gaussian(double sigma) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
      throw ParameterError("gaussian init needs a finite sigma >= 0");
    }
    return {Kind::gaussian, sigma};
  }

  /// Accepts "kaiming-uniform", "orthogonal", "zeros", "gaussian(0.01)".
  static InitScheme parse(std::string_view name) {
    if (name == "kaiming-uniform" || name == "kaiming") return kaiming_uniform();
    if (name == "orthogonal") return orthogonal();
    if (name == "zeros") return zeros();
    if (name.starts_with("gaussian(") && name.ends_with(")")) {
      const std::string arg(name.substr(9, name.size() - 10));
      std::size_t used = 0;
      double sigma = 0.0;
      try {
        sigma = std::stod(arg, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != arg.size() || arg.empty()) {
        throw ParameterError("bad gaussian sigma in init scheme '" + std::string(name) + "'");
      }
      return gaussian(sigma);
    }
    throw ParameterError("unknown init scheme '" + std::string(name) + "'");
  }

  std::string name() const {
    switch (kind) {
      case Kind::kaiming_uniform: return "kaiming-uniform";
      case Kind::orthogonal: return "orthogonal";
      case Kind::zeros: return "zeros";
      case Kind::gaussian: {
        char buf[64];
        std::snprintf(buf, sizeof buf, "gaussian(%.17g)", sigma);
        return buf;
      }
    }
    return "?";
  }
};

/// rows x cols weights drawn according to `scheme`.
///
/// kaiming-uniform: U(-sqrt(6/cols), sqrt(6/cols)). orthogonal: orthonormal
/// columns (tall) or rows (wide). gaussian: N(0, sigma²).
inline Matrix init_weights(std::size_t rows, std::size_t cols, const InitScheme& scheme, Rng& rng) {
  Matrix w(rows, cols);
  switch (scheme.kind) {
    case InitScheme::Kind::zeros:
      break;
    case InitScheme::Kind::kaiming_uniform: {
      const double bound = std::sqrt(6.0 / static_cast<double>(cols));
      for (double& x : w.data()) x = rng.uniform(-bound, bound);
      break;
    }
    case InitScheme::Kind::gaussian:
      for (double& x : w.data()) x = scheme.sigma * rng.normal();
      break;
    case InitScheme::Kind::orthogonal: {
      const bool tall = rows >= cols;
      Matrix g(tall ? rows : cols, tall ? cols : rows);
      for (double& x : g.data()) x = rng.normal();
      QrResult qr = householder_qr(g);
      for (std::size_t j = 0; j < qr.q.cols(); ++j) {
        if (qr.r(j, j) < 0.0) {
          for (std::size_t i = 0; i < qr.q.rows(); ++i) qr.q(i, j) = -qr.q(i, j);
        }
      }
      w = tall ? std::move(qr.q) : qr.q.transpose();
      break;
    }
  }
  return w;
}

/// Number of singular values above `rel_tol * s_max`.
inline std::size_t numerical_rank(std::span<const double> s, double rel_tol = 1e-6) {
  if (s.empty() || s[0] <= 0.0) return 0;
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [&](double x) { return x > rel_tol * s[0]; }));
}

}  // namespace inrank
