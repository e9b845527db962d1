#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "inrank/errors.hpp"
#include "inrank/linalg.hpp"
#include "inrank/matrix.hpp"
#include "inrank/net.hpp"
#include "inrank/rng.hpp"

namespace inrank {

/// Samples are columns: x is in x P, y is out x P. Classification sets carry
/// `labels` and leave `y` empty.
struct Dataset {
  Matrix x;
  Matrix y;
  std::vector<int> labels;
  std::size_t n_classes = 0;

  std::vector<double> planted;  // planted spectrum, if any
  Matrix planted_u;             // left planted modes (out x k)
  Matrix planted_v;             // right planted modes (in x k)
  Matrix teacher;               // teacher weight for teacher-student tasks

  std::size_t samples() const noexcept { return x.cols(); }
  bool is_classification() const noexcept { return !labels.empty(); }

  /// Regression targets, or one-hot targets for classification.
  Matrix target() const { return is_classification() ? one_hot(labels, n_classes) : y; }
};

/// Columns `idx` of `m`, in order.
inline Matrix select_columns(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(m.rows(), idx.size());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = m(i, idx[j]);
  return out;
}

/// Standard-basis inputs (P = n_x, so Σxx = I) and targets y = Σyx·x with
/// Σyx = U·diag(spectrum)·Vᵀ for random orthogonal U, V.
inline Dataset make_planted_task(std::size_t n_x, std::size_t n_y, std::span<const double> spectrum, Rng& rng) {
  if (spectrum.empty()) throw ParameterError("planted spectrum is empty");
  if (spectrum.size() > std::min(n_x, n_y)) {
    throw ParameterError("planted spectrum of length " + std::to_string(spectrum.size()) + " exceeds min(" +
                         std::to_string(n_x) + ", " + std::to_string(n_y) + ")");
  }
  for (double s : spectrum)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ParameterError("planted singular values must be nonnegative");
  const std::size_t k = spectrum.size();
  Rng ur = rng.split("planted-u");
  Rng vr = rng.split("planted-v");
  const Matrix u = random_orthogonal(n_y, ur).leading_cols(k);
  const Matrix v = random_orthogonal(n_x, vr).leading_cols(k);
  Matrix us = u;
  for (std::size_t i = 0; i < n_y; ++i)
    for (std::size_t j = 0; j < k; ++j) us(i, j) *= spectrum[j];

  Dataset d;
  d.x = Matrix::identity(n_x);
  d.y = matmul_nt(us, v);
  d.planted.assign(spectrum.begin(), spectrum.end());
  d.planted_u = u;
  d.planted_v = v;
  return d;
}

/// The spectrum s_i = a·i for i = 1..n.
inline std::vector<double> linear_spectrum(double a, std::size_t n) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = a * static_cast<double>(i + 1);
  return s;
}

/// Teacher construction. `gaussian_product` multiplies two r*-wide Gaussian
/// factors; `orthonormal` uses orthonormal factors so all r* teacher singular
/// values are equal.
enum class TeacherKind { gaussian_product, orthonormal };

inline TeacherKind parse_teacher(std::string_view name) {
  if (name == "gaussian-product" || name == "gaussian_product") return TeacherKind::gaussian_product;
  if (name == "orthonormal") return TeacherKind::orthonormal;
  throw ParameterError("unknown teacher kind '" + std::string(name) + "'");
}

/// Teacher W_T of exact rank r_star scaled to unit spectral norm; x ~ N(0, I);
/// y = W_T·x + noise·N(0, I).
inline Dataset make_teacher_student(std::size_t n_x, std::size_t n_y, std::size_t r_star, std::size_t samples,
                                    double noise, Rng& rng, TeacherKind kind = TeacherKind::gaussian_product) {
  if (r_star < 1 || r_star > std::min(n_x, n_y)) {
    throw ParameterError("teacher rank " + std::to_string(r_star) + " outside [1, " +
                         std::to_string(std::min(n_x, n_y)) + "]");
  }
  if (samples < 1) throw ParameterError("teacher-student task needs at least one sample");
  if (!(noise >= 0.0)) throw ParameterError("noise must be >= 0");

  Rng tr = rng.split("teacher");
  Matrix a, b;
  if (kind == TeacherKind::gaussian_product) {
    a = Matrix(n_y, r_star);
    b = Matrix(r_star, n_x);
    for (double& x : a.data()) x = tr.normal();
    for (double& x : b.data()) x = tr.normal();
  } else {
    a = random_orthogonal(n_y, tr).leading_cols(r_star);
    b = random_orthogonal(n_x, tr).leading_cols(r_star).transpose();
  }
  Matrix w = matmul(a, b);
  w *= 1.0 / svd(w, 1).s[0];

  Dataset d;
  d.x = Matrix(n_x, samples);
  Rng xr = rng.split("inputs");
  for (double& x : d.x.data()) x = xr.normal();
  d.y = matmul(w, d.x);
  if (noise > 0.0) {
    Rng nr = rng.split("noise");
    for (double& y : d.y.data()) y += noise * nr.normal();
  }
  d.teacher = std::move(w);
  return d;
}

/// Isotropic Gaussian blobs (standard deviation `sigma`) around centers that
/// are pairwise `separation` apart.
inline Dataset make_blobs(std::size_t n_classes, std::size_t dim, std::size_t per_class, double separation,
                          double sigma, Rng& rng) {
  if (n_classes < 2) throw ParameterError("blobs need at least two classes");
  if (n_classes > dim) throw ParameterError("blobs need dim >= n_classes for equidistant centers");
  if (per_class < 1) throw ParameterError("blobs need at least one sample per class");
  if (!(separation >= 0.0) || !(sigma >= 0.0)) throw ParameterError("separation and sigma must be >= 0");

  Rng cr = rng.split("centers");
  const Matrix q = random_orthogonal(dim, cr);
  const double scale = separation / std::sqrt(2.0);
  Rng pr = rng.split("points");

  Dataset d;
  d.n_classes = n_classes;
  d.x = Matrix(dim, n_classes * per_class);
  d.labels.resize(n_classes * per_class);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t p = 0; p < per_class; ++p) {
      const std::size_t j = c * per_class + p;
      d.labels[j] = static_cast<int>(c);
      for (std::size_t i = 0; i < dim; ++i) d.x(i, j) = scale * q(i, c) + sigma * pr.normal();
    }
  }
  return d;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (field.empty() || res.ec != std::errc() || res.ptr != last) {
    throw ParseError("line " + std::to_string(line) + ": invalid number '" + std::string(field) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(',', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// Reads `feat_0,..,feat_{d-1},label` CSV. With `n_classes` = 0 the class
/// count is max(label) + 1.
inline Dataset load_csv(const std::string& path, std::size_t n_classes = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_commas(line);
  if (header.size() < 2 || header.back() != "label") {
    throw ParseError(path + " line 1: header must be feat_0,...,feat_{d-1},label");
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t i = 0; i < dim; ++i) {
    if (header[i] != "feat_" + std::to_string(i)) {
      throw ParseError(path + " line 1: expected column 'feat_" + std::to_string(i) + "', got '" +
                       std::string(header[i]) + "'");
    }
  }

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_commas(line);
    if (fields.size() != dim + 1) {
      throw ParseError(path + " line " + std::to_string(lineno) + ": expected " + std::to_string(dim + 1) +
                       " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t i = 0; i < dim; ++i) values.push_back(detail::parse_double(fields[i], lineno));
    int label = 0;
    const auto lf = fields.back();
    const auto res = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (lf.empty() || res.ec != std::errc() || res.ptr != lf.data() + lf.size()) {
      throw ParseError(path + " line " + std::to_string(lineno) + ": invalid label '" + std::string(lf) + "'");
    }
    if (label < 0 || (n_classes > 0 && static_cast<std::size_t>(label) >= n_classes)) {
      throw SchemaError(path + " line " + std::to_string(lineno) + ": label " + std::to_string(label) +
                        " outside [0, " + std::to_string(n_classes) + ")");
    }
    labels.push_back(label);
  }
  if (labels.empty()) throw ParseError(path + ": no data rows");

  Dataset d;
  d.x = Matrix(dim, labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j)
    for (std::size_t i = 0; i < dim; ++i) d.x(i, j) = values[j * dim + i];
  d.labels = std::move(labels);
  std::size_t max_label = 0;
  for (int l : d.labels) max_label = std::max(max_label, static_cast<std::size_t>(l));
  d.n_classes = n_classes > 0 ? n_classes : max_label + 1;
  return d;
}

/// Writes a classification dataset in the `load_csv` schema.
inline void write_csv(const Dataset& d, const std::string& path) {
  if (!d.is_classification()) throw UsageError("write_csv: dataset has no labels");
  std::ostringstream os;
  for (std::size_t i = 0; i < d.x.rows(); ++i) os << "feat_" << i << ',';
  os << "label\n";
  for (std::size_t j = 0; j < d.x.cols(); ++j) {
    for (std::size_t i = 0; i < d.x.rows(); ++i) os << detail::format_double(d.x(i, j)) << ',';
    os << d.labels[j] << '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << os.str();
  if (!out.flush()) throw IoError("write failed for '" + path + "'");
}

}  // namespace inrank
