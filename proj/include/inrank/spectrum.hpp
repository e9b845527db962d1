#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "inrank/errors.hpp"
#include "inrank/linalg.hpp"
#include "inrank/net.hpp"

namespace inrank {

/// D_t for one layer: w − w_initial for dense layers, u·v for factorized ones.
inline Matrix cumulative_update(const Layer& layer) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) return d->w - d->initial();
  const auto& f = std::get<FactorizedLayer>(layer);
  return matmul(f.u, f.v);
}

enum class VariationMeasure { sum_of_squares, sample_variance };

inline VariationMeasure parse_measure(std::string_view name) {
  if (name == "sum-of-squares" || name == "sum_of_squares") return VariationMeasure::sum_of_squares;
  if (name == "sample-variance" || name == "sample_variance") return VariationMeasure::sample_variance;
  throw ParameterError("unknown variation measure '" + std::string(name) + "'");
}

inline const char* to_string(VariationMeasure m) {
  return m == VariationMeasure::sum_of_squares ? "sum-of-squares" : "sample-variance";
}

namespace detail {

inline double variation(std::span<const double> s, std::size_t begin, std::size_t end, VariationMeasure m) {
  const auto at = [&](std::size_t i) { return i < s.size() ? s[i] : 0.0; };
  const std::size_t n = end - begin;
  if (m == VariationMeasure::sum_of_squares) {
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += at(i) * at(i);
    return acc;
  }
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (std::size_t i = begin; i < end; ++i) mean += at(i);
  mean /= static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t i = begin; i < end; ++i) acc += (at(i) - mean) * (at(i) - mean);
  return acc / static_cast<double>(n - 1);
}

}  // namespace detail

/// g = 1 − V(s[r .. r+b)) / V(s[0 .. r+b)), zero-padded past the end of `s`.
/// Returns 1 when the denominator vanishes.
inline double explained_ratio(std::span<const double> s, std::size_t r, std::size_t b,
                              VariationMeasure measure = VariationMeasure::sum_of_squares) {
  if (b < 1) throw ParameterError("explained_ratio: buffer must be >= 1");
  for (double x : s) {
    if (!(x >= 0.0)) throw ParameterError("explained_ratio: singular values must be nonnegative and finite");
  }
  const double total = detail::variation(s, 0, r + b, measure);
  if (total == 0.0) return 1.0;
  const double tail = detail::variation(s, r, r + b, measure);
  const double g = 1.0 - tail / total;
  return g < 0.0 ? 0.0 : (g > 1.0 ? 1.0 : g);
}

struct SpectrumSnapshot {
  std::size_t iteration = 0;
  std::size_t layer = 0;
  std::vector<double> values;  // descending
};

/// Per-layer history of cumulative-update spectra.
class SpectrumTrace {
 public:
  void append(SpectrumSnapshot snap) {
    if (snap.layer >= layers_.size()) layers_.resize(snap.layer + 1);
    auto& seq = layers_[snap.layer];
    if (!seq.empty() && snap.iteration <= seq.back().iteration) {
      throw UsageError("spectrum trace: iteration " + std::to_string(snap.iteration) + " not after " +
                       std::to_string(seq.back().iteration) + " for layer " + std::to_string(snap.layer));
    }
    for (std::size_t i = 0; i < snap.values.size(); ++i) {
      if (!(snap.values[i] >= 0.0) || (i > 0 && snap.values[i] > snap.values[i - 1])) {
        throw NumericError("spectrum trace: values must be nonnegative and nonincreasing",
                           static_cast<long>(snap.layer));
      }
    }
    seq.push_back(std::move(snap));
  }

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const std::vector<SpectrumSnapshot>& layer(std::size_t l) const { return layers_.at(l); }
  bool empty() const noexcept { return layers_.empty(); }

 private:
  std::vector<std::vector<SpectrumSnapshot>> layers_;
};

/// Singular values of D_t for one layer. Factorized layers go through the
/// thin SVD of u·v and return `width` values.
inline std::vector<double> update_spectrum(const Layer& layer) {
  if (const auto* f = std::get_if<FactorizedLayer>(&layer)) {
    if (!f->u.all_finite() || !f->v.all_finite()) throw NumericError("non-finite factor weights");
    const std::size_t k = std::min(f->width(), f->max_rank());
    return thin_svd_of_product(f->u, f->v, k).s;
  }
  return singular_values(cumulative_update(layer));
}

/// Appends one snapshot per layer of `model` at `iteration`.
inline void snapshot_spectrum(const Model& model, std::size_t iteration, SpectrumTrace& trace) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    std::vector<double> s;
    try {
      s = update_spectrum(model.layers[l]);
    } catch (const NumericError&) {
      throw NumericError("non-finite weights in layer " + std::to_string(l) + " at iteration " +
                             std::to_string(iteration),
                         static_cast<long>(l));
    }
    trace.append({iteration, l, std::move(s)});
  }
}

}  // namespace inrank
