#pragma once

#include <functional>
#include <span>

#include "carft/matrix.hpp"

namespace carft {

// Column norms below this are treated as degenerate.
inline constexpr double kNormEpsilon = 1e-12;

// Probabilities are clamped to this floor before taking logs in KL.
inline constexpr double kKlEpsilon = 1e-12;

// Numerically stable softmax (max-shift). Invariant under adding a constant.
Vector softmax(std::span<const double> logits);

// Scale every column of m to unit L2 norm. Throws NumericError naming the
// column index if a column's norm is below kNormEpsilon.
Matrix l2_normalize_columns(const Matrix& m);

// In-place variant for a single contiguous vector.
void l2_normalize(Vector& v);

// KL(p || q) = sum_i p_i * ln(p_i / q_i), with 0*ln(0) = 0 and q clamped to
// kKlEpsilon before the log. Exactly 0 when p and q are bit-identical.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// -ln softmax(logits)[label], computed via log-sum-exp.
double cross_entropy(std::span<const double> logits, std::size_t label);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// f must be evaluable at params +/- h per coordinate; h in [1e-7, 1e-3].
double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> params, std::span<const double> analytic, double h);

}  // namespace carft
