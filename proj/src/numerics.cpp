#include "carft/numerics.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "carft/kernels.hpp"

namespace carft {

Vector softmax(std::span<const double> logits) {
    if (logits.empty()) throw NumericError("softmax: empty input");
    for (double v : logits)
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    const double shift = kernels::max_value(logits.data(), logits.size());
    Vector out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::exp(logits[i] - shift);
    const double total = kernels::sum(out.data(), out.size());
    for (double& v : out) v /= total;
    return out;
}

Matrix l2_normalize_columns(const Matrix& m) {
    Matrix out = m;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        double sq = 0.0;
        for (std::size_t r = 0; r < m.rows(); ++r) sq += m(r, c) * m(r, c);
        const double norm = std::sqrt(sq);
        if (!(norm > kNormEpsilon))
            throw NumericError("l2_normalize_columns: degenerate column " + std::to_string(c));
        for (std::size_t r = 0; r < m.rows(); ++r) out(r, c) = m(r, c) / norm;
    }
    return out;
}

void l2_normalize(Vector& v) {
    const double norm = std::sqrt(kernels::dot(v.data(), v.data(), v.size()));
    if (!(norm > kNormEpsilon)) throw NumericError("l2_normalize: degenerate vector");
    for (double& x : v) x /= norm;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw NumericError("kl_divergence: length mismatch");
    const double sp = kernels::sum(p.data(), p.size());
    const double sq = kernels::sum(q.data(), q.size());
    if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
        throw NumericError("kl_divergence: inputs must sum to 1");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == q[i]) continue;  // ln(p/q) = 0; keeps KL(p||p) exactly zero
        if (p[i] <= 0.0) continue;   // 0 * ln 0 = 0
        const double qi = q[i] < kKlEpsilon ? kKlEpsilon : q[i];
        acc += p[i] * (std::log(p[i]) - std::log(qi));
    }
    return acc < 0.0 && acc > -1e-15 ? 0.0 : acc;
}

double cross_entropy(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size()) throw NumericError("cross_entropy: label out of range");
    const double shift = kernels::max_value(logits.data(), logits.size());
    double total = 0.0;
    for (double v : logits) total += std::exp(v - shift);
    return std::log(total) - (logits[label] - shift);
}

double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> params, std::span<const double> analytic, double h) {
    if (params.size() != analytic.size()) throw NumericError("grad_check: size mismatch");
    if (h < 1e-7 || h > 1e-3) throw NumericError("grad_check: h outside [1e-7, 1e-3]");
    std::vector<double> probe(params.begin(), params.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double fp = f(probe);
        probe[i] = saved - h;
        const double fm = f(probe);
        probe[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("grad_check: non-finite loss at probe point");
        const double numeric = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        if (err > worst) worst = err;
    }
    return worst;
}

}  // namespace carft
