#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "carft/model.hpp"
#include "carft/worldgen.hpp"

namespace carft {

// Index of the largest logit; ties broken by lowest index.
std::size_t argmax(std::span<const double> values);

// Top-1 accuracy of tau * W^T h(x) (+ optional bias) against example labels.
double accuracy_with_weights(const ImageEncoderParams& image, const Matrix& weights,
                             const Vector* bias, double tau, const Dataset& ds);

// Accuracy of a checkpoint's classifier head (W_cls for zero-shot models).
double accuracy(const Checkpoint& model, const Dataset& ds);

// Zero-shot context recognition: argmax of the context distribution against
// each example's context tag. w_ctx columns must align index-wise with the
// dataset's context labels.
double context_probe(const ImageEncoderParams& image, const Matrix& w_ctx, double tau,
                     const Dataset& ds);

struct ReportRow {
    std::string method;
    std::string split;
    std::string metric;
    double value = 0.0;
    std::uint64_t seed = 0;
};

// Accumulates result rows; (method, split, metric, seed) must be unique.
class EvalReport {
public:
    void add(const ReportRow& row);
    void add(const std::string& method, const std::string& split, const std::string& metric,
             double value, std::uint64_t seed);

    const std::vector<ReportRow>& rows() const { return rows_; }

    // First matching value, if present.
    std::optional<double> find(const std::string& method, const std::string& split,
                               const std::string& metric, std::uint64_t seed) const;

private:
    std::vector<ReportRow> rows_;
};

// CSV with header "method,split,metric,value,seed", 17 significant digits.
void write_report(const EvalReport& report, const std::string& path);
EvalReport read_report(const std::string& path);

}  // namespace carft
