#include "carft/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "carft/numerics.hpp"

namespace carft {

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

double accuracy_with_weights(const ImageEncoderParams& image, const Matrix& weights,
                             const Vector* bias, double tau, const Dataset& ds) {
    if (ds.empty()) throw DataError("accuracy: empty dataset");
    std::size_t hits = 0;
    for (const Example& ex : ds) {
        const Vector h = encode_image(image, ex.x);
        Vector logits = cosine_scores(weights, h, tau);
        if (bias)
            for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += (*bias)[i];
        if (argmax(logits) == ex.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

double accuracy(const Checkpoint& model, const Dataset& ds) {
    if (!model.head) throw ConfigError("accuracy: checkpoint has no classifier head");
    return accuracy_with_weights(model.image, model.head->weight,
                                 model.head->bias ? &*model.head->bias : nullptr,
                                 model.logit_scale, ds);
}

double context_probe(const ImageEncoderParams& image, const Matrix& w_ctx, double tau,
                     const Dataset& ds) {
    if (ds.empty()) throw DataError("context_probe: empty dataset");
    std::size_t observed = 0;
    for (const Example& ex : ds) observed = std::max(observed, ex.context + 1);
    if (observed != w_ctx.cols())
        throw ConfigError("context_probe: " + std::to_string(w_ctx.cols()) +
                          " context templates do not align with " + std::to_string(observed) +
                          " dataset contexts");
    std::size_t hits = 0;
    for (const Example& ex : ds) {
        const Vector p = context_distribution(image, w_ctx, tau, ex.x);
        if (argmax(p) == ex.context) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

void EvalReport::add(const ReportRow& row) {
    const bool is_accuracy = row.metric.find("accuracy") != std::string::npos ||
                             row.metric.find("probe") != std::string::npos;
    if (is_accuracy && !(row.value >= 0.0 && row.value <= 1.0))
        throw NumericError("report: accuracy value outside [0,1]");
    for (const ReportRow& r : rows_)
        if (r.method == row.method && r.split == row.split && r.metric == row.metric &&
            r.seed == row.seed)
            throw DataError("report: duplicate row (" + row.method + "," + row.split + "," +
                            row.metric + "," + std::to_string(row.seed) + ")");
    rows_.push_back(row);
}

void EvalReport::add(const std::string& method, const std::string& split,
                     const std::string& metric, double value, std::uint64_t seed) {
    add(ReportRow{method, split, metric, value, seed});
}

std::optional<double> EvalReport::find(const std::string& method, const std::string& split,
                                       const std::string& metric, std::uint64_t seed) const {
    for (const ReportRow& r : rows_)
        if (r.method == method && r.split == split && r.metric == metric && r.seed == seed)
            return r.value;
    return std::nullopt;
}

void write_report(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("report: cannot write " + path);
    out << "method,split,metric,value,seed\n";
    char buf[40];
    for (const ReportRow& r : report.rows()) {
        std::snprintf(buf, sizeof buf, "%.17g", r.value);
        out << r.method << ',' << r.split << ',' << r.metric << ',' << buf << ',' << r.seed
            << '\n';
    }
}

EvalReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("report: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "method,split,metric,value,seed")
        throw DataError("report: " + path + ":1: bad header");
    EvalReport report;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() != 5)
            throw DataError("report: " + path + ":" + std::to_string(lineno) +
                            ": expected 5 columns");
        try {
            std::size_t used = 0;
            const double value = std::stod(fields[3], &used);
            if (used != fields[3].size()) throw std::invalid_argument("value");
            const std::uint64_t seed = std::stoull(fields[4], &used);
            if (used != fields[4].size()) throw std::invalid_argument("seed");
            report.add(fields[0], fields[1], fields[2], value, seed);
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw DataError("report: " + path + ":" + std::to_string(lineno) +
                            ": malformed value");
        }
    }
    return report;
}

}  // namespace carft
