#include "carft/ensemble.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace carft {

namespace {

void require_head(const Checkpoint& ckpt, const char* role) {
    if (!ckpt.head)
        throw DataError(std::string("ensemble: ") + role + " checkpoint has no classifier head");
}

// Trainable tensors only; phi and tau are shared and must match bit-wise.
void check_compatible(const Checkpoint& a, const Checkpoint& b, const char* op) {
    const std::string prefix = std::string(op) + ": ";
    if (!a.image.w1.same_shape(b.image.w1) || !a.image.w2.same_shape(b.image.w2) ||
        a.image.b1.size() != b.image.b1.size() || a.image.b2.size() != b.image.b2.size())
        throw DataError(prefix + "image encoder shapes differ");
    require_head(a, op);
    require_head(b, op);
    if (!a.head->weight.same_shape(b.head->weight))
        throw DataError(prefix + "classifier head shapes differ");
    if (a.head->bias.has_value() != b.head->bias.has_value())
        throw DataError(prefix + "one checkpoint has a head bias and the other does not");
    if (a.head->bias && a.head->bias->size() != b.head->bias->size())
        throw DataError(prefix + "head bias lengths differ");
    if (!(a.text.embed == b.text.embed) || !(a.text.proj == b.text.proj))
        throw DataError(prefix + "frozen text encoders differ between candidates");
    if (a.logit_scale != b.logit_scale)
        throw DataError(prefix + "logit scales differ between candidates");
}

template <typename Fn>
void for_each_trainable(Checkpoint& out, Fn&& fn) {
    fn(out.image.w1.values());
    fn(out.image.b1);
    fn(out.image.w2.values());
    fn(out.image.b2);
    fn(out.head->weight.values());
    if (out.head->bias) fn(*out.head->bias);
}

const std::vector<double>* trainable_by_index(const Checkpoint& ckpt, std::size_t idx) {
    switch (idx) {
        case 0: return &ckpt.image.w1.values();
        case 1: return &ckpt.image.b1;
        case 2: return &ckpt.image.w2.values();
        case 3: return &ckpt.image.b2;
        case 4: return &ckpt.head->weight.values();
        case 5: return ckpt.head->bias ? &*ckpt.head->bias : nullptr;
    }
    return nullptr;
}

}  // namespace

Checkpoint interpolate(const Checkpoint& zero_shot, const Checkpoint& fine_tuned, double w) {
    if (!(w >= 0.0 && w <= 1.0))
        throw ConfigError("interpolate: mix weight must lie in [0, 1]");
    check_compatible(zero_shot, fine_tuned, "interpolate");

    Checkpoint out = zero_shot;  // phi, tau and meta from the zero-shot endpoint
    const double u = 1.0 - w;
    std::size_t idx = 0;
    for_each_trainable(out, [&](std::vector<double>& values) {
        const std::vector<double>* a = trainable_by_index(zero_shot, idx);
        const std::vector<double>* b = trainable_by_index(fine_tuned, idx);
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = u * (*a)[i] + w * (*b)[i];
        ++idx;
    });
    out.meta["method"] = "wise";
    return out;
}

Checkpoint uniform_soup(std::span<const Checkpoint> candidates) {
    if (candidates.empty()) throw DataError("uniform_soup: empty candidate list");
    for (std::size_t i = 1; i < candidates.size(); ++i)
        check_compatible(candidates[0], candidates[i], "uniform_soup");

    Checkpoint out = candidates[0];
    const double n = static_cast<double>(candidates.size());
    std::size_t idx = 0;
    // mean = pivot + (sum of deviations from pivot) / n; exact for identical
    // candidates since every deviation is exactly zero.
    for_each_trainable(out, [&](std::vector<double>& values) {
        const std::vector<double>* pivot = trainable_by_index(candidates[0], idx);
        for (std::size_t i = 0; i < values.size(); ++i) {
            double deviation = 0.0;
            for (std::size_t c = 1; c < candidates.size(); ++c)
                deviation += (*trainable_by_index(candidates[c], idx))[i] - (*pivot)[i];
            values[i] = (*pivot)[i] + deviation / n;
        }
        ++idx;
    });
    out.meta["method"] = "uniform-soup";
    return out;
}

GreedySoupResult greedy_soup(const std::vector<std::pair<std::string, Checkpoint>>& candidates,
                             const Dataset& val) {
    if (candidates.empty()) throw DataError("greedy_soup: empty candidate list");
    if (val.empty()) throw DataError("greedy_soup: empty validation set");
    for (std::size_t i = 1; i < candidates.size(); ++i)
        check_compatible(candidates[0].second, candidates[i].second, "greedy_soup");

    struct Ranked {
        const std::string* name;
        const Checkpoint* ckpt;
        double val_accuracy;
    };
    std::vector<Ranked> ranked;
    ranked.reserve(candidates.size());
    for (const auto& [name, ckpt] : candidates)
        ranked.push_back({&name, &ckpt, accuracy(ckpt, val)});
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.val_accuracy != b.val_accuracy) return a.val_accuracy > b.val_accuracy;
        return *a.name < *b.name;
    });

    std::vector<Checkpoint> selected{*ranked[0].ckpt};
    std::vector<std::string> members{*ranked[0].name};
    Checkpoint soup = selected[0];
    double best = ranked[0].val_accuracy;
    for (std::size_t i = 1; i < ranked.size(); ++i) {
        std::vector<Checkpoint> trial = selected;
        trial.push_back(*ranked[i].ckpt);
        Checkpoint trial_soup = uniform_soup(trial);
        const double trial_acc = accuracy(trial_soup, val);
        if (trial_acc >= best) {  // does not lower -> admit (equal accepted)
            selected = std::move(trial);
            members.push_back(*ranked[i].name);
            soup = std::move(trial_soup);
            best = trial_acc;
        }
    }
    soup.meta["method"] = "greedy-soup";
    return {std::move(soup), std::move(members)};
}

std::vector<CurvePoint> wise_curve(const Checkpoint& zero_shot, const Checkpoint& fine_tuned,
                                   const Dataset& id_test, const Dataset& ood_test,
                                   std::size_t grid_points) {
    if (grid_points < 2) throw ConfigError("wise_curve: grid must have at least 2 points");
    std::vector<CurvePoint> curve;
    curve.reserve(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double w = static_cast<double>(i) / static_cast<double>(grid_points - 1);
        const Checkpoint mixed = interpolate(zero_shot, fine_tuned, w);
        curve.push_back({w, accuracy(mixed, id_test), accuracy(mixed, ood_test)});
    }
    return curve;
}

void write_curve(std::span<const CurvePoint> curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("curve: cannot write " + path);
    out << "w,id_acc,ood_acc\n";
    char a[40], b[40], c[40];
    for (const CurvePoint& p : curve) {
        std::snprintf(a, sizeof a, "%.17g", p.mix);
        std::snprintf(b, sizeof b, "%.17g", p.id_accuracy);
        std::snprintf(c, sizeof c, "%.17g", p.ood_accuracy);
        out << a << ',' << b << ',' << c << '\n';
    }
}

std::vector<CurvePoint> read_curve(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("curve: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "w,id_acc,ood_acc")
        throw DataError("curve: " + path + ":1: bad header");
    std::vector<CurvePoint> curve;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        CurvePoint p;
        char extra;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf%c", &p.mix, &p.id_accuracy, &p.ood_accuracy,
                        &extra) != 3)
            throw DataError("curve: " + path + ":" + std::to_string(lineno) + ": malformed row");
        curve.push_back(p);
    }
    return curve;
}

}  // namespace carft
