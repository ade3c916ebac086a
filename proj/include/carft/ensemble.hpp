#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "carft/eval.hpp"
#include "carft/model.hpp"
#include "carft/worldgen.hpp"

namespace carft {

// Elementwise weight interpolation (1-w) * zero_shot + w * fine_tuned over
// the trainable tensors (theta-hat layers and the head); phi and tau are
// copied from zero_shot and must be bit-identical between the endpoints.
// w == 0 reproduces the zero-shot model, w == 1 the fine-tuned one.
Checkpoint interpolate(const Checkpoint& zero_shot, const Checkpoint& fine_tuned, double w);

// Elementwise mean of the trainable tensors across candidates. The mean is
// computed as pivot + mean-of-deviations so a soup of identical checkpoints
// reproduces the checkpoint bit-for-bit.
Checkpoint uniform_soup(std::span<const Checkpoint> candidates);

struct GreedySoupResult {
    Checkpoint soup;
    std::vector<std::string> members;  // names of the admitted candidates
};

// ModelSoups greedy recipe: rank candidates by validation accuracy (ties by
// name ascending), start from the best, and admit each next candidate iff the
// uniform soup including it does not lower validation accuracy.
GreedySoupResult greedy_soup(const std::vector<std::pair<std::string, Checkpoint>>& candidates,
                             const Dataset& val);

struct CurvePoint {
    double mix = 0.0;
    double id_accuracy = 0.0;
    double ood_accuracy = 0.0;
};

// WiSE-FT interpolation curve over an evenly spaced mix grid including both
// endpoints. grid_points must be >= 2.
std::vector<CurvePoint> wise_curve(const Checkpoint& zero_shot, const Checkpoint& fine_tuned,
                                   const Dataset& id_test, const Dataset& ood_test,
                                   std::size_t grid_points);

// CSV with header "w,id_acc,ood_acc".
void write_curve(std::span<const CurvePoint> curve, const std::string& path);
std::vector<CurvePoint> read_curve(const std::string& path);

}  // namespace carft
