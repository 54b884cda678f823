#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pseudoseg/volume.hpp"

namespace pseudoseg {

/// Foreground where p >= thr (ties go to foreground).
std::vector<std::uint8_t> binarize(const ProbVolume& p, double thr = 0.5);

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Voxel-wise counts of a binary mask against a dense label volume.
ConfusionCounts confusion(std::span<const std::uint8_t> pred, const LabelVolume& gt);

// A zero denominator yields 0; degenerate_flags() names those cases.
double dice(const ConfusionCounts& c);
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
std::vector<std::string> degenerate_flags(const ConfusionCounts& c);

enum class Scheme { seg2d, seg3d_sparse, seg3d_pseudo };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

struct Condition {
    Scheme scheme = Scheme::seg2d;
    double labeled_fraction = 0.0;
    double alpha = 0.0;
    std::uint64_t seed = 0;
    friend bool operator==(const Condition&, const Condition&) = default;
};

struct MetricsReport {
    Condition condition;
    ConfusionCounts counts;
    double dice = 0.0, precision = 0.0, recall = 0.0;
    /// Degenerate metric names plus "failed_<stage>" for stages that did not complete.
    std::vector<std::string> flags;

    bool failed() const;
    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport make_report(const Condition& condition, const ConfusionCounts& counts);
MetricsReport failed_report(const Condition& condition, const std::string& stage);

/// Binarize at thr and score against the dense ground truth.
MetricsReport evaluate(const Condition& condition, const ProbVolume& pred, const LabelVolume& gt, double thr = 0.5);

} // namespace pseudoseg
