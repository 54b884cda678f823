#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pseudoseg/volume.hpp"

namespace pseudoseg {

/// Loss-weight given to pseudo-labelled voxels; ground truth always weighs 1.
/// Zero reduces the loss to its supervised term (sparse-only training).
class Alpha {
public:
    explicit Alpha(double v = 0.5);
    double value() const { return value_; }

private:
    double value_;
};

enum class PseudoMode { hard, soft };

enum class Source : std::uint8_t { ground_truth = 0, pseudo = 1 };

/// Pseudo-targets defined exactly on the unlabeled voxels of a label volume.
struct PseudoLabels {
    Shape3 shape;
    std::vector<float> targets;        ///< value where defined, 0 elsewhere
    std::vector<std::uint8_t> defined; ///< 1 on the unlabeled partition

    std::int64_t count() const;
};

/// Dense training targets: ground truth where annotated, pseudo-labels elsewhere.
struct FusedTargets {
    Shape3 shape;
    VoxelSize voxel_size;
    std::vector<float> targets; ///< in [0,1]
    std::vector<float> weights; ///< 1 on ground truth, alpha on pseudo
    std::vector<Source> source;

    void validate() const;
};

PseudoLabels make_pseudo_labels(const ProbVolume& probs, const LabelVolume& labels, PseudoMode mode = PseudoMode::hard,
                                double threshold = 0.5);

FusedTargets fuse(const LabelVolume& labels, const PseudoLabels& pseudo, Alpha alpha);

/// Predictions are clamped to [eps, 1-eps] inside the loss.
inline constexpr double kBceEpsilon = 1e-7;

/// Weighted-mean binary cross-entropy:
///   sum_v w_v * bce(p_v, t_v) / sum_v w_v
/// Returns 0 when all weights are 0. Throws NumericalError on NaN input.
double weighted_bce(std::span<const float> pred, std::span<const float> targets, std::span<const float> weights);
double weighted_bce(std::span<const double> pred, std::span<const float> targets, std::span<const float> weights);
double weighted_bce(const ProbVolume& pred, const FusedTargets& fused);

/// d loss / d p_v = w_v (p_v - t_v) / (p_v (1 - p_v)) / sum w, zero where
/// the clamp is active or w_v = 0.
void weighted_bce_grad(std::span<const double> pred, std::span<const float> targets, std::span<const float> weights,
                       std::span<double> grad);
std::vector<double> weighted_bce_grad(const ProbVolume& pred, const FusedTargets& fused);

/// Gradient w.r.t. the logits z_v of p_v = sigmoid(z_v): w_v (p_v - t_v) / sum w.
/// This is the form used in training; voxels with w_v = 0 get exactly 0.
template <typename T>
void weighted_bce_logit_grad(std::span<const T> pred, std::span<const float> targets, std::span<const float> weights,
                             std::span<T> grad);

/// Deterministic pairwise (tree) sum over fixed-size blocks.
double pairwise_sum(std::span<const double> values);

/// Three VOLG files: <stem>_targets.volg, <stem>_weights.volg, <stem>_source.volg.
void save_fused(const FusedTargets& fused, const std::filesystem::path& stem, const Provenance& provenance = {});
FusedTargets load_fused(const std::filesystem::path& stem, Provenance* provenance = nullptr);

} // namespace pseudoseg
