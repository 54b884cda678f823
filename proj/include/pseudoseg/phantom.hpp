#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseudoseg/volume.hpp"

namespace pseudoseg {

/// Synthetic soma-like volume: ellipsoidal cells on a dim background,
/// anisotropically blurred, with additive Gaussian noise.
struct PhantomConfig {
    Shape3 shape{50, 114, 114};
    VoxelSize voxel_size{2.0, 0.88, 0.88};
    int n_cells = 18;
    double radius_min_um = 5.0;
    double radius_max_um = 10.0;
    double intensity_fg = 1.0;
    double intensity_bg = 0.2;
    /// Relative spread of per-cell brightness: each cell gets fg * U(1-j, 1+j).
    double cell_intensity_jitter = 0.3;
    double noise_sigma = 0.15;
    std::array<double, 3> blur_sigma_um{2.0, 0.88, 0.88};
    std::uint64_t seed = 1;

    void validate() const;
    friend bool operator==(const PhantomConfig&, const PhantomConfig&) = default;
};

void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);

struct Phantom {
    Volume3D image;
    LabelVolume labels; ///< dense: background/foreground only
};

Phantom generate_phantom(const PhantomConfig& cfg);

/// Whole z-slices carrying ground truth; everything else is unlabeled.
struct SparsityPlan {
    std::vector<std::int64_t> labeled_slices; ///< sorted, unique

    double labeled_fraction(std::int64_t depth) const
    {
        return static_cast<double>(labeled_slices.size()) / static_cast<double>(depth);
    }
};

/// `count` slices spread evenly over [0, depth): slice i sits at the center
/// of the i-th of `count` equal bins.
SparsityPlan evenly_spaced_plan(std::int64_t depth, std::int64_t count);

LabelVolume sparsify_labels(const LabelVolume& dense, const SparsityPlan& plan);

} // namespace pseudoseg
