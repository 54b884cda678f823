#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "pseudoseg/error.hpp"
#include "pseudoseg/volume.hpp"

namespace pseudoseg {

/// Axis-aligned block of a volume. The origin may be negative or run past
/// the far edge; such voxels are filled by padding.
struct PatchSpec {
    std::array<std::int64_t, 3> origin{0, 0, 0};
    Shape3 shape{32, 64, 64};

    friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

enum class PadMode { reflect, zero };
enum class BlendMode { uniform, hann };

/// Mirror an out-of-range index back into [0, n) without repeating the edge
/// sample (-1 -> 1, n -> n-2). Works for arbitrarily distant indices.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n)
{
    if (n == 1) return 0;
    const std::int64_t period = 2 * (n - 1);
    std::int64_t m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

template <typename T>
struct Patch {
    Shape3 shape;
    std::vector<T> values;
    std::vector<std::uint8_t> valid; ///< 1 where the voxel lies inside the source volume
};

/// Copies the block described by `spec` out of a (Z,Y,X) row-major grid.
template <typename T>
Patch<T> extract_block(std::span<const T> grid, const Shape3& grid_shape, const PatchSpec& spec, PadMode pad)
{
    require(spec.shape.positive(), "patch shape must be positive");
    require(static_cast<std::int64_t>(grid.size()) == grid_shape.voxels(), "grid size does not match its shape");
    const auto& o = spec.origin;
    const bool overlaps = o[0] < grid_shape.z && o[0] + spec.shape.z > 0 && o[1] < grid_shape.y &&
                          o[1] + spec.shape.y > 0 && o[2] < grid_shape.x && o[2] + spec.shape.x > 0;
    require(overlaps, "patch lies entirely outside the volume");

    Patch<T> out{spec.shape, std::vector<T>(static_cast<std::size_t>(spec.shape.voxels())),
                 std::vector<std::uint8_t>(static_cast<std::size_t>(spec.shape.voxels()))};
    std::size_t k = 0;
    for (std::int64_t z = 0; z < spec.shape.z; ++z) {
        const std::int64_t gz = o[0] + z;
        for (std::int64_t y = 0; y < spec.shape.y; ++y) {
            const std::int64_t gy = o[1] + y;
            for (std::int64_t x = 0; x < spec.shape.x; ++x, ++k) {
                const std::int64_t gx = o[2] + x;
                if (grid_shape.contains(gz, gy, gx)) {
                    out.values[k] = grid[static_cast<std::size_t>(grid_shape.index(gz, gy, gx))];
                    out.valid[k] = 1;
                } else if (pad == PadMode::reflect) {
                    const auto idx = grid_shape.index(reflect_index(gz, grid_shape.z), reflect_index(gy, grid_shape.y),
                                                      reflect_index(gx, grid_shape.x));
                    out.values[k] = grid[static_cast<std::size_t>(idx)];
                } else {
                    out.values[k] = T{};
                }
            }
        }
    }
    return out;
}

inline Patch<float> extract_patch(const Volume3D& v, const PatchSpec& spec, PadMode pad = PadMode::reflect)
{
    return extract_block(v.data(), v.shape(), spec, pad);
}

/// One patch-level prediction to be merged into a full volume.
struct PatchPrediction {
    PatchSpec spec;
    std::vector<float> probs; ///< spec.shape.voxels() values in [0,1]
};

/// Per-voxel weighted average of all covering patch predictions.
ProbVolume fuse_predictions(std::span<const PatchPrediction> patches, const Shape3& shape,
                            BlendMode blend = BlendMode::uniform, VoxelSize voxel_size = {});

/// Raised-cosine window of length n, strictly positive at both ends.
std::vector<double> hann_window(std::int64_t n);

/// Patch origins tiling [0, extent) with patches of length `size` whose
/// consecutive starts are at most size*(1-overlap) apart. The last tile is
/// flush with the far edge; if extent < size a single tile at 0 is returned.
std::vector<std::int64_t> tile_starts(std::int64_t extent, std::int64_t size, double overlap);

/// Full 3D tiling of `shape` by `patch` with the given fractional overlap.
std::vector<PatchSpec> tile_volume(const Shape3& shape, const Shape3& patch, double overlap);

} // namespace pseudoseg
