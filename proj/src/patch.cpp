#include "pseudoseg/patch.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pseudoseg {

std::vector<double> hann_window(std::int64_t n)
{
    std::vector<double> w(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i + 1) /
                                                               static_cast<double>(n + 1));
    return w;
}

ProbVolume fuse_predictions(std::span<const PatchPrediction> patches, const Shape3& shape, BlendMode blend,
                            VoxelSize voxel_size)
{
    require(shape.positive(), "fuse_predictions: shape must be positive");
    const auto n = static_cast<std::size_t>(shape.voxels());
    std::vector<double> acc(n, 0.0);
    std::vector<double> wsum(n, 0.0);

    for (const auto& p : patches) {
        const auto& ps = p.spec.shape;
        require(ps.positive() && static_cast<std::int64_t>(p.probs.size()) == ps.voxels(),
                "fuse_predictions: patch payload does not match its shape");
        std::vector<double> wz(static_cast<std::size_t>(ps.z), 1.0), wy(static_cast<std::size_t>(ps.y), 1.0),
            wx(static_cast<std::size_t>(ps.x), 1.0);
        if (blend == BlendMode::hann) {
            wz = hann_window(ps.z);
            wy = hann_window(ps.y);
            wx = hann_window(ps.x);
        }
        const auto& o = p.spec.origin;
        std::size_t k = 0;
        for (std::int64_t z = 0; z < ps.z; ++z)
            for (std::int64_t y = 0; y < ps.y; ++y)
                for (std::int64_t x = 0; x < ps.x; ++x, ++k) {
                    const std::int64_t gz = o[0] + z, gy = o[1] + y, gx = o[2] + x;
                    if (!shape.contains(gz, gy, gx)) continue;
                    const double w = wz[static_cast<std::size_t>(z)] * wy[static_cast<std::size_t>(y)] *
                                     wx[static_cast<std::size_t>(x)];
                    const auto idx = static_cast<std::size_t>(shape.index(gz, gy, gx));
                    acc[idx] += w * static_cast<double>(p.probs[k]);
                    wsum[idx] += w;
                }
    }

    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (wsum[i] <= 0.0) throw InvalidArgument("fuse_predictions: voxel " + std::to_string(i) + " is not covered by any patch");
        out[i] = std::clamp(static_cast<float>(acc[i] / wsum[i]), 0.0f, 1.0f);
    }
    return ProbVolume(shape, voxel_size, std::move(out));
}

std::vector<std::int64_t> tile_starts(std::int64_t extent, std::int64_t size, double overlap)
{
    require(extent > 0 && size > 0, "tile_starts: extent and size must be positive");
    require(overlap >= 0.0 && overlap < 1.0, "tile overlap must be in [0,1)");
    if (extent <= size) return {0};
    const auto stride = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(static_cast<double>(size) * (1.0 - overlap))));
    std::vector<std::int64_t> starts;
    for (std::int64_t s = 0; s + size < extent; s += stride) starts.push_back(s);
    starts.push_back(extent - size);
    return starts;
}

std::vector<PatchSpec> tile_volume(const Shape3& shape, const Shape3& patch, double overlap)
{
    std::vector<PatchSpec> tiles;
    for (auto z : tile_starts(shape.z, patch.z, overlap))
        for (auto y : tile_starts(shape.y, patch.y, overlap))
            for (auto x : tile_starts(shape.x, patch.x, overlap))
                tiles.push_back(PatchSpec{{z, y, x}, patch});
    return tiles;
}

} // namespace pseudoseg
