#include "pseudoseg/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "pseudoseg/error.hpp"
#include "pseudoseg/rng.hpp"

namespace pseudoseg {

using nlohmann::json;

void PhantomConfig::validate() const
{
    require(shape.positive(), "phantom shape must be positive");
    require(voxel_size.positive(), "phantom voxel size must be positive");
    require(n_cells >= 0, "n_cells must be >= 0");
    require(radius_min_um > 0 && radius_min_um <= radius_max_um, "radius range must satisfy 0 < min <= max");
    require(noise_sigma >= 0, "noise_sigma must be >= 0");
    require(blur_sigma_um[0] >= 0 && blur_sigma_um[1] >= 0 && blur_sigma_um[2] >= 0, "blur sigmas must be >= 0");
    require(intensity_bg >= 0 && intensity_fg > intensity_bg, "intensities must satisfy fg > bg >= 0");
    require(cell_intensity_jitter >= 0 && cell_intensity_jitter < 1, "cell_intensity_jitter must be in [0,1)");
    const double largest_voxel = std::max({voxel_size.z, voxel_size.y, voxel_size.x});
    if (radius_min_um < largest_voxel)
        throw InvalidArgument("cell radius " + std::to_string(radius_min_um) +
                              " um is smaller than one voxel (" + std::to_string(largest_voxel) + " um)");
}

void to_json(json& j, const PhantomConfig& c)
{
    j = json{
        {"shape", {c.shape.z, c.shape.y, c.shape.x}},
        {"voxel_size", {c.voxel_size.z, c.voxel_size.y, c.voxel_size.x}},
        {"n_cells", c.n_cells},
        {"radius_range_um", {c.radius_min_um, c.radius_max_um}},
        {"intensity_fg", c.intensity_fg},
        {"intensity_bg", c.intensity_bg},
        {"cell_intensity_jitter", c.cell_intensity_jitter},
        {"noise_sigma", c.noise_sigma},
        {"blur_sigma_um", c.blur_sigma_um},
        {"seed", c.seed},
    };
}

void from_json(const json& j, PhantomConfig& c)
{
    const auto s = j.at("shape");
    c.shape = {s.at(0).get<std::int64_t>(), s.at(1).get<std::int64_t>(), s.at(2).get<std::int64_t>()};
    const auto v = j.at("voxel_size");
    c.voxel_size = {v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()};
    c.n_cells = j.at("n_cells").get<int>();
    const auto r = j.at("radius_range_um");
    c.radius_min_um = r.at(0).get<double>();
    c.radius_max_um = r.at(1).get<double>();
    c.intensity_fg = j.at("intensity_fg").get<double>();
    c.intensity_bg = j.at("intensity_bg").get<double>();
    c.cell_intensity_jitter = j.at("cell_intensity_jitter").get<double>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.blur_sigma_um = j.at("blur_sigma_um").get<std::array<double, 3>>();
    c.seed = j.at("seed").get<std::uint64_t>();
}

namespace {

std::vector<double> gaussian_kernel(double sigma)
{
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

/// In-place separable Gaussian blur along one axis with mirrored borders.
void blur_axis(std::vector<double>& data, const Shape3& s, int axis, double sigma_vox)
{
    if (sigma_vox <= 0) return;
    const auto k = gaussian_kernel(sigma_vox);
    const auto radius = static_cast<std::int64_t>(k.size() / 2);
    const std::int64_t len = axis == 0 ? s.z : axis == 1 ? s.y : s.x;
    const std::int64_t stride = axis == 0 ? s.y * s.x : axis == 1 ? s.x : 1;
    std::vector<double> line(static_cast<std::size_t>(len));
    for (std::int64_t z = 0; z < (axis == 0 ? 1 : s.z); ++z)
        for (std::int64_t y = 0; y < (axis == 1 ? 1 : s.y); ++y)
            for (std::int64_t x = 0; x < (axis == 2 ? 1 : s.x); ++x) {
                const std::int64_t base = s.index(z, y, x);
                for (std::int64_t i = 0; i < len; ++i) line[static_cast<std::size_t>(i)] = data[static_cast<std::size_t>(base + i * stride)];
                for (std::int64_t i = 0; i < len; ++i) {
                    double acc = 0;
                    for (std::int64_t t = -radius; t <= radius; ++t) {
                        std::int64_t j = i + t;
                        if (len == 1) j = 0;
                        else {
                            const std::int64_t period = 2 * (len - 1);
                            j %= period;
                            if (j < 0) j += period;
                            if (j >= len) j = period - j;
                        }
                        acc += k[static_cast<std::size_t>(t + radius)] * line[static_cast<std::size_t>(j)];
                    }
                    data[static_cast<std::size_t>(base + i * stride)] = acc;
                }
            }
}

} // namespace

Phantom generate_phantom(const PhantomConfig& cfg)
{
    cfg.validate();
    const Shape3 s = cfg.shape;
    const VoxelSize vs = cfg.voxel_size;
    const auto n = static_cast<std::size_t>(s.voxels());
    Rng rng(cfg.seed);

    std::vector<Label> labels(n, Label::background);
    std::vector<double> signal(n, cfg.intensity_bg);

    for (int c = 0; c < cfg.n_cells; ++c) {
        // Center in micrometers anywhere in the field; radii per axis.
        const double cz = rng.uniform(0, static_cast<double>(s.z) * vs.z);
        const double cy = rng.uniform(0, static_cast<double>(s.y) * vs.y);
        const double cx = rng.uniform(0, static_cast<double>(s.x) * vs.x);
        const double rz = rng.uniform(cfg.radius_min_um, cfg.radius_max_um);
        const double ry = rng.uniform(cfg.radius_min_um, cfg.radius_max_um);
        const double rx = rng.uniform(cfg.radius_min_um, cfg.radius_max_um);
        const double brightness =
            cfg.intensity_fg * rng.uniform(1.0 - cfg.cell_intensity_jitter, 1.0 + cfg.cell_intensity_jitter);
        const double level = std::max(brightness, cfg.intensity_bg + 0.5 * (cfg.intensity_fg - cfg.intensity_bg));

        const auto lo = [](double c, double r, double v) { return std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor((c - r) / v))); };
        const auto hi = [](double c, double r, double v, std::int64_t len) {
            return std::min<std::int64_t>(len - 1, static_cast<std::int64_t>(std::ceil((c + r) / v)));
        };
        for (std::int64_t z = lo(cz, rz, vs.z); z <= hi(cz, rz, vs.z, s.z); ++z)
            for (std::int64_t y = lo(cy, ry, vs.y); y <= hi(cy, ry, vs.y, s.y); ++y)
                for (std::int64_t x = lo(cx, rx, vs.x); x <= hi(cx, rx, vs.x, s.x); ++x) {
                    // Voxel centers at (i + 0.5) * voxel size.
                    const double dz = ((static_cast<double>(z) + 0.5) * vs.z - cz) / rz;
                    const double dy = ((static_cast<double>(y) + 0.5) * vs.y - cy) / ry;
                    const double dx = ((static_cast<double>(x) + 0.5) * vs.x - cx) / rx;
                    if (dz * dz + dy * dy + dx * dx > 1.0) continue;
                    const auto i = static_cast<std::size_t>(s.index(z, y, x));
                    labels[i] = Label::foreground;
                    signal[i] = std::max(signal[i], level);
                }
    }

    blur_axis(signal, s, 0, cfg.blur_sigma_um[0] / vs.z);
    blur_axis(signal, s, 1, cfg.blur_sigma_um[1] / vs.y);
    blur_axis(signal, s, 2, cfg.blur_sigma_um[2] / vs.x);

    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double noise = cfg.noise_sigma > 0 ? cfg.noise_sigma * rng.normal() : 0.0;
        data[i] = static_cast<float>(std::max(0.0, signal[i] + noise));
    }
    return Phantom{Volume3D(s, vs, std::move(data)), LabelVolume(s, vs, std::move(labels))};
}

SparsityPlan evenly_spaced_plan(std::int64_t depth, std::int64_t count)
{
    require(depth > 0, "depth must be positive");
    require(count >= 0 && count <= depth, "slice count must be in [0, depth]");
    SparsityPlan plan;
    for (std::int64_t i = 0; i < count; ++i)
        plan.labeled_slices.push_back((2 * i + 1) * depth / (2 * count));
    return plan;
}

LabelVolume sparsify_labels(const LabelVolume& dense, const SparsityPlan& plan)
{
    require(dense.dense(), "sparsify_labels: input must not contain unlabeled voxels");
    const Shape3 s = dense.shape();
    for (std::size_t i = 0; i < plan.labeled_slices.size(); ++i) {
        const auto z = plan.labeled_slices[i];
        require(z >= 0 && z < s.z, "sparsify_labels: slice index " + std::to_string(z) + " out of range");
        require(i == 0 || plan.labeled_slices[i - 1] < z, "sparsify_labels: slice indices must be sorted and unique");
    }
    LabelVolume out(s, dense.voxel_size(), Label::unlabeled);
    const auto plane = static_cast<std::size_t>(s.y * s.x);
    for (auto z : plan.labeled_slices) {
        const auto off = static_cast<std::size_t>(z) * plane;
        std::copy_n(dense.labels().begin() + static_cast<std::ptrdiff_t>(off), plane,
                    out.labels().begin() + static_cast<std::ptrdiff_t>(off));
    }
    return out;
}

} // namespace pseudoseg
