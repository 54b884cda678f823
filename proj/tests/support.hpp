#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pseudoseg/rng.hpp"
#include "pseudoseg/tensor.hpp"
#include "pseudoseg/volume.hpp"

namespace testing_support {

using namespace pseudoseg;

template <typename T>
Tensor<T> random_tensor(std::vector<std::int64_t> dims, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor<T> t(std::move(dims));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

inline Volume3D random_volume(Rng& rng, DType dtype = DType::f32, std::int64_t max_extent = 9)
{
    const Shape3 s{1 + static_cast<std::int64_t>(rng.below(max_extent)), 1 + static_cast<std::int64_t>(rng.below(max_extent)),
                   1 + static_cast<std::int64_t>(rng.below(max_extent))};
    const VoxelSize vs{rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0)};
    std::vector<float> d(static_cast<std::size_t>(s.voxels()));
    for (auto& v : d) {
        switch (dtype) {
        case DType::f32: v = static_cast<float>(rng.uniform(-1e3, 1e3)); break;
        case DType::u8: v = static_cast<float>(rng.below(256)); break;
        case DType::u16: v = static_cast<float>(rng.below(65536)); break;
        }
    }
    return Volume3D(s, vs, std::move(d), dtype);
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        path_ = std::filesystem::temp_directory_path() /
                ("pseudoseg_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::vector<char> read_bytes(const std::filesystem::path& p);

// Direct nested-loop cross-correlation with symmetric zero padding ("same").
// in: C x D x H x W for one batch item, k: K x C x kd x kh x kw.
std::vector<double> loop_conv3d(const std::vector<double>& in, std::int64_t C, std::int64_t D, std::int64_t H,
                                std::int64_t W, const std::vector<double>& k, std::int64_t K, std::int64_t kd,
                                std::int64_t kh, std::int64_t kw, const std::vector<double>& bias);

} // namespace testing_support
