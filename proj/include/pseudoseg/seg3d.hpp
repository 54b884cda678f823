#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseudoseg/fuselabel.hpp"
#include "pseudoseg/model_io.hpp"
#include "pseudoseg/netops.hpp"
#include "pseudoseg/patch.hpp"
#include "pseudoseg/volume.hpp"

namespace pseudoseg {

/// Encoder-decoder with skip connections. Level l has base_channels * 2^l
/// channels and two 3x3x3 conv+ReLU blocks; levels are joined by max-pooling
/// (down) and nearest upsampling (up) with the per-level factors below.
struct Seg3DSpec {
    std::int64_t depth_levels = 3;
    std::int64_t base_channels = 16;
    std::vector<std::array<std::int64_t, 3>> pool_factors{{1, 2, 2}, {2, 2, 2}};
    Shape3 patch_shape{32, 64, 64};
    bool skip_connections = true;
    /// Group normalization after every conv when > 0.
    std::int64_t norm_groups = 0;

    void validate() const;
    std::int64_t channels(std::int64_t level) const { return base_channels << level; }
    friend bool operator==(const Seg3DSpec&, const Seg3DSpec&) = default;
};

void to_json(nlohmann::json& j, const Seg3DSpec& s);
void from_json(const nlohmann::json& j, Seg3DSpec& s);

template <typename T>
class UNet3D {
public:
    struct UnitCache {
        Tensor<T> input;
        nn::GroupNormCache<T> norm;
        Tensor<T> output; ///< post-ReLU
    };
    struct Cache {
        std::vector<UnitCache> units;
        std::vector<nn::MaxPoolResult<T>> pools;
        std::vector<std::vector<std::int64_t>> pool_inputs;
        std::vector<std::int64_t> skip_channels;
        Tensor<T> head_input;
    };

    UNet3D() = default;
    UNet3D(Seg3DSpec spec, std::vector<nn::Param<T>> params);
    static UNet3D initialized(const Seg3DSpec& spec, std::uint64_t seed);

    const Seg3DSpec& spec() const { return spec_; }
    std::vector<nn::Param<T>>& params() { return params_; }
    const std::vector<nn::Param<T>>& params() const { return params_; }

    /// input: B x 1 x D x H x W with spatial dims divisible by the cumulative
    /// pool factors -> logits of the same shape.
    Tensor<T> forward(const Tensor<T>& input, Cache* cache = nullptr) const;
    void backward(const Cache& cache, const Tensor<T>& grad_logits);
    void zero_grad();

    template <typename U>
    UNet3D<U> cast() const;

private:
    struct Unit {
        std::size_t weight; ///< index of kernels; bias follows; gamma, beta follow when normalized
    };

    Tensor<T> unit_forward(const Unit& u, const Tensor<T>& x, UnitCache* c) const;
    Tensor<T> unit_backward(const Unit& u, const UnitCache& c, const Tensor<T>& grad, bool need_input);
    void build_units();

    Seg3DSpec spec_;
    std::vector<nn::Param<T>> params_;
    std::vector<Unit> units_; ///< encoder units, then decoder units, then the head
};

struct ModelState3D {
    UNet3D<float> net;
    IntensityNorm norm;
    std::uint64_t seed = 0;
    std::int64_t epoch = 0;
};

ModelState3D build_seg3d(const Seg3DSpec& spec, std::uint64_t seed);

/// One training patch: image, target and weight blocks of the patch shape.
struct PatchSample {
    std::array<std::int64_t, 3> center{};
    std::size_t volume = 0;
    PatchSpec spec;
    std::vector<float> image;
    std::vector<float> target;
    std::vector<float> weight; ///< zero outside the source volume
};

/// Training volume with dense fused targets.
struct FusedVolume {
    const Volume3D* image;
    const FusedTargets* fused;
};

/// Draws n patches. round(n * fg_bias) of them are centered on a voxel with
/// target >= 0.5 and positive weight (uniformly over such voxels across all
/// volumes); the rest are centered uniformly over all voxels. Out-of-volume
/// voxels are reflect-padded with zero weight.
std::vector<PatchSample> sample_patches(std::span<const FusedVolume> volumes, const Shape3& patch_shape, std::int64_t n,
                                        std::uint64_t seed, double fg_bias);

/// Called after every epoch; may return a validation Dice to record.
using EpochHook = std::function<std::optional<double>(std::int64_t epoch, const ModelState3D&)>;

/// Adam on the weighted loss over sampled patches. On a non-finite loss the
/// model is restored to the last good parameters and NumericalError is thrown.
TrainHistory train_seg3d(ModelState3D& model, std::span<const FusedVolume> volumes, const HyperParams& hyper,
                         const EpochHook& hook = {});

/// Tiled inference with fractional overlap, fused by fuse_predictions.
ProbVolume predict_volume_3d(const ModelState3D& model, const Volume3D& volume, double tile_overlap = 0.25,
                             BlendMode blend = BlendMode::uniform);

Checkpoint to_checkpoint(const ModelState3D& model);
ModelState3D from_checkpoint_3d(const Checkpoint& ckpt);

} // namespace pseudoseg
