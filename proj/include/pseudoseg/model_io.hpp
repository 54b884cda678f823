#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseudoseg/optim.hpp"
#include "pseudoseg/rng.hpp"
#include "pseudoseg/volume.hpp"

namespace pseudoseg {

/// Optimization settings shared by both networks. Serialized into every
/// results record.
struct HyperParams {
    double lr = 1e-3;
    std::int64_t batch_size = 64;
    std::int64_t patches_per_epoch = 2048;
    std::int64_t epochs = 20;
    std::uint64_t seed = 0;
    std::string optimizer = "adam";
    /// Stop after this many epochs without a relative loss improvement of
    /// min_delta; 0 disables early stopping.
    std::int64_t patience = 4;
    double min_delta = 1e-3;
    /// Fraction of 3D patches centered on a foreground target voxel.
    double fg_bias = 0.5;
    bool augment = true;

    void validate() const;
    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

void to_json(nlohmann::json& j, const HyperParams& h);
void from_json(const nlohmann::json& j, HyperParams& h);

struct TrainHistory {
    std::vector<double> epoch_loss;
    std::vector<double> val_dice; ///< empty when no validation hook is set
    bool stopped_early = false;
    std::int64_t steps = 0;
};

/// Affine intensity normalization fitted on training volumes and stored with
/// the model, so that inference never depends on test-time statistics.
struct IntensityNorm {
    double shift = 0.0;
    double scale = 1.0;

    float apply(float v) const { return static_cast<float>((static_cast<double>(v) - shift) * scale); }
    static IntensityNorm fit(const std::vector<const Volume3D*>& volumes);
    friend bool operator==(const IntensityNorm&, const IntensityNorm&) = default;
};

void to_json(nlohmann::json& j, const IntensityNorm& n);
void from_json(const nlohmann::json& j, IntensityNorm& n);

/// Model parameters plus enough metadata to rebuild the model.
/// File framing matches VOLG: magic "VOLGCKPT", u32 LE header length, JSON
/// header, then raw little-endian f32 tensors in declared order.
struct Checkpoint {
    std::string model; ///< "seg2d" | "seg3d"
    nlohmann::json spec;
    IntensityNorm norm;
    std::uint64_t seed = 0;
    std::int64_t epoch = 0;
    Provenance provenance;
    std::vector<nn::Param<float>> params;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Fan-in scaled uniform initialization: U(-sqrt(gain/fan_in), +sqrt(gain/fan_in)).
template <typename T>
void init_uniform(Tensor<T>& t, std::int64_t fan_in, double gain, Rng& rng);

template <typename T>
bool all_finite(const std::vector<nn::Param<T>>& params);

} // namespace pseudoseg
