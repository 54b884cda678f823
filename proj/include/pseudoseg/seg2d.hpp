#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseudoseg/model_io.hpp"
#include "pseudoseg/netops.hpp"
#include "pseudoseg/volume.hpp"

namespace pseudoseg {

/// Center-pixel classifier: a square intensity window goes through three
/// valid-padded conv+ReLU layers, one max-pool, and two fully connected
/// layers ending in a single logit for the window's center pixel.
struct Seg2DSpec {
    std::vector<std::int64_t> conv_channels{16, 32, 64};
    std::int64_t kernel = 3;
    std::vector<std::int64_t> fc_sizes{128, 1};
    std::int64_t input_window = 33;
    /// Max-pool window after the last conv; must divide the conv output extent.
    std::int64_t pool_window = 9;

    void validate() const;
    std::int64_t conv_extent() const { return input_window - 3 * (kernel - 1); }
    std::int64_t pooled_extent() const { return conv_extent() / pool_window; }
    std::int64_t fc_inputs() const { return conv_channels.back() * pooled_extent() * pooled_extent(); }
    friend bool operator==(const Seg2DSpec&, const Seg2DSpec&) = default;
};

void to_json(nlohmann::json& j, const Seg2DSpec& s);
void from_json(const nlohmann::json& j, Seg2DSpec& s);

template <typename T>
class Seg2DNet {
public:
    struct Cache {
        Tensor<T> input;
        Tensor<T> act[3]; ///< post-ReLU conv outputs
        nn::MaxPoolResult<T> pool;
        Tensor<T> flat;
        Tensor<T> fc1; ///< post-ReLU
    };

    Seg2DNet() = default;
    Seg2DNet(Seg2DSpec spec, std::vector<nn::Param<T>> params);
    static Seg2DNet initialized(const Seg2DSpec& spec, std::uint64_t seed);

    const Seg2DSpec& spec() const { return spec_; }
    std::vector<nn::Param<T>>& params() { return params_; }
    const std::vector<nn::Param<T>>& params() const { return params_; }
    /// Number of layers carrying weights (conv + fully connected).
    std::size_t parameterized_layers() const { return params_.size() / 2; }

    /// windows: B x 1 x w x w -> logits B x 1.
    Tensor<T> forward(const Tensor<T>& windows, Cache* cache = nullptr) const;
    /// Accumulates parameter gradients for d loss / d logits.
    void backward(const Cache& cache, const Tensor<T>& grad_logits);
    void zero_grad();

    /// Dense sliding-window inference on one normalized slice (H x W),
    /// equal to classifying every pixel's reflect-padded window.
    std::vector<T> predict_slice(std::span<const T> slice, std::int64_t height, std::int64_t width) const;

    template <typename U>
    Seg2DNet<U> cast() const;

private:
    Seg2DSpec spec_;
    std::vector<nn::Param<T>> params_;
};

struct ModelState2D {
    Seg2DNet<float> net;
    IntensityNorm norm;
    std::uint64_t seed = 0;
    std::int64_t epoch = 0;
};

ModelState2D build_seg2d(const Seg2DSpec& spec, std::uint64_t seed);

/// One training volume and its (possibly sparse) annotation.
struct LabeledVolume {
    const Volume3D* image;
    const LabelVolume* labels;
};

/// Hook receiving every label value that becomes a training target.
using TargetObserver = std::function<void(std::size_t volume, std::int64_t z, std::int64_t y, std::int64_t x, Label)>;

/// Binary cross-entropy on windows centered on labeled pixels only, with
/// foreground and background windows drawn 1:1 per batch. Fits the intensity
/// normalization on the given images when the model has none yet.
TrainHistory train_seg2d(ModelState2D& model, std::span<const LabeledVolume> volumes, const HyperParams& hyper,
                         const TargetObserver& observer = {});

/// Slice-by-slice probabilities over a whole volume.
ProbVolume predict_volume_2d(const ModelState2D& model, const Volume3D& volume);

/// Extracts the normalized, reflect-padded window centered on (z, y, x).
std::vector<float> extract_window(const Volume3D& volume, const IntensityNorm& norm, std::int64_t z, std::int64_t y,
                                  std::int64_t x, std::int64_t window);

Checkpoint to_checkpoint(const ModelState2D& model);
ModelState2D from_checkpoint_2d(const Checkpoint& ckpt);

} // namespace pseudoseg
