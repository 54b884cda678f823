#include "pseudoseg/seg2d.hpp"

#include <algorithm>
#include <cmath>

#include "pseudoseg/error.hpp"
#include "pseudoseg/fuselabel.hpp"
#include "pseudoseg/patch.hpp"
#include "pseudoseg/rng.hpp"

namespace pseudoseg {

using nlohmann::json;

void Seg2DSpec::validate() const
{
    require(conv_channels.size() == 3, "seg2d needs exactly three conv layers, got " + std::to_string(conv_channels.size()));
    require(fc_sizes.size() == 2, "seg2d needs exactly two fully connected layers, got " + std::to_string(fc_sizes.size()));
    require(fc_sizes[1] == 1, "seg2d output layer must have a single unit");
    for (auto c : conv_channels) require(c > 0, "conv channels must be positive");
    require(fc_sizes[0] > 0, "fc sizes must be positive");
    require(kernel > 0 && kernel % 2 == 1, "seg2d kernel must be odd");
    require(input_window > 0 && input_window % 2 == 1, "seg2d input window must be odd");
    require(conv_extent() > 0, "input window too small for three convolutions");
    require(pool_window > 0 && conv_extent() % pool_window == 0,
            "pool window " + std::to_string(pool_window) + " must divide conv output extent " + std::to_string(conv_extent()));
}

void to_json(json& j, const Seg2DSpec& s)
{
    j = json{{"conv_channels", s.conv_channels}, {"kernel", s.kernel}, {"fc_sizes", s.fc_sizes},
             {"input_window", s.input_window},   {"pool_window", s.pool_window}};
}

void from_json(const json& j, Seg2DSpec& s)
{
    s.conv_channels = j.at("conv_channels").get<std::vector<std::int64_t>>();
    s.kernel = j.at("kernel").get<std::int64_t>();
    s.fc_sizes = j.at("fc_sizes").get<std::vector<std::int64_t>>();
    s.input_window = j.at("input_window").get<std::int64_t>();
    s.pool_window = j.at("pool_window").get<std::int64_t>();
}

namespace {

enum ParamIndex : std::size_t { kConv1W, kConv1B, kConv2W, kConv2B, kConv3W, kConv3B, kFc1W, kFc1B, kFc2W, kFc2B, kCount };

const nn::ConvOptions kValid{nn::Padding::valid, {1, 1, 1}};

std::vector<std::vector<std::int64_t>> param_dims(const Seg2DSpec& s)
{
    const auto k = s.kernel;
    const auto& c = s.conv_channels;
    return {{c[0], 1, k, k}, {c[0]}, {c[1], c[0], k, k}, {c[1]}, {c[2], c[1], k, k}, {c[2]},
            {s.fc_sizes[0], s.fc_inputs()}, {s.fc_sizes[0]}, {1, s.fc_sizes[0]}, {1}};
}

} // namespace

template <typename T>
Seg2DNet<T>::Seg2DNet(Seg2DSpec spec, std::vector<nn::Param<T>> params) : spec_(std::move(spec)), params_(std::move(params))
{
    spec_.validate();
    const auto dims = param_dims(spec_);
    require(params_.size() == dims.size(), "seg2d: wrong number of parameter tensors");
    for (std::size_t i = 0; i < dims.size(); ++i)
        require(params_[i].value.dims() == dims[i], "seg2d: parameter '" + params_[i].name + "' has wrong shape");
}

template <typename T>
Seg2DNet<T> Seg2DNet<T>::initialized(const Seg2DSpec& spec, std::uint64_t seed)
{
    spec.validate();
    static const char* names[] = {"conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w",
                                  "conv3.b", "fc1.w",   "fc1.b",   "fc2.w",   "fc2.b"};
    const auto dims = param_dims(spec);
    Rng rng(seed);
    std::vector<nn::Param<T>> params;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        Tensor<T> t(dims[i]);
        if (i % 2 == 0) {
            const auto fan_in = Tensor<T>::count(dims[i]) / dims[i][0];
            init_uniform(t, fan_in, i == kFc2W ? 3.0 : 6.0, rng);
        }
        params.emplace_back(names[i], std::move(t));
    }
    return Seg2DNet(spec, std::move(params));
}

template <typename T>
Tensor<T> Seg2DNet<T>::forward(const Tensor<T>& windows, Cache* cache) const
{
    const auto w = spec_.input_window;
    require(windows.rank() == 4 && windows.dim(1) == 1 && windows.dim(2) == w && windows.dim(3) == w,
            "seg2d forward expects B x 1 x " + std::to_string(w) + " x " + std::to_string(w) + ", got " + windows.dims_string());
    Cache local;
    Cache& c = cache ? *cache : local;
    c.input = windows;
    const Tensor<T>* x = &c.input;
    for (int l = 0; l < 3; ++l) {
        c.act[l] = nn::conv2d(*x, params_[kConv1W + 2 * l].value, params_[kConv1B + 2 * l].value, kValid);
        nn::relu_inplace(c.act[l]);
        x = &c.act[l];
    }
    c.pool = nn::maxpool(c.act[2], {spec_.pool_window, spec_.pool_window});
    c.flat = c.pool.output;
    c.flat.reshape({windows.dim(0), spec_.fc_inputs()});
    c.fc1 = nn::dense(c.flat, params_[kFc1W].value, params_[kFc1B].value);
    nn::relu_inplace(c.fc1);
    return nn::dense(c.fc1, params_[kFc2W].value, params_[kFc2B].value);
}

template <typename T>
void Seg2DNet<T>::backward(const Cache& c, const Tensor<T>& grad_logits)
{
    auto accumulate = [this](std::size_t w, const nn::LayerGrads<T>& g) {
        for (std::size_t i = 0; i < g.weights.size(); ++i) params_[w].grad[i] += g.weights[i];
        for (std::size_t i = 0; i < g.bias.size(); ++i) params_[w + 1].grad[i] += g.bias[i];
    };
    auto g2 = nn::dense_backward(c.fc1, params_[kFc2W].value, grad_logits);
    accumulate(kFc2W, g2);
    auto g1 = nn::dense_backward(c.flat, params_[kFc1W].value, nn::relu_backward(c.fc1, g2.input));
    accumulate(kFc1W, g1);
    g1.input.reshape(c.pool.output.dims());
    Tensor<T> grad = nn::maxpool_backward(c.pool, c.act[2].dims(), g1.input);
    for (int l = 2; l >= 0; --l) {
        grad = nn::relu_backward(c.act[l], grad);
        const Tensor<T>& in = l == 0 ? c.input : c.act[l - 1];
        auto g = nn::conv2d_backward(in, params_[kConv1W + 2 * static_cast<std::size_t>(l)].value, grad, kValid, l > 0);
        accumulate(kConv1W + 2 * static_cast<std::size_t>(l), g);
        grad = std::move(g.input);
    }
}

template <typename T>
void Seg2DNet<T>::zero_grad()
{
    for (auto& p : params_) p.zero_grad();
}

namespace {

/// Stride-1 max over p x p windows (valid), per channel.
template <typename T>
Tensor<T> sliding_max(const Tensor<T>& x, std::int64_t p)
{
    const std::int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t Ho = H - p + 1, Wo = W - p + 1;
    Tensor<T> rows({1, C, H, Wo});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t y = 0; y < H; ++y) {
            const T* src = x.ptr() + (c * H + y) * W;
            T* dst = rows.ptr() + (c * H + y) * Wo;
            for (std::int64_t i = 0; i < Wo; ++i) dst[i] = *std::max_element(src + i, src + i + p);
        }
    Tensor<T> out({1, C, Ho, Wo});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t y = 0; y < Ho; ++y) {
            T* dst = out.ptr() + (c * Ho + y) * Wo;
            for (std::int64_t i = 0; i < Wo; ++i) {
                T m = rows[static_cast<std::size_t>((c * H + y) * Wo + i)];
                for (std::int64_t d = 1; d < p; ++d) m = std::max(m, rows[static_cast<std::size_t>((c * H + y + d) * Wo + i)]);
                dst[i] = m;
            }
        }
    return out;
}

} // namespace

template <typename T>
std::vector<T> Seg2DNet<T>::predict_slice(std::span<const T> slice, std::int64_t height, std::int64_t width) const
{
    require(static_cast<std::int64_t>(slice.size()) == height * width, "predict_slice: slice size mismatch");
    const std::int64_t r = spec_.input_window / 2;
    const std::int64_t Hp = height + 2 * r, Wp = width + 2 * r;
    Tensor<T> x({1, 1, Hp, Wp});
    for (std::int64_t y = 0; y < Hp; ++y)
        for (std::int64_t xx = 0; xx < Wp; ++xx)
            x[static_cast<std::size_t>(y * Wp + xx)] =
                slice[static_cast<std::size_t>(reflect_index(y - r, height) * width + reflect_index(xx - r, width))];

    for (int l = 0; l < 3; ++l) {
        x = nn::conv2d(x, params_[kConv1W + 2 * l].value, params_[kConv1B + 2 * l].value, kValid);
        nn::relu_inplace(x);
    }
    x = sliding_max(x, spec_.pool_window);
    // The first dense layer reads pooled cells pool_window apart: a dilated conv.
    const auto q = spec_.pooled_extent();
    Tensor<T> fc1_kernel = params_[kFc1W].value;
    fc1_kernel.reshape({spec_.fc_sizes[0], spec_.conv_channels[2], q, q});
    x = nn::conv2d(x, fc1_kernel, params_[kFc1B].value,
                   nn::ConvOptions{nn::Padding::valid, {1, spec_.pool_window, spec_.pool_window}});
    nn::relu_inplace(x);
    Tensor<T> fc2_kernel = params_[kFc2W].value;
    fc2_kernel.reshape({1, spec_.fc_sizes[0], 1, 1});
    x = nn::sigmoid(nn::conv2d(x, fc2_kernel, params_[kFc2B].value, kValid));
    require(x.dim(2) == height && x.dim(3) == width, "predict_slice: internal shape error");
    return std::move(x.storage());
}

template <typename T>
template <typename U>
Seg2DNet<U> Seg2DNet<T>::cast() const
{
    std::vector<nn::Param<U>> p;
    for (const auto& q : params_) p.emplace_back(q.name, q.value.template cast<U>());
    return Seg2DNet<U>(spec_, std::move(p));
}

template class Seg2DNet<float>;
template class Seg2DNet<double>;
template Seg2DNet<double> Seg2DNet<float>::cast<double>() const;
template Seg2DNet<float> Seg2DNet<double>::cast<float>() const;

ModelState2D build_seg2d(const Seg2DSpec& spec, std::uint64_t seed)
{
    return ModelState2D{Seg2DNet<float>::initialized(spec, seed), IntensityNorm{}, seed, 0};
}

std::vector<float> extract_window(const Volume3D& volume, const IntensityNorm& norm, std::int64_t z, std::int64_t y,
                                  std::int64_t x, std::int64_t window)
{
    const std::int64_t r = window / 2;
    const auto p = extract_block(volume.data(), volume.shape(), PatchSpec{{z, y - r, x - r}, {1, window, window}}, PadMode::reflect);
    std::vector<float> out(p.values.size());
    std::transform(p.values.begin(), p.values.end(), out.begin(), [&](float v) { return norm.apply(v); });
    return out;
}

namespace {

struct PixelRef {
    std::size_t volume;
    std::int64_t z, y, x;
};

/// Applies one of the 8 symmetries of the square to a w x w window.
void dihedral(std::span<float> win, std::int64_t w, std::uint64_t op)
{
    std::vector<float> src(win.begin(), win.end());
    for (std::int64_t y = 0; y < w; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            std::int64_t sy = (op & 4) ? x : y;
            std::int64_t sx = (op & 4) ? y : x;
            if (op & 1) sy = w - 1 - sy;
            if (op & 2) sx = w - 1 - sx;
            win[static_cast<std::size_t>(y * w + x)] = src[static_cast<std::size_t>(sy * w + sx)];
        }
}

bool improved(double loss, double best, double min_delta)
{
    return loss < best - min_delta * std::abs(best);
}

} // namespace

TrainHistory train_seg2d(ModelState2D& model, std::span<const LabeledVolume> volumes, const HyperParams& hyper,
                         const TargetObserver& observer)
{
    hyper.validate();
    require(!volumes.empty(), "train_seg2d: no training volumes");
    for (const auto& v : volumes)
        require(v.image && v.labels && v.image->shape() == v.labels->shape(), "train_seg2d: image/label shape mismatch");

    std::vector<PixelRef> fg, bg;
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        const auto& labels = *volumes[i].labels;
        const auto s = labels.shape();
        for (std::int64_t z = 0; z < s.z; ++z)
            for (std::int64_t y = 0; y < s.y; ++y)
                for (std::int64_t x = 0; x < s.x; ++x) {
                    const Label l = labels.at(z, y, x);
                    if (l == Label::foreground) fg.push_back({i, z, y, x});
                    else if (l == Label::background) bg.push_back({i, z, y, x});
                }
    }
    if (fg.empty() && bg.empty()) throw InvalidArgument("train_seg2d: no labeled pixels in the training volumes");

    if (model.epoch == 0) {
        std::vector<const Volume3D*> images;
        for (const auto& v : volumes) images.push_back(v.image);
        model.norm = IntensityNorm::fit(images);
    }

    auto& net = model.net;
    const auto w = net.spec().input_window;
    const auto B = hyper.batch_size;
    const std::int64_t batches = (hyper.patches_per_epoch + B - 1) / B;
    nn::Adam<float> adam({hyper.lr});
    Rng rng(hyper.seed);
    TrainHistory history;
    double best = INFINITY;
    std::int64_t stale = 0;

    Tensor<float> input({B, 1, w, w});
    std::vector<float> targets(static_cast<std::size_t>(B));
    const std::vector<float> ones(static_cast<std::size_t>(B), 1.0f);
    Tensor<float> grad({B, 1});
    Seg2DNet<float>::Cache cache;

    for (std::int64_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        double epoch_loss = 0;
        for (std::int64_t b = 0; b < batches; ++b) {
            for (std::int64_t i = 0; i < B; ++i) {
                const bool want_fg = fg.empty() ? false : bg.empty() ? true : (i % 2 == 0);
                const auto& pool = want_fg ? fg : bg;
                const PixelRef& px = pool[rng.below(pool.size())];
                const Label l = volumes[px.volume].labels->at(px.z, px.y, px.x);
                if (observer) observer(px.volume, px.z, px.y, px.x, l);
                targets[static_cast<std::size_t>(i)] = l == Label::foreground ? 1.0f : 0.0f;
                auto win = extract_window(*volumes[px.volume].image, model.norm, px.z, px.y, px.x, w);
                if (hyper.augment) dihedral(win, w, rng.below(8));
                std::copy(win.begin(), win.end(), input.ptr() + i * w * w);
            }
            net.zero_grad();
            const auto logits = net.forward(input, &cache);
            const auto probs = nn::sigmoid(logits);
            const double loss = weighted_bce(probs.data(), targets, ones);
            if (!std::isfinite(loss)) throw NumericalError("train_seg2d: non-finite loss at epoch " + std::to_string(epoch));
            weighted_bce_logit_grad<float>(probs.data(), targets, ones, grad.data());
            net.backward(cache, grad);
            adam.step(net.params());
            epoch_loss += loss;
            ++history.steps;
        }
        epoch_loss /= static_cast<double>(batches);
        history.epoch_loss.push_back(epoch_loss);
        ++model.epoch;
        if (!all_finite(net.params())) throw NumericalError("train_seg2d: parameters diverged");
        if (improved(epoch_loss, best, hyper.min_delta)) {
            best = epoch_loss;
            stale = 0;
        } else if (hyper.patience > 0 && ++stale >= hyper.patience) {
            history.stopped_early = true;
            break;
        }
    }
    return history;
}

ProbVolume predict_volume_2d(const ModelState2D& model, const Volume3D& volume)
{
    const auto s = volume.shape();
    const auto plane = static_cast<std::size_t>(s.y * s.x);
    std::vector<float> out(static_cast<std::size_t>(s.voxels()));
    std::vector<float> slice(plane);
    for (std::int64_t z = 0; z < s.z; ++z) {
        const auto src = volume.data().subspan(static_cast<std::size_t>(z) * plane, plane);
        std::transform(src.begin(), src.end(), slice.begin(), [&](float v) { return model.norm.apply(v); });
        const auto probs = model.net.predict_slice(slice, s.y, s.x);
        std::copy(probs.begin(), probs.end(), out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(z) * plane));
    }
    return ProbVolume(s, volume.voxel_size(), std::move(out));
}

Checkpoint to_checkpoint(const ModelState2D& model)
{
    return Checkpoint{"seg2d", model.net.spec(), model.norm, model.seed, model.epoch, {}, model.net.params()};
}

ModelState2D from_checkpoint_2d(const Checkpoint& ckpt)
{
    if (ckpt.model != "seg2d") throw InvalidArgument("checkpoint holds a '" + ckpt.model + "' model, expected seg2d");
    auto params = ckpt.params;
    for (auto& p : params) p.grad = Tensor<float>(p.value.dims());
    return ModelState2D{Seg2DNet<float>(ckpt.spec.get<Seg2DSpec>(), std::move(params)), ckpt.norm, ckpt.seed, ckpt.epoch};
}

} // namespace pseudoseg
