#include "pseudoseg/seg3d.hpp"

#include <algorithm>
#include <cmath>

#include "pseudoseg/error.hpp"
#include "pseudoseg/rng.hpp"

namespace pseudoseg {

using nlohmann::json;

void Seg3DSpec::validate() const
{
    require(depth_levels >= 1, "seg3d depth_levels must be >= 1");
    require(base_channels >= 1, "seg3d base_channels must be >= 1");
    require(static_cast<std::int64_t>(pool_factors.size()) == depth_levels - 1,
            "seg3d needs one pool factor triple per level transition (" + std::to_string(depth_levels - 1) + ")");
    require(patch_shape.positive(), "seg3d patch shape must be positive");
    std::array<std::int64_t, 3> cum{1, 1, 1};
    for (const auto& f : pool_factors)
        for (std::size_t a = 0; a < 3; ++a) {
            require(f[a] >= 1, "pool factors must be >= 1");
            cum[a] *= f[a];
        }
    require(patch_shape.z % cum[0] == 0 && patch_shape.y % cum[1] == 0 && patch_shape.x % cum[2] == 0,
            "patch shape " + to_string(patch_shape) + " is not divisible by the cumulative pool factors (" +
                std::to_string(cum[0]) + "," + std::to_string(cum[1]) + "," + std::to_string(cum[2]) + ")");
    require(norm_groups >= 0, "norm_groups must be >= 0");
    if (norm_groups > 0) require(base_channels % norm_groups == 0, "norm_groups must divide base_channels");
}

void to_json(json& j, const Seg3DSpec& s)
{
    j = json{{"depth_levels", s.depth_levels},
             {"base_channels", s.base_channels},
             {"pool_factors", s.pool_factors},
             {"patch_shape", {s.patch_shape.z, s.patch_shape.y, s.patch_shape.x}},
             {"skip_connections", s.skip_connections},
             {"norm_groups", s.norm_groups}};
}

void from_json(const json& j, Seg3DSpec& s)
{
    s.depth_levels = j.at("depth_levels").get<std::int64_t>();
    s.base_channels = j.at("base_channels").get<std::int64_t>();
    s.pool_factors = j.at("pool_factors").get<std::vector<std::array<std::int64_t, 3>>>();
    const auto p = j.at("patch_shape");
    s.patch_shape = {p.at(0).get<std::int64_t>(), p.at(1).get<std::int64_t>(), p.at(2).get<std::int64_t>()};
    s.skip_connections = j.at("skip_connections").get<bool>();
    s.norm_groups = j.at("norm_groups").get<std::int64_t>();
}

namespace {

struct UnitShape {
    std::string name;
    std::int64_t in, out, kernel;
};

/// Units in execution order: encoder levels, decoder levels (deepest first), head.
std::vector<UnitShape> unit_shapes(const Seg3DSpec& s)
{
    std::vector<UnitShape> u;
    const auto L = s.depth_levels;
    for (std::int64_t l = 0; l < L; ++l) {
        const auto in = l == 0 ? 1 : s.channels(l - 1);
        u.push_back({"enc" + std::to_string(l) + "a", in, s.channels(l), 3});
        u.push_back({"enc" + std::to_string(l) + "b", s.channels(l), s.channels(l), 3});
    }
    for (std::int64_t l = L - 2; l >= 0; --l) {
        const auto in = s.channels(l + 1) + (s.skip_connections ? s.channels(l) : 0);
        u.push_back({"dec" + std::to_string(l) + "a", in, s.channels(l), 3});
        u.push_back({"dec" + std::to_string(l) + "b", s.channels(l), s.channels(l), 3});
    }
    u.push_back({"head", s.channels(0), 1, 1});
    return u;
}

std::vector<std::int64_t> factor_vec(const std::array<std::int64_t, 3>& f)
{
    return {f[0], f[1], f[2]};
}

const nn::ConvOptions kSame{};

} // namespace

template <typename T>
UNet3D<T>::UNet3D(Seg3DSpec spec, std::vector<nn::Param<T>> params) : spec_(std::move(spec)), params_(std::move(params))
{
    spec_.validate();
    build_units();
    std::size_t expected = 0;
    const auto shapes = unit_shapes(spec_);
    for (std::size_t i = 0; i < shapes.size(); ++i) expected += (spec_.norm_groups > 0 && i + 1 < shapes.size()) ? 4 : 2;
    require(params_.size() == expected, "seg3d: wrong number of parameter tensors");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& s = shapes[i];
        const auto w = units_[i].weight;
        require(params_[w].value.dims() == std::vector<std::int64_t>({s.out, s.in, s.kernel, s.kernel, s.kernel}),
                "seg3d: parameter '" + params_[w].name + "' has wrong shape");
    }
}

template <typename T>
void UNet3D<T>::build_units()
{
    units_.clear();
    const auto shapes = unit_shapes(spec_);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        units_.push_back(Unit{idx});
        idx += (spec_.norm_groups > 0 && i + 1 < shapes.size()) ? 4 : 2;
    }
}

template <typename T>
UNet3D<T> UNet3D<T>::initialized(const Seg3DSpec& spec, std::uint64_t seed)
{
    spec.validate();
    Rng rng(seed);
    std::vector<nn::Param<T>> params;
    const auto shapes = unit_shapes(spec);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& s = shapes[i];
        const bool head = i + 1 == shapes.size();
        Tensor<T> w({s.out, s.in, s.kernel, s.kernel, s.kernel});
        init_uniform(w, s.in * s.kernel * s.kernel * s.kernel, head ? 3.0 : 6.0, rng);
        params.emplace_back(s.name + ".w", std::move(w));
        params.emplace_back(s.name + ".b", Tensor<T>({s.out}));
        if (spec.norm_groups > 0 && !head) {
            params.emplace_back(s.name + ".gamma", Tensor<T>({s.out}, T(1)));
            params.emplace_back(s.name + ".beta", Tensor<T>({s.out}));
        }
    }
    return UNet3D(spec, std::move(params));
}

template <typename T>
Tensor<T> UNet3D<T>::unit_forward(const Unit& u, const Tensor<T>& x, UnitCache* c) const
{
    Tensor<T> y = nn::conv3d(x, params_[u.weight].value, params_[u.weight + 1].value, kSame);
    if (spec_.norm_groups > 0)
        y = nn::group_norm(y, params_[u.weight + 2].value, params_[u.weight + 3].value, spec_.norm_groups, &c->norm);
    nn::relu_inplace(y);
    c->input = x;
    c->output = y;
    return y;
}

template <typename T>
Tensor<T> UNet3D<T>::unit_backward(const Unit& u, const UnitCache& c, const Tensor<T>& grad, bool need_input)
{
    auto add = [](Tensor<T>& dst, const Tensor<T>& src) {
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    };
    Tensor<T> g = nn::relu_backward(c.output, grad);
    if (spec_.norm_groups > 0) {
        auto gn = nn::group_norm_backward(c.norm, params_[u.weight + 2].value, spec_.norm_groups, g);
        add(params_[u.weight + 2].grad, gn.weights);
        add(params_[u.weight + 3].grad, gn.bias);
        g = std::move(gn.input);
    }
    auto cg = nn::conv3d_backward(c.input, params_[u.weight].value, g, kSame, need_input);
    add(params_[u.weight].grad, cg.weights);
    add(params_[u.weight + 1].grad, cg.bias);
    return std::move(cg.input);
}

template <typename T>
Tensor<T> UNet3D<T>::forward(const Tensor<T>& input, Cache* cache) const
{
    require(input.rank() == 5 && input.dim(1) == 1, "seg3d forward expects B x 1 x D x H x W, got " + input.dims_string());
    const auto L = spec_.depth_levels;
    Cache local;
    Cache& c = cache ? *cache : local;
    c.units.assign(units_.size(), UnitCache{});
    c.pools.assign(static_cast<std::size_t>(L - 1), {});
    c.pool_inputs.assign(static_cast<std::size_t>(L - 1), {});
    c.skip_channels.assign(static_cast<std::size_t>(L - 1), 0);

    std::size_t u = 0;
    Tensor<T> x = input;
    for (std::int64_t l = 0; l < L; ++l) {
        x = unit_forward(units_[u], x, &c.units[u]);
        ++u;
        x = unit_forward(units_[u], x, &c.units[u]);
        ++u;
        if (l < L - 1) {
            const auto li = static_cast<std::size_t>(l);
            c.pool_inputs[li] = x.dims();
            c.skip_channels[li] = x.dim(1);
            c.pools[li] = nn::maxpool(x, factor_vec(spec_.pool_factors[li]));
            x = c.pools[li].output;
        }
    }
    for (std::int64_t l = L - 2; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        Tensor<T> up = nn::upsample(x, factor_vec(spec_.pool_factors[li]));
        // Skip source is the second encoder unit of level l.
        x = spec_.skip_connections ? nn::concat_channels(c.units[2 * li + 1].output, up) : std::move(up);
        x = unit_forward(units_[u], x, &c.units[u]);
        ++u;
        x = unit_forward(units_[u], x, &c.units[u]);
        ++u;
    }
    c.head_input = x;
    const auto& head = units_.back();
    return nn::conv3d(x, params_[head.weight].value, params_[head.weight + 1].value, kSame);
}

template <typename T>
void UNet3D<T>::backward(const Cache& c, const Tensor<T>& grad_logits)
{
    const auto L = spec_.depth_levels;
    const auto& head = units_.back();
    auto hg = nn::conv3d_backward(c.head_input, params_[head.weight].value, grad_logits, kSame, true);
    for (std::size_t i = 0; i < hg.weights.size(); ++i) params_[head.weight].grad[i] += hg.weights[i];
    for (std::size_t i = 0; i < hg.bias.size(); ++i) params_[head.weight + 1].grad[i] += hg.bias[i];
    Tensor<T> g = std::move(hg.input);

    std::vector<Tensor<T>> skip_grads(static_cast<std::size_t>(std::max<std::int64_t>(L - 1, 0)));
    // Decoder units sit after the 2L encoder units, deepest level first.
    for (std::int64_t l = 0; l <= L - 2; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const std::size_t ua = static_cast<std::size_t>(2 * L + 2 * (L - 2 - l));
        g = unit_backward(units_[ua + 1], c.units[ua + 1], g, true);
        g = unit_backward(units_[ua], c.units[ua], g, true);
        if (spec_.skip_connections) {
            auto [gs, gu] = nn::split_channels(g, c.skip_channels[li]);
            skip_grads[li] = std::move(gs);
            g = std::move(gu);
        }
        g = nn::upsample_backward(g, factor_vec(spec_.pool_factors[li]));
    }
    for (std::int64_t l = L - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        if (l < L - 1) {
            g = nn::maxpool_backward(c.pools[li], c.pool_inputs[li], g);
            if (spec_.skip_connections)
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += skip_grads[li][i];
        }
        g = unit_backward(units_[2 * li + 1], c.units[2 * li + 1], g, true);
        g = unit_backward(units_[2 * li], c.units[2 * li], g, l > 0);
    }
}

template <typename T>
void UNet3D<T>::zero_grad()
{
    for (auto& p : params_) p.zero_grad();
}

template <typename T>
template <typename U>
UNet3D<U> UNet3D<T>::cast() const
{
    std::vector<nn::Param<U>> p;
    for (const auto& q : params_) p.emplace_back(q.name, q.value.template cast<U>());
    return UNet3D<U>(spec_, std::move(p));
}

template class UNet3D<float>;
template class UNet3D<double>;
template UNet3D<double> UNet3D<float>::cast<double>() const;
template UNet3D<float> UNet3D<double>::cast<float>() const;

ModelState3D build_seg3d(const Seg3DSpec& spec, std::uint64_t seed)
{
    return ModelState3D{UNet3D<float>::initialized(spec, seed), IntensityNorm{}, seed, 0};
}

namespace {

/// Precomputed sampling support over a set of fused volumes.
class PatchSampler {
public:
    PatchSampler(std::span<const FusedVolume> volumes, Shape3 patch) : volumes_(volumes), patch_(patch)
    {
        require(!volumes.empty(), "sample_patches: no volumes");
        require(patch.positive(), "sample_patches: patch shape must be positive");
        for (std::size_t v = 0; v < volumes.size(); ++v) {
            const auto& f = *volumes[v].fused;
            require(volumes[v].image->shape() == f.shape, "sample_patches: image and fused targets are not aligned");
            require(f.targets.size() == static_cast<std::size_t>(f.shape.voxels()) && f.weights.size() == f.targets.size(),
                    "sample_patches: fused targets are not dense");
            offsets_.push_back(total_);
            total_ += f.shape.voxels();
            for (std::size_t i = 0; i < f.targets.size(); ++i)
                if (f.targets[i] >= 0.5f && f.weights[i] > 0.0f) fg_.push_back({v, static_cast<std::int64_t>(i)});
        }
    }

    std::vector<PatchSample> draw(std::int64_t n, Rng& rng, double fg_bias) const
    {
        require(n > 0, "sample_patches: n must be > 0");
        require(fg_bias >= 0.0 && fg_bias <= 1.0, "sample_patches: fg_bias must be in [0,1]");
        const auto n_fg = fg_.empty() ? 0 : static_cast<std::int64_t>(std::llround(static_cast<double>(n) * fg_bias));
        std::vector<std::uint8_t> kinds(static_cast<std::size_t>(n), 0);
        std::fill(kinds.begin(), kinds.begin() + n_fg, std::uint8_t{1});
        rng.shuffle(kinds.begin(), kinds.end());

        std::vector<PatchSample> out;
        out.reserve(static_cast<std::size_t>(n));
        for (auto kind : kinds) {
            std::pair<std::size_t, std::int64_t> at;
            if (kind) {
                at = fg_[rng.below(fg_.size())];
            } else {
                const auto g = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total_)));
                const auto v = static_cast<std::size_t>(std::upper_bound(offsets_.begin(), offsets_.end(), g) - offsets_.begin() - 1);
                at = {v, g - offsets_[v]};
            }
            out.push_back(extract(at.first, at.second));
        }
        return out;
    }

private:
    PatchSample extract(std::size_t v, std::int64_t flat) const
    {
        const auto& img = *volumes_[v].image;
        const auto& f = *volumes_[v].fused;
        const auto s = f.shape;
        const std::array<std::int64_t, 3> c{flat / (s.y * s.x), (flat / s.x) % s.y, flat % s.x};
        PatchSpec spec{{c[0] - patch_.z / 2, c[1] - patch_.y / 2, c[2] - patch_.x / 2}, patch_};
        auto image = extract_block(img.data(), s, spec, PadMode::reflect);
        auto target = extract_block(std::span<const float>(f.targets), s, spec, PadMode::reflect);
        auto weight = extract_block(std::span<const float>(f.weights), s, spec, PadMode::reflect);
        for (std::size_t i = 0; i < weight.values.size(); ++i)
            if (!weight.valid[i]) weight.values[i] = 0.0f;
        return PatchSample{c, v, spec, std::move(image.values), std::move(target.values), std::move(weight.values)};
    }

    std::span<const FusedVolume> volumes_;
    Shape3 patch_;
    std::vector<std::int64_t> offsets_;
    std::int64_t total_ = 0;
    std::vector<std::pair<std::size_t, std::int64_t>> fg_;
};

/// Flips along each axis and, for square lateral patches, a Y/X transpose.
void augment_block(std::vector<float>& v, const Shape3& s, std::uint64_t op)
{
    if (op == 0) return;
    const bool transpose = (op & 8) && s.y == s.x;
    std::vector<float> src = v;
    std::size_t k = 0;
    for (std::int64_t z = 0; z < s.z; ++z)
        for (std::int64_t y = 0; y < s.y; ++y)
            for (std::int64_t x = 0; x < s.x; ++x, ++k) {
                std::int64_t sz = z, sy = transpose ? x : y, sx = transpose ? y : x;
                if (op & 1) sz = s.z - 1 - sz;
                if (op & 2) sy = s.y - 1 - sy;
                if (op & 4) sx = s.x - 1 - sx;
                v[k] = src[static_cast<std::size_t>(s.index(sz, sy, sx))];
            }
}

bool improved(double loss, double best, double min_delta)
{
    return loss < best - min_delta * std::abs(best);
}

} // namespace

std::vector<PatchSample> sample_patches(std::span<const FusedVolume> volumes, const Shape3& patch_shape, std::int64_t n,
                                        std::uint64_t seed, double fg_bias)
{
    require(n > 0, "sample_patches: n must be > 0");
    PatchSampler sampler(volumes, patch_shape);
    Rng rng(seed);
    return sampler.draw(n, rng, fg_bias);
}

TrainHistory train_seg3d(ModelState3D& model, std::span<const FusedVolume> volumes, const HyperParams& hyper,
                         const EpochHook& hook)
{
    hyper.validate();
    require(!volumes.empty(), "train_seg3d: no training volumes");
    for (const auto& v : volumes) v.fused->validate();
    auto& net = model.net;
    const Shape3 ps = net.spec().patch_shape;
    const PatchSampler sampler(volumes, ps);

    if (model.epoch == 0) {
        std::vector<const Volume3D*> images;
        for (const auto& v : volumes) images.push_back(v.image);
        model.norm = IntensityNorm::fit(images);
    }

    const auto B = hyper.batch_size;
    const std::int64_t batches = (hyper.patches_per_epoch + B - 1) / B;
    const auto pv = static_cast<std::size_t>(ps.voxels());
    nn::Adam<float> adam({hyper.lr});
    TrainHistory history;
    double best = INFINITY;
    std::int64_t stale = 0;

    Tensor<float> input({B, 1, ps.z, ps.y, ps.x});
    std::vector<float> targets(static_cast<std::size_t>(B) * pv), weights(targets.size());
    Tensor<float> grad(input.dims());
    UNet3D<float>::Cache cache;
    std::vector<nn::Param<float>> last_good = net.params();

    for (std::int64_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        double epoch_loss = 0;
        for (std::int64_t b = 0; b < batches; ++b) {
            Rng rng(derive_seed(hyper.seed, static_cast<std::uint64_t>(model.epoch * batches + b)));
            auto samples = sampler.draw(B, rng, hyper.fg_bias);
            for (std::size_t i = 0; i < samples.size(); ++i) {
                auto& s = samples[i];
                if (hyper.augment) {
                    const auto op = rng.below(16);
                    augment_block(s.image, ps, op);
                    augment_block(s.target, ps, op);
                    augment_block(s.weight, ps, op);
                }
                float* dst = input.ptr() + i * pv;
                for (std::size_t k = 0; k < pv; ++k) dst[k] = model.norm.apply(s.image[k]);
                std::copy(s.target.begin(), s.target.end(), targets.begin() + static_cast<std::ptrdiff_t>(i * pv));
                std::copy(s.weight.begin(), s.weight.end(), weights.begin() + static_cast<std::ptrdiff_t>(i * pv));
            }
            net.zero_grad();
            const auto probs = nn::sigmoid(net.forward(input, &cache));
            double loss = NAN;
            try {
                loss = weighted_bce(probs.data(), targets, weights);
            } catch (const NumericalError&) {
                // NaN predictions; handled below like any other non-finite loss
            }
            if (!std::isfinite(loss)) {
                net.params() = last_good;
                throw NumericalError("train_seg3d: non-finite loss at epoch " + std::to_string(model.epoch) +
                                     "; parameters restored to the last good step");
            }
            weighted_bce_logit_grad<float>(probs.data(), targets, weights, grad.data());
            net.backward(cache, grad);
            last_good = net.params();
            adam.step(net.params());
            if (!all_finite(net.params())) {
                net.params() = last_good;
                throw NumericalError("train_seg3d: parameters diverged at epoch " + std::to_string(model.epoch) +
                                     "; restored to the last good step");
            }
            epoch_loss += loss;
            ++history.steps;
        }
        epoch_loss /= static_cast<double>(batches);
        history.epoch_loss.push_back(epoch_loss);
        ++model.epoch;
        if (hook)
            if (auto d = hook(model.epoch, model)) history.val_dice.push_back(*d);
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

ProbVolume predict_volume_3d(const ModelState3D& model, const Volume3D& volume, double tile_overlap, BlendMode blend)
{
    const Shape3 ps = model.net.spec().patch_shape;
    const auto tiles = tile_volume(volume.shape(), ps, tile_overlap);
    std::vector<PatchPrediction> preds;
    preds.reserve(tiles.size());
    Tensor<float> input({1, 1, ps.z, ps.y, ps.x});
    for (const auto& t : tiles) {
        const auto block = extract_patch(volume, t, PadMode::reflect);
        for (std::size_t k = 0; k < block.values.size(); ++k) input[k] = model.norm.apply(block.values[k]);
        const auto probs = nn::sigmoid(model.net.forward(input));
        preds.push_back(PatchPrediction{t, std::vector<float>(probs.data().begin(), probs.data().end())});
    }
    return fuse_predictions(preds, volume.shape(), blend, volume.voxel_size());
}

Checkpoint to_checkpoint(const ModelState3D& model)
{
    return Checkpoint{"seg3d", model.net.spec(), model.norm, model.seed, model.epoch, {}, model.net.params()};
}

ModelState3D from_checkpoint_3d(const Checkpoint& ckpt)
{
    if (ckpt.model != "seg3d") throw InvalidArgument("checkpoint holds a '" + ckpt.model + "' model, expected seg3d");
    auto params = ckpt.params;
    for (auto& p : params) p.grad = Tensor<float>(p.value.dims());
    return ModelState3D{UNet3D<float>(ckpt.spec.get<Seg3DSpec>(), std::move(params)), ckpt.norm, ckpt.seed, ckpt.epoch};
}

} // namespace pseudoseg
