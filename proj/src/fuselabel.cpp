#include "pseudoseg/fuselabel.hpp"

#include <algorithm>
#include <cmath>

#include "pseudoseg/error.hpp"
#include "pseudoseg/volg.hpp"

namespace pseudoseg {

Alpha::Alpha(double v) : value_(v)
{
    require(std::isfinite(v) && v >= 0.0, "alpha must be finite and >= 0");
}

std::int64_t PseudoLabels::count() const
{
    return std::count(defined.begin(), defined.end(), std::uint8_t{1});
}

void FusedTargets::validate() const
{
    const auto n = static_cast<std::size_t>(shape.voxels());
    require(targets.size() == n && weights.size() == n && source.size() == n, "fused targets: size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        require(targets[i] >= 0.0f && targets[i] <= 1.0f, "fused targets must lie in [0,1]");
        require(std::isfinite(weights[i]) && weights[i] >= 0.0f, "fused weights must be finite and >= 0");
    }
}

PseudoLabels make_pseudo_labels(const ProbVolume& probs, const LabelVolume& labels, PseudoMode mode, double threshold)
{
    require(probs.shape() == labels.shape(), "make_pseudo_labels: shape mismatch " + to_string(probs.shape()) + " vs " +
                                                 to_string(labels.shape()));
    if (mode == PseudoMode::hard) require(threshold > 0.0 && threshold < 1.0, "pseudo-label threshold must be in (0,1)");
    const auto n = static_cast<std::size_t>(labels.shape().voxels());
    PseudoLabels out{labels.shape(), std::vector<float>(n, 0.0f), std::vector<std::uint8_t>(n, 0)};
    const auto p = probs.probs();
    const auto l = labels.labels();
    for (std::size_t i = 0; i < n; ++i) {
        if (l[i] != Label::unlabeled) continue;
        out.defined[i] = 1;
        out.targets[i] = mode == PseudoMode::hard ? (static_cast<double>(p[i]) >= threshold ? 1.0f : 0.0f) : p[i];
    }
    return out;
}

FusedTargets fuse(const LabelVolume& labels, const PseudoLabels& pseudo, Alpha alpha)
{
    require(labels.shape() == pseudo.shape, "fuse: shape mismatch");
    const auto n = static_cast<std::size_t>(labels.shape().voxels());
    require(pseudo.targets.size() == n && pseudo.defined.size() == n, "fuse: pseudo-label payload has wrong size");
    FusedTargets f{labels.shape(), labels.voxel_size(), std::vector<float>(n), std::vector<float>(n),
                   std::vector<Source>(n)};
    const auto l = labels.labels();
    const auto a = static_cast<float>(alpha.value());
    for (std::size_t i = 0; i < n; ++i) {
        if (l[i] == Label::unlabeled) {
            if (!pseudo.defined[i]) throw InvalidArgument("fuse: pseudo-labels miss unlabeled voxel " + std::to_string(i));
            f.targets[i] = pseudo.targets[i];
            f.weights[i] = a;
            f.source[i] = Source::pseudo;
        } else {
            if (pseudo.defined[i]) throw InvalidArgument("fuse: pseudo-labels overlap labeled voxel " + std::to_string(i));
            f.targets[i] = l[i] == Label::foreground ? 1.0f : 0.0f;
            f.weights[i] = 1.0f;
            f.source[i] = Source::ground_truth;
        }
    }
    return f;
}

double pairwise_sum(std::span<const double> values)
{
    constexpr std::size_t block = 128;
    if (values.size() <= block) {
        double s = 0;
        for (double v : values) s += v;
        return s;
    }
    // Split at a block boundary so the tree shape depends only on the length.
    const std::size_t blocks = (values.size() + block - 1) / block;
    const std::size_t mid = (blocks / 2) * block;
    return pairwise_sum(values.first(mid)) + pairwise_sum(values.subspan(mid));
}

namespace {

template <typename P>
double weighted_bce_impl(std::span<const P> pred, std::span<const float> targets, std::span<const float> weights)
{
    require(pred.size() == targets.size() && pred.size() == weights.size(), "weighted_bce: size mismatch");
    // Zero-weight voxels are dropped before summation so they cannot change
    // the reduction tree: at alpha = 0 the result is bitwise the supervised loss.
    std::vector<double> terms;
    std::vector<double> w;
    terms.reserve(pred.size());
    w.reserve(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p0 = static_cast<double>(pred[i]);
        if (std::isnan(p0) || std::isnan(targets[i]) || std::isnan(weights[i]))
            throw NumericalError("weighted_bce: NaN in inputs");
        if (weights[i] == 0.0f) continue;
        const double p = std::clamp(p0, kBceEpsilon, 1.0 - kBceEpsilon);
        const double t = targets[i];
        w.push_back(weights[i]);
        terms.push_back(w.back() * -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p)));
    }
    const double wsum = pairwise_sum(w);
    if (wsum <= 0.0) return 0.0;
    return pairwise_sum(terms) / wsum;
}

double weight_total(std::span<const float> weights)
{
    std::vector<double> w;
    w.reserve(weights.size());
    for (float v : weights)
        if (v != 0.0f) w.push_back(v);
    return pairwise_sum(w);
}

} // namespace

double weighted_bce(std::span<const float> pred, std::span<const float> targets, std::span<const float> weights)
{
    return weighted_bce_impl(pred, targets, weights);
}

double weighted_bce(std::span<const double> pred, std::span<const float> targets, std::span<const float> weights)
{
    return weighted_bce_impl(pred, targets, weights);
}

double weighted_bce(const ProbVolume& pred, const FusedTargets& fused)
{
    require(pred.shape() == fused.shape, "weighted_bce: shape mismatch");
    return weighted_bce_impl(pred.probs(), std::span<const float>(fused.targets), std::span<const float>(fused.weights));
}

void weighted_bce_grad(std::span<const double> pred, std::span<const float> targets, std::span<const float> weights,
                       std::span<double> grad)
{
    require(pred.size() == targets.size() && pred.size() == weights.size() && grad.size() == pred.size(),
            "weighted_bce_grad: size mismatch");
    const double wsum = weight_total(weights);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i];
        if (std::isnan(p) || std::isnan(targets[i]) || std::isnan(weights[i]))
            throw NumericalError("weighted_bce_grad: NaN in inputs");
        if (wsum <= 0.0 || weights[i] == 0.0f || p < kBceEpsilon || p > 1.0 - kBceEpsilon) {
            grad[i] = 0.0;
            continue;
        }
        grad[i] = static_cast<double>(weights[i]) * (p - targets[i]) / (p * (1.0 - p)) / wsum;
    }
}

std::vector<double> weighted_bce_grad(const ProbVolume& pred, const FusedTargets& fused)
{
    require(pred.shape() == fused.shape, "weighted_bce_grad: shape mismatch");
    std::vector<double> p(pred.probs().begin(), pred.probs().end());
    std::vector<double> g(p.size());
    weighted_bce_grad(p, fused.targets, fused.weights, g);
    return g;
}

template <typename T>
void weighted_bce_logit_grad(std::span<const T> pred, std::span<const float> targets, std::span<const float> weights,
                             std::span<T> grad)
{
    require(pred.size() == targets.size() && pred.size() == weights.size() && grad.size() == pred.size(),
            "weighted_bce_logit_grad: size mismatch");
    const double wsum = weight_total(weights);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (wsum <= 0.0 || weights[i] == 0.0f) {
            grad[i] = T(0);
            continue;
        }
        grad[i] = static_cast<T>(static_cast<double>(weights[i]) * (static_cast<double>(pred[i]) - targets[i]) / wsum);
    }
}

template void weighted_bce_logit_grad<float>(std::span<const float>, std::span<const float>, std::span<const float>,
                                             std::span<float>);
template void weighted_bce_logit_grad<double>(std::span<const double>, std::span<const float>, std::span<const float>,
                                              std::span<double>);

void save_fused(const FusedTargets& fused, const std::filesystem::path& stem, const Provenance& provenance)
{
    fused.validate();
    const auto base = stem.string();
    save_probs(ProbVolume(fused.shape, fused.voxel_size, fused.targets), base + "_targets.volg", provenance);
    save_volume(Volume3D(fused.shape, fused.voxel_size, fused.weights), base + "_weights.volg", provenance);
    std::vector<Label> src(fused.source.size());
    std::transform(fused.source.begin(), fused.source.end(), src.begin(),
                   [](Source s) { return static_cast<Label>(static_cast<std::uint8_t>(s)); });
    save_labels(LabelVolume(fused.shape, fused.voxel_size, std::move(src)), base + "_source.volg", provenance);
}

FusedTargets load_fused(const std::filesystem::path& stem, Provenance* provenance)
{
    const auto base = stem.string();
    const auto targets = load_probs(base + "_targets.volg", provenance);
    const auto weights = load_volume(base + "_weights.volg");
    const auto src = load_labels(base + "_source.volg");
    require(targets.shape() == weights.shape() && targets.shape() == src.shape(), "fused target files disagree in shape");
    FusedTargets f{targets.shape(), targets.voxel_size(),
                   std::vector<float>(targets.probs().begin(), targets.probs().end()),
                   std::vector<float>(weights.data().begin(), weights.data().end()), std::vector<Source>(src.labels().size())};
    for (std::size_t i = 0; i < f.source.size(); ++i) {
        const auto v = static_cast<std::uint8_t>(src.labels()[i]);
        require(v <= 1, "fused source volume must hold {0,1}");
        f.source[i] = static_cast<Source>(v);
    }
    f.validate();
    return f;
}

} // namespace pseudoseg
