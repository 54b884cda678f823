#include "pseudoseg/metrics.hpp"

#include "pseudoseg/error.hpp"

namespace pseudoseg {

std::vector<std::uint8_t> binarize(const ProbVolume& p, double thr)
{
    require(thr > 0.0 && thr < 1.0, "binarization threshold must be in (0,1)");
    const auto probs = p.probs();
    std::vector<std::uint8_t> mask(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) mask[i] = static_cast<double>(probs[i]) >= thr ? 1 : 0;
    return mask;
}

ConfusionCounts confusion(std::span<const std::uint8_t> pred, const LabelVolume& gt)
{
    const auto labels = gt.labels();
    require(pred.size() == labels.size(), "confusion: mask and ground truth differ in size");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (labels[i] == Label::unlabeled) throw InvalidArgument("confusion: ground truth has an unlabeled voxel");
        const bool g = labels[i] == Label::foreground;
        if (pred[i]) {
            ++(g ? c.tp : c.fp);
        } else {
            ++(g ? c.fn : c.tn);
        }
    }
    return c;
}

namespace {
double ratio(std::int64_t num, std::int64_t den)
{
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
} // namespace

double dice(const ConfusionCounts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }
double precision(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp); }
double recall(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }

std::vector<std::string> degenerate_flags(const ConfusionCounts& c)
{
    std::vector<std::string> f;
    if (2 * c.tp + c.fp + c.fn == 0) f.push_back("dice_undefined");
    if (c.tp + c.fp == 0) f.push_back("precision_undefined");
    if (c.tp + c.fn == 0) f.push_back("recall_undefined");
    return f;
}

std::string to_string(Scheme s)
{
    switch (s) {
    case Scheme::seg2d: return "seg2d";
    case Scheme::seg3d_sparse: return "seg3d_sparse";
    case Scheme::seg3d_pseudo: return "seg3d_pseudo";
    }
    return "?";
}

Scheme scheme_from_string(const std::string& s)
{
    if (s == "seg2d") return Scheme::seg2d;
    if (s == "seg3d_sparse") return Scheme::seg3d_sparse;
    if (s == "seg3d_pseudo") return Scheme::seg3d_pseudo;
    throw InvalidArgument("unknown scheme '" + s + "'");
}

bool MetricsReport::failed() const
{
    for (const auto& f : flags)
        if (f.starts_with("failed_")) return true;
    return false;
}

MetricsReport make_report(const Condition& condition, const ConfusionCounts& counts)
{
    return MetricsReport{condition, counts, dice(counts), precision(counts), recall(counts), degenerate_flags(counts)};
}

MetricsReport failed_report(const Condition& condition, const std::string& stage)
{
    MetricsReport r;
    r.condition = condition;
    r.flags.push_back("failed_" + stage);
    return r;
}

MetricsReport evaluate(const Condition& condition, const ProbVolume& pred, const LabelVolume& gt, double thr)
{
    require(pred.shape() == gt.shape(), "evaluate: prediction and ground truth differ in shape");
    return make_report(condition, confusion(binarize(pred, thr), gt));
}

} // namespace pseudoseg
