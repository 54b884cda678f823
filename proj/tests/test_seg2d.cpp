#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "pseudoseg/error.hpp"
#include "pseudoseg/phantom.hpp"
#include "pseudoseg/seg2d.hpp"
#include "support.hpp"

using namespace pseudoseg;
using namespace testing_support;

namespace {

Seg2DSpec small_spec()
{
    Seg2DSpec s;
    s.conv_channels = {4, 8, 8};
    s.fc_sizes = {16, 1};
    s.input_window = 15;
    s.pool_window = 3;
    return s;
}

HyperParams quick_hyper(std::int64_t epochs = 4)
{
    HyperParams h;
    h.lr = 1e-3;
    h.batch_size = 16;
    h.patches_per_epoch = 128;
    h.epochs = epochs;
    h.patience = 0;
    h.seed = 7;
    return h;
}

Phantom small_phantom(std::uint64_t seed)
{
    PhantomConfig c;
    c.shape = {16, 16, 16};
    c.n_cells = 3;
    c.radius_min_um = 2.5;
    c.radius_max_um = 4.0;
    c.seed = seed;
    return generate_phantom(c);
}

Volume3D noise_volume(Shape3 s, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<float> d(static_cast<std::size_t>(s.voxels()));
    for (auto& v : d) v = static_cast<float>(rng.uniform());
    return Volume3D(s, {1, 1, 1}, std::move(d));
}

double slice_bce(const ProbVolume& p, const LabelVolume& gt, std::int64_t z)
{
    double sum = 0;
    const auto s = gt.shape();
    for (std::int64_t y = 0; y < s.y; ++y)
        for (std::int64_t x = 0; x < s.x; ++x) {
            const double q = std::clamp(static_cast<double>(p.at(z, y, x)), 1e-7, 1 - 1e-7);
            sum += gt.at(z, y, x) == Label::foreground ? -std::log(q) : -std::log(1 - q);
        }
    return sum / static_cast<double>(s.y * s.x);
}

bool same_params(const std::vector<nn::Param<float>>& a, const std::vector<nn::Param<float>>& b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].value.dims() != b[i].value.dims()) return false;
        for (std::size_t k = 0; k < a[i].value.size(); ++k)
            if (a[i].value[k] != b[i].value[k]) return false;
    }
    return true;
}

} // namespace

TEST(Seg2DBuild, SameSeedSameParameters)
{
    const auto a = build_seg2d(Seg2DSpec{}, 42);
    const auto b = build_seg2d(Seg2DSpec{}, 42);
    const auto c = build_seg2d(Seg2DSpec{}, 43);
    EXPECT_TRUE(same_params(a.net.params(), b.net.params()));
    EXPECT_FALSE(same_params(a.net.params(), c.net.params()));
}

TEST(Seg2DBuild, DefaultSpecHasFiveWeightLayers)
{
    const auto m = build_seg2d(Seg2DSpec{}, 1);
    EXPECT_EQ(m.net.parameterized_layers(), 5u);
    EXPECT_TRUE(all_finite(m.net.params()));
}

TEST(Seg2DBuild, FourConvLayersRejected)
{
    Seg2DSpec s;
    s.conv_channels = {16, 32, 64, 64};
    EXPECT_THROW(build_seg2d(s, 1), InvalidArgument);
    s = Seg2DSpec{};
    s.fc_sizes = {128, 64, 1};
    EXPECT_THROW(build_seg2d(s, 1), InvalidArgument);
}

TEST(Seg2DTrain, ConstantLabelSliceReachesLowLoss)
{
    const Shape3 s{3, 20, 20};
    const auto img = noise_volume(s, 3);
    LabelVolume labels(s, {1, 1, 1}, Label::unlabeled);
    for (std::int64_t y = 0; y < s.y; ++y)
        for (std::int64_t x = 0; x < s.x; ++x) labels.at(1, y, x) = Label::foreground;
    auto model = build_seg2d(small_spec(), 5);
    const LabeledVolume lv{&img, &labels};
    auto h = quick_hyper(40);
    h.lr = 3e-3;
    const auto hist = train_seg2d(model, std::span(&lv, 1), h);
    ASSERT_FALSE(hist.epoch_loss.empty());
    EXPECT_LT(hist.epoch_loss.back(), 0.01);
}

TEST(Seg2DTrain, NoLabeledSlicesIsAnError)
{
    const Shape3 s{4, 16, 16};
    const auto img = noise_volume(s, 1);
    const LabelVolume labels(s, {1, 1, 1}, Label::unlabeled);
    auto model = build_seg2d(small_spec(), 1);
    const LabeledVolume lv{&img, &labels};
    EXPECT_THROW(train_seg2d(model, std::span(&lv, 1), quick_hyper()), InvalidArgument);
}

TEST(Seg2DTrain, HistoryIsReproducible)
{
    const auto ph = small_phantom(11);
    const auto sparse = sparsify_labels(ph.labels, evenly_spaced_plan(16, 2));
    const LabeledVolume lv{&ph.image, &sparse};
    auto m1 = build_seg2d(small_spec(), 9);
    auto m2 = build_seg2d(small_spec(), 9);
    const auto h1 = train_seg2d(m1, std::span(&lv, 1), quick_hyper());
    const auto h2 = train_seg2d(m2, std::span(&lv, 1), quick_hyper());
    EXPECT_EQ(h1.epoch_loss, h2.epoch_loss);
    for (double l : h1.epoch_loss) EXPECT_TRUE(std::isfinite(l));
    EXPECT_TRUE(same_params(m1.net.params(), m2.net.params()));
}

TEST(Seg2DTrain, HeldOutSliceLossDecreases)
{
    const auto ph = small_phantom(21);
    const auto plan = evenly_spaced_plan(16, 4);
    const auto sparse = sparsify_labels(ph.labels, plan);
    // A slice between two labeled ones that carries both classes.
    std::int64_t held = -1;
    for (std::int64_t z = 0; z < 16 && held < 0; ++z) {
        if (std::ranges::find(plan.labeled_slices, z) != plan.labeled_slices.end()) continue;
        std::int64_t fg = 0;
        for (std::int64_t y = 0; y < 16; ++y)
            for (std::int64_t x = 0; x < 16; ++x) fg += ph.labels.at(z, y, x) == Label::foreground;
        if (fg > 10) held = z;
    }
    ASSERT_GE(held, 0);
    const LabeledVolume lv{&ph.image, &sparse};
    auto model = build_seg2d(small_spec(), 4);
    model.norm = IntensityNorm::fit({&ph.image});
    const double before = slice_bce(predict_volume_2d(model, ph.image), ph.labels, held);
    train_seg2d(model, std::span(&lv, 1), quick_hyper(8));
    const double after = slice_bce(predict_volume_2d(model, ph.image), ph.labels, held);
    EXPECT_LT(after, before);
}

TEST(Seg2DTrain, NeverReadsUnlabeledVoxels)
{
    const auto ph = small_phantom(5);
    const auto sparse = sparsify_labels(ph.labels, evenly_spaced_plan(16, 3));
    const LabeledVolume lv{&ph.image, &sparse};
    auto model = build_seg2d(small_spec(), 2);
    std::int64_t seen = 0;
    bool bad = false;
    train_seg2d(model, std::span(&lv, 1), quick_hyper(2),
                [&](std::size_t vol, std::int64_t z, std::int64_t y, std::int64_t x, Label l) {
                    ++seen;
                    if (vol != 0 || l == Label::unlabeled || sparse.at(z, y, x) != l) bad = true;
                });
    EXPECT_FALSE(bad);
    EXPECT_EQ(seen, 2 * 128);
}

TEST(Seg2DPredict, ConstantVolumeGivesConstantSlices)
{
    const Shape3 s{3, 12, 17};
    std::vector<float> d(static_cast<std::size_t>(s.voxels()));
    for (std::int64_t z = 0; z < s.z; ++z)
        std::fill_n(d.begin() + z * s.y * s.x, s.y * s.x, static_cast<float>(z) * 0.7f - 0.3f);
    const Volume3D v(s, {1, 1, 1}, std::move(d));
    const auto m = build_seg2d(small_spec(), 3);
    const auto p = predict_volume_2d(m, v);
    ASSERT_EQ(p.shape(), s);
    for (std::int64_t z = 0; z < s.z; ++z)
        for (std::int64_t y = 0; y < s.y; ++y)
            for (std::int64_t x = 0; x < s.x; ++x) EXPECT_FLOAT_EQ(p.at(z, y, x), p.at(z, 0, 0));
}

TEST(Seg2DPredict, OutputWithinUnitInterval)
{
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        auto v = random_volume(rng, DType::f32, 12);
        auto m = build_seg2d(small_spec(), trial);
        m.norm = IntensityNorm::fit({&v});
        const auto p = predict_volume_2d(m, v);
        ASSERT_EQ(p.shape(), v.shape());
        for (float q : p.probs()) {
            EXPECT_GE(q, 0.0f);
            EXPECT_LE(q, 1.0f);
        }
    }
}

TEST(Seg2DPredict, SlicesAreIndependent)
{
    const auto ph = small_phantom(31);
    auto m = build_seg2d(small_spec(), 6);
    m.norm = IntensityNorm::fit({&ph.image});
    const auto full = predict_volume_2d(m, ph.image);
    const auto s = ph.image.shape();
    const auto plane = static_cast<std::size_t>(s.y * s.x);

    for (std::int64_t k : {0, 7, 15}) {
        std::vector<float> one(ph.image.data().begin() + k * plane, ph.image.data().begin() + (k + 1) * plane);
        const auto single = predict_volume_2d(m, Volume3D({1, s.y, s.x}, ph.image.voxel_size(), std::move(one)));
        for (std::size_t i = 0; i < plane; ++i) ASSERT_EQ(single.probs()[i], full.probs()[k * plane + i]);
    }

    std::vector<std::int64_t> perm(static_cast<std::size_t>(s.z));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(2);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<float> shuffled(ph.image.data().size());
    for (std::int64_t z = 0; z < s.z; ++z)
        std::copy_n(ph.image.data().begin() + perm[z] * plane, plane, shuffled.begin() + z * plane);
    const auto p2 = predict_volume_2d(m, Volume3D(s, ph.image.voxel_size(), std::move(shuffled)));
    for (std::int64_t z = 0; z < s.z; ++z)
        for (std::size_t i = 0; i < plane; ++i) ASSERT_EQ(p2.probs()[z * plane + i], full.probs()[perm[z] * plane + i]);
}

TEST(Seg2DPredict, DenseInferenceMatchesWindowClassification)
{
    const auto ph = small_phantom(17);
    auto m = build_seg2d(small_spec(), 12);
    m.norm = IntensityNorm::fit({&ph.image});
    const auto dense = predict_volume_2d(m, ph.image);
    const std::int64_t w = m.net.spec().input_window;
    Rng rng(4);
    for (int i = 0; i < 40; ++i) {
        // Include border pixels so the reflect padding is exercised.
        const auto z = static_cast<std::int64_t>(rng.below(16));
        const auto y = i < 4 ? (i % 2) * 15 : static_cast<std::int64_t>(rng.below(16));
        const auto x = i < 4 ? (i / 2) * 15 : static_cast<std::int64_t>(rng.below(16));
        const auto win = extract_window(ph.image, m.norm, z, y, x, w);
        Tensor<float> t({1, 1, w, w});
        std::copy(win.begin(), win.end(), t.data().begin());
        const double logit = m.net.forward(t)[0];
        const double p = 1.0 / (1.0 + std::exp(-logit));
        EXPECT_NEAR(dense.at(z, y, x), p, 1e-5) << z << "," << y << "," << x;
    }
}

TEST(Seg2DCheckpoint, RoundTrip)
{
    TempDir dir("seg2d_ckpt");
    auto m = build_seg2d(small_spec(), 77);
    m.norm = IntensityNorm{0.25, 3.0};
    m.epoch = 5;
    save_checkpoint(to_checkpoint(m), dir / "m.ckpt");
    const auto back = from_checkpoint_2d(load_checkpoint(dir / "m.ckpt"));
    EXPECT_EQ(back.net.spec(), m.net.spec());
    EXPECT_EQ(back.norm, m.norm);
    EXPECT_EQ(back.seed, m.seed);
    EXPECT_EQ(back.epoch, 5);
    EXPECT_TRUE(same_params(back.net.params(), m.net.params()));
    auto c = to_checkpoint(m);
    c.model = "seg3d";
    EXPECT_THROW(from_checkpoint_2d(c), InvalidArgument);
}
