#include <cstring>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "pseudoseg/error.hpp"
#include "pseudoseg/patch.hpp"
#include "pseudoseg/phantom.hpp"
#include "pseudoseg/volg.hpp"
#include "support.hpp"

using namespace pseudoseg;
using namespace testing_support;

namespace {

// Hand-assembled VOLG file, independent of the library's encoder.
void write_raw_volg(const std::filesystem::path& p, const nlohmann::json& header, const std::vector<char>& payload)
{
    const std::string h = header.dump();
    const auto len = static_cast<std::uint32_t>(h.size());
    std::ofstream out(p, std::ios::binary);
    out.write("VOLG0001", 8);
    const unsigned char le[4] = {static_cast<unsigned char>(len), static_cast<unsigned char>(len >> 8),
                                 static_cast<unsigned char>(len >> 16), static_cast<unsigned char>(len >> 24)};
    out.write(reinterpret_cast<const char*>(le), 4);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

std::vector<char> f32_bytes(const std::vector<float>& v)
{
    std::vector<char> b(v.size() * 4);
    std::memcpy(b.data(), v.data(), b.size());
    return b;
}

} // namespace

TEST(Volg, ZeroVolumeRoundTripIsByteIdentical)
{
    TempDir dir("volg0");
    const Volume3D v({2, 2, 2}, {1, 1, 1}, std::vector<float>(8, 0.0f));
    save_volume(v, dir / "a.volg");
    const auto loaded = load_volume(dir / "a.volg");
    EXPECT_EQ(loaded, v);
    save_volume(loaded, dir / "b.volg");
    EXPECT_EQ(read_bytes(dir / "a.volg"), read_bytes(dir / "b.volg"));
}

TEST(Volg, RandomRoundTripAllDtypes)
{
    TempDir dir("volgrt");
    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
        const auto dtype = static_cast<DType>(i % 3);
        const auto v = random_volume(rng, dtype);
        const auto path = dir / ("v" + std::to_string(i) + ".volg");
        save_volume(v, path);
        const auto back = load_volume(path);
        ASSERT_EQ(back.shape(), v.shape());
        ASSERT_EQ(back.voxel_size(), v.voxel_size());
        ASSERT_EQ(back.dtype(), dtype);
        ASSERT_EQ(std::memcmp(back.data().data(), v.data().data(), v.data().size() * sizeof(float)), 0);
    }
}

TEST(Volg, LayoutMatchesFormat)
{
    TempDir dir("volglayout");
    const Volume3D v({1, 2, 3}, {2.0, 0.88, 0.88}, {0, 1, 2, 3, 4, 5}, DType::u16);
    save_volume(v, dir / "v.volg");
    const auto bytes = read_bytes(dir / "v.volg");
    ASSERT_GE(bytes.size(), 12u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "VOLG0001");
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t len = u[8] | (u[9] << 8) | (u[10] << 16) | (static_cast<std::uint32_t>(u[11]) << 24);
    const auto header = nlohmann::json::parse(std::string(bytes.begin() + 12, bytes.begin() + 12 + len));
    EXPECT_EQ(header.at("shape"), nlohmann::json({1, 2, 3}));
    EXPECT_EQ(header.at("dtype"), "u16");
    EXPECT_EQ(header.at("kind"), "intensity");
    ASSERT_EQ(bytes.size(), 12 + len + 6 * 2);
    for (int i = 0; i < 6; ++i) {
        EXPECT_EQ(u[12 + len + 2 * i], i);
        EXPECT_EQ(u[12 + len + 2 * i + 1], 0);
    }
}

TEST(Volg, RepeatedSavesAreDeterministic)
{
    TempDir dir("volgdet");
    Rng rng(3);
    const auto v = random_volume(rng);
    save_volume(v, dir / "a.volg");
    save_volume(v, dir / "b.volg");
    EXPECT_EQ(read_bytes(dir / "a.volg"), read_bytes(dir / "b.volg"));
}

TEST(Volg, HeaderPayloadMismatchIsRejected)
{
    TempDir dir("volgbad");
    const nlohmann::json h{{"shape", {10, 1, 1}}, {"voxel_size", {1, 1, 1}}, {"dtype", "f32"}, {"kind", "intensity"}};
    write_raw_volg(dir / "short.volg", h, f32_bytes(std::vector<float>(9, 1.0f)));
    EXPECT_THROW(load_volume(dir / "short.volg"), InvalidArgument);
    write_raw_volg(dir / "ok.volg", h, f32_bytes(std::vector<float>(10, 1.0f)));
    EXPECT_NO_THROW(load_volume(dir / "ok.volg"));
}

TEST(Volg, BadFilesAreRejected)
{
    TempDir dir("volgbad2");
    EXPECT_THROW(load_volume(dir / "missing.volg"), IoError);

    nlohmann::json h{{"shape", {1, 1, 2}}, {"voxel_size", {1, 1, 1}}, {"dtype", "f64"}, {"kind", "intensity"}};
    write_raw_volg(dir / "dtype.volg", h, std::vector<char>(16));
    EXPECT_THROW(load_volume(dir / "dtype.volg"), InvalidArgument);

    h["dtype"] = "f32";
    write_raw_volg(dir / "nan.volg", h, f32_bytes({1.0f, std::nanf("")}));
    EXPECT_THROW(load_volume(dir / "nan.volg"), InvalidArgument);

    nlohmann::json lh{{"shape", {1, 1, 2}}, {"voxel_size", {1, 1, 1}}, {"dtype", "u8"}, {"kind", "labels"}};
    write_raw_volg(dir / "lab.volg", lh, {0, 3});
    EXPECT_THROW(load_labels(dir / "lab.volg"), InvalidArgument);
}

TEST(Volg, UnwritableDestinationFails)
{
    const Volume3D v({1, 1, 1}, {1, 1, 1}, {1.0f});
    EXPECT_THROW(save_volume(v, "/proc/pseudoseg_forbidden/v.volg"), IoError);
}

TEST(Volg, ProvenanceSurvivesRoundTrip)
{
    TempDir dir("volgprov");
    const Volume3D v({1, 1, 2}, {1, 1, 1}, {0.25f, 0.5f});
    const Provenance p{"abc123", "generate", 42, {{"volume", "train0"}}};
    save_volume(v, dir / "v.volg", p);
    Provenance q;
    EXPECT_EQ(load_volume(dir / "v.volg", &q), v);
    EXPECT_EQ(q, p);
}

TEST(Volg, DefaultPhantomGeometry)
{
    TempDir dir("volgphantom");
    const auto ph = generate_phantom(PhantomConfig{});
    save_volume(ph.image, dir / "p.volg");
    const auto v = load_volume(dir / "p.volg");
    EXPECT_EQ(v.shape(), (Shape3{50, 114, 114}));
    EXPECT_EQ(v.voxel_size(), (VoxelSize{2.0, 0.88, 0.88}));
}

TEST(Volume, InvariantsAreEnforced)
{
    EXPECT_THROW(Volume3D({2, 2, 2}, {1, 1, 1}, std::vector<float>(7)), InvalidArgument);
    EXPECT_THROW(Volume3D({1, 1, 1}, {0, 1, 1}, std::vector<float>(1)), InvalidArgument);
    EXPECT_THROW(Volume3D({1, 1, 1}, {1, 1, 1}, {INFINITY}), InvalidArgument);
    EXPECT_THROW(ProbVolume({1, 1, 1}, {1, 1, 1}, {1.5f}), InvalidArgument);
}

TEST(ExtractPatch, InteriorOfConstantVolume)
{
    const Volume3D v({6, 6, 6}, {1, 1, 1}, std::vector<float>(216, 5.0f));
    const auto p = extract_patch(v, {{1, 1, 1}, {3, 3, 3}}, PadMode::zero);
    for (auto x : p.values) EXPECT_EQ(x, 5.0f);
    for (auto m : p.valid) EXPECT_EQ(m, 1);
}

TEST(ExtractPatch, ZeroPaddingFlagsOutsideVoxels)
{
    const Volume3D v({4, 4, 4}, {1, 1, 1}, std::vector<float>(64, 3.0f));
    const auto p = extract_patch(v, {{-1, 0, 0}, {2, 2, 2}}, PadMode::zero);
    for (int k = 0; k < 4; ++k) {
        EXPECT_EQ(p.values[k], 0.0f);
        EXPECT_EQ(p.valid[k], 0);
    }
    for (int k = 4; k < 8; ++k) {
        EXPECT_EQ(p.values[k], 3.0f);
        EXPECT_EQ(p.valid[k], 1);
    }
}

TEST(ExtractPatch, ReflectMatchesMirroredIndexOracle)
{
    Rng rng(11);
    const auto v = random_volume(rng, DType::f32, 7);
    const auto s = v.shape();
    // Mirror by repeated folding, the way one would do it by hand.
    auto mirror = [](std::int64_t i, std::int64_t n) {
        if (n == 1) return std::int64_t{0};
        while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
        return i;
    };
    for (int trial = 0; trial < 20; ++trial) {
        const PatchSpec spec{{static_cast<std::int64_t>(rng.below(5)) - 4, static_cast<std::int64_t>(rng.below(5)) - 4,
                              static_cast<std::int64_t>(rng.below(5)) - 4},
                             {6, 7, 8}};
        const auto p = extract_patch(v, spec, PadMode::reflect);
        std::size_t k = 0;
        for (std::int64_t z = 0; z < 6; ++z)
            for (std::int64_t y = 0; y < 7; ++y)
                for (std::int64_t x = 0; x < 8; ++x, ++k) {
                    const auto gz = spec.origin[0] + z, gy = spec.origin[1] + y, gx = spec.origin[2] + x;
                    ASSERT_EQ(p.values[k], v.at(mirror(gz, s.z), mirror(gy, s.y), mirror(gx, s.x)));
                    ASSERT_EQ(p.valid[k], s.contains(gz, gy, gx) ? 1 : 0);
                }
    }
}

TEST(ExtractPatch, EntirelyOutsideIsRejected)
{
    const Volume3D v({4, 4, 4}, {1, 1, 1});
    EXPECT_THROW(extract_patch(v, {{4, 0, 0}, {2, 2, 2}}), InvalidArgument);
    EXPECT_THROW(extract_patch(v, {{0, -2, 0}, {2, 2, 2}}), InvalidArgument);
}

TEST(FusePredictions, OverlappingConstantsAverage)
{
    const Shape3 s{3, 3, 3};
    const std::vector<PatchPrediction> p{{{{0, 0, 0}, s}, std::vector<float>(27, 0.3f)},
                                         {{{0, 0, 0}, s}, std::vector<float>(27, 0.5f)}};
    const auto out = fuse_predictions(p, s);
    for (auto v : out.probs()) EXPECT_NEAR(v, 0.4f, 1e-7);
}

TEST(FusePredictions, SinglePatchIsIdentity)
{
    Rng rng(5);
    const Shape3 s{2, 3, 4};
    std::vector<float> vals(24);
    for (auto& v : vals) v = static_cast<float>(rng.uniform());
    for (auto blend : {BlendMode::uniform, BlendMode::hann}) {
        const auto out = fuse_predictions(std::vector<PatchPrediction>{{{{0, 0, 0}, s}, vals}}, s, blend);
        for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_NEAR(out.probs()[i], vals[i], 1e-7);
    }
}

TEST(FusePredictions, MatchesAccumulationOracleWithHalfOverlap)
{
    Rng rng(9);
    const Shape3 shape{9, 10, 11};
    const Shape3 patch{4, 4, 4};
    const auto tiles = tile_volume(shape, patch, 0.5);
    std::vector<PatchPrediction> preds;
    for (const auto& t : tiles) {
        std::vector<float> v(64);
        for (auto& x : v) x = static_cast<float>(rng.uniform());
        preds.push_back({t, v});
    }
    for (auto blend : {BlendMode::uniform, BlendMode::hann}) {
        const auto out = fuse_predictions(preds, shape, blend);
        // Raised cosine evaluated at interior nodes i+1 of n+1 intervals.
        auto w1 = [&](std::int64_t i) {
            return blend == BlendMode::uniform ? 1.0 : 0.5 - 0.5 * std::cos(2 * M_PI * (i + 1) / 5.0);
        };
        for (std::int64_t z = 0; z < shape.z; ++z)
            for (std::int64_t y = 0; y < shape.y; ++y)
                for (std::int64_t x = 0; x < shape.x; ++x) {
                    double num = 0, den = 0, lo = 1, hi = 0;
                    for (const auto& p : preds) {
                        const auto dz = z - p.spec.origin[0], dy = y - p.spec.origin[1], dx = x - p.spec.origin[2];
                        if (dz < 0 || dy < 0 || dx < 0 || dz >= 4 || dy >= 4 || dx >= 4) continue;
                        const double w = w1(dz) * w1(dy) * w1(dx);
                        const double val = p.probs[static_cast<std::size_t>((dz * 4 + dy) * 4 + dx)];
                        num += w * val;
                        den += w;
                        lo = std::min(lo, val);
                        hi = std::max(hi, val);
                    }
                    ASSERT_GT(den, 0);
                    const double got = out.at(z, y, x);
                    ASSERT_NEAR(got, num / den, 1e-6);
                    ASSERT_GE(got, lo - 1e-6);
                    ASSERT_LE(got, hi + 1e-6);
                }
    }
}

TEST(FusePredictions, NonOverlappingTilingReconstructsExactly)
{
    Rng rng(21);
    const Volume3D vol({8, 12, 10}, {1, 1, 1}, [&] {
        std::vector<float> d(960);
        for (auto& x : d) x = static_cast<float>(rng.uniform());
        return d;
    }());
    std::vector<PatchPrediction> preds;
    for (std::int64_t z = 0; z < 8; z += 4)
        for (std::int64_t y = 0; y < 12; y += 4)
            for (std::int64_t x = 0; x < 10; x += 5) {
                const PatchSpec spec{{z, y, x}, {4, 4, 5}};
                preds.push_back({spec, extract_patch(vol, spec).values});
            }
    const auto out = fuse_predictions(preds, vol.shape());
    for (std::size_t i = 0; i < 960; ++i) ASSERT_EQ(out.probs()[i], vol.data()[i]);
}

TEST(FusePredictions, UncoveredVoxelAndBadPatchAreErrors)
{
    const Shape3 s{2, 2, 2};
    const std::vector<PatchPrediction> part{{{{0, 0, 0}, {1, 2, 2}}, std::vector<float>(4, 0.5f)}};
    EXPECT_THROW(fuse_predictions(part, s), InvalidArgument);
    const std::vector<PatchPrediction> bad{{{{0, 0, 0}, s}, std::vector<float>(7, 0.5f)}};
    EXPECT_THROW(fuse_predictions(bad, s), InvalidArgument);
}

TEST(Tiling, CoversEveryVoxel)
{
    for (double overlap : {0.0, 0.25, 0.5, 0.9}) {
        const auto st = tile_starts(50, 32, overlap);
        EXPECT_EQ(st.front(), 0);
        EXPECT_EQ(st.back(), 18);
        for (std::size_t i = 1; i < st.size(); ++i) EXPECT_LE(st[i] - st[i - 1], 32);
    }
    EXPECT_EQ(tile_starts(20, 32, 0.25), std::vector<std::int64_t>{0});
}
