#include "pseudoseg/config.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "pseudoseg/error.hpp"

namespace pseudoseg {

using nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(PseudoMode, {{PseudoMode::hard, "hard"}, {PseudoMode::soft, "soft"}})
NLOHMANN_JSON_SERIALIZE_ENUM(BlendMode, {{BlendMode::uniform, "uniform"}, {BlendMode::hann, "hann"}})

void to_json(json& j, const SweepConfig& s)
{
    std::vector<std::string> schemes;
    for (auto sc : s.schemes) schemes.push_back(to_string(sc));
    j = json{{"slice_counts", s.slice_counts}, {"seeds", s.seeds},
             {"schemes", schemes},             {"threshold", s.threshold},
             {"pseudo_mode", s.pseudo_mode},   {"pseudo_threshold", s.pseudo_threshold},
             {"tile_overlap", s.tile_overlap}, {"blend", s.blend}};
}

void from_json(const json& j, SweepConfig& s)
{
    s.slice_counts = j.at("slice_counts").get<std::vector<std::int64_t>>();
    s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.schemes.clear();
    for (const auto& name : j.at("schemes").get<std::vector<std::string>>()) s.schemes.push_back(scheme_from_string(name));
    s.threshold = j.at("threshold").get<double>();
    s.pseudo_mode = j.at("pseudo_mode").get<PseudoMode>();
    s.pseudo_threshold = j.at("pseudo_threshold").get<double>();
    s.tile_overlap = j.at("tile_overlap").get<double>();
    s.blend = j.at("blend").get<BlendMode>();
}

void to_json(json& j, const ExperimentConfig& c)
{
    j = json{{"phantoms", {{"train", c.train_phantoms}, {"test", c.test_phantom}}},
             {"sweep", c.sweep},
             {"seg2d", {{"spec", c.seg2d_spec}, {"hyper", c.seg2d_hyper}}},
             {"seg3d", {{"spec", c.seg3d_spec}, {"hyper", c.seg3d_hyper}}},
             {"alphas", c.alphas},
             {"output_dir", c.output_dir},
             {"global_seed", c.global_seed}};
}

namespace {

template <typename T>
T section(const json& j, const std::string& path)
{
    const json* node = &j;
    std::string at;
    std::istringstream parts(path);
    for (std::string key; std::getline(parts, key, '.');) {
        at += at.empty() ? key : "." + key;
        if (!node->is_object() || !node->contains(key)) throw ConfigError("config: missing key '" + at + "'");
        node = &(*node)[key];
    }
    try {
        return node->get<T>();
    } catch (const json::out_of_range& e) {
        // nlohmann reports a missing member as: ... key 'name' not found
        const std::string what = e.what();
        const auto a = what.find("key '");
        const auto b = a == std::string::npos ? a : what.find('\'', a + 5);
        if (e.id == 403 && b != std::string::npos)
            throw ConfigError("config: missing key '" + path + "." + what.substr(a + 5, b - a - 5) + "'");
        throw ConfigError("config: invalid value under '" + path + "': " + what);
    } catch (const json::exception& e) {
        throw ConfigError("config: invalid value under '" + path + "': " + e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError("config: invalid value under '" + path + "': " + e.what());
    }
}

std::string hex(const unsigned char* p, unsigned n)
{
    std::ostringstream s;
    for (unsigned i = 0; i < n; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(p[i]);
    return s.str();
}

} // namespace

ExperimentConfig config_from_json(const json& j)
{
    ExperimentConfig c;
    c.train_phantoms = section<std::vector<PhantomConfig>>(j, "phantoms.train");
    c.test_phantom = section<PhantomConfig>(j, "phantoms.test");
    c.sweep = section<SweepConfig>(j, "sweep");
    c.seg2d_spec = section<Seg2DSpec>(j, "seg2d.spec");
    c.seg2d_hyper = section<HyperParams>(j, "seg2d.hyper");
    c.seg3d_spec = section<Seg3DSpec>(j, "seg3d.spec");
    c.seg3d_hyper = section<HyperParams>(j, "seg3d.hyper");
    c.alphas = section<std::vector<double>>(j, "alphas");
    c.output_dir = section<std::string>(j, "output_dir");
    c.global_seed = section<std::uint64_t>(j, "global_seed");
    c.validate();
    return c;
}

void ExperimentConfig::validate() const
{
    auto check = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("config: " + msg);
    };
    auto guarded = [](const std::string& key, auto&& fn) {
        try {
            fn();
        } catch (const InvalidArgument& e) {
            throw ConfigError("config: invalid '" + key + "': " + e.what());
        }
    };
    check(train_phantoms.size() == 3, "'phantoms.train' must list exactly 3 volumes");
    for (std::size_t i = 0; i < train_phantoms.size(); ++i)
        guarded("phantoms.train[" + std::to_string(i) + "]", [&] { train_phantoms[i].validate(); });
    guarded("phantoms.test", [&] { test_phantom.validate(); });
    const auto depth = train_phantoms.front().shape.z;
    for (const auto& p : train_phantoms) check(p.shape.z == depth, "train phantoms must share their depth");
    check(!sweep.slice_counts.empty(), "'sweep.slice_counts' is empty");
    for (auto n : sweep.slice_counts)
        check(n >= 1 && n <= depth, "'sweep.slice_counts' entry " + std::to_string(n) + " outside [1, depth]");
    check(!sweep.seeds.empty(), "'sweep.seeds' is empty");
    check(!sweep.schemes.empty(), "'sweep.schemes' is empty");
    check(sweep.threshold > 0 && sweep.threshold < 1, "'sweep.threshold' must be in (0,1)");
    check(sweep.pseudo_threshold > 0 && sweep.pseudo_threshold < 1, "'sweep.pseudo_threshold' must be in (0,1)");
    check(sweep.tile_overlap >= 0 && sweep.tile_overlap < 1, "'sweep.tile_overlap' must be in [0,1)");
    guarded("seg2d.spec", [&] { seg2d_spec.validate(); });
    guarded("seg2d.hyper", [&] { seg2d_hyper.validate(); });
    guarded("seg3d.spec", [&] { seg3d_spec.validate(); });
    guarded("seg3d.hyper", [&] { seg3d_hyper.validate(); });
    for (double a : alphas) check(std::isfinite(a) && a > 0, "'alphas' entries must be finite and > 0");
    check(!output_dir.empty(), "'output_dir' is empty");
}

std::string sha256_hex(const std::string& bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned n = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr) != 1)
        throw Error("sha256: digest computation failed");
    return hex(md, n);
}

std::string ExperimentConfig::hash() const
{
    json j = *this;
    j.erase("output_dir");
    return sha256_hex(j.dump());
}

ExperimentConfig ExperimentConfig::defaults()
{
    ExperimentConfig c;
    for (std::uint64_t i = 0; i < 3; ++i) {
        PhantomConfig p;
        p.seed = 101 + i;
        c.train_phantoms.push_back(p);
    }
    c.test_phantom.seed = 104;

    c.seg2d_hyper.lr = 1e-3;
    c.seg2d_hyper.batch_size = 64;
    c.seg2d_hyper.patches_per_epoch = 2048;
    c.seg2d_hyper.epochs = 20;
    c.seg2d_hyper.patience = 0;

    c.seg3d_spec.base_channels = 8;
    c.seg3d_hyper.lr = 1e-3;
    c.seg3d_hyper.batch_size = 2;
    c.seg3d_hyper.patches_per_epoch = 16;
    c.seg3d_hyper.epochs = 14;
    c.seg3d_hyper.patience = 0;
    c.seg3d_hyper.fg_bias = 0.5;
    return c;
}

ExperimentConfig ExperimentConfig::smoke()
{
    ExperimentConfig c;
    PhantomConfig p;
    p.shape = {16, 16, 16};
    p.n_cells = 3;
    p.radius_min_um = 2.5;
    p.radius_max_um = 4.0;
    for (std::uint64_t i = 0; i < 3; ++i) {
        p.seed = 201 + i;
        c.train_phantoms.push_back(p);
    }
    p.seed = 204;
    c.test_phantom = p;

    c.sweep.slice_counts = {1, 2, 4, 7, 16};
    c.sweep.seeds = {1, 2};

    c.seg2d_spec.conv_channels = {8, 16, 16};
    c.seg2d_spec.fc_sizes = {32, 1};
    c.seg2d_spec.input_window = 15;
    c.seg2d_spec.pool_window = 3;
    c.seg2d_hyper.batch_size = 32;
    c.seg2d_hyper.patches_per_epoch = 512;
    c.seg2d_hyper.epochs = 20;
    c.seg2d_hyper.patience = 0;

    c.seg3d_spec.base_channels = 4;
    c.seg3d_spec.patch_shape = {16, 16, 16};
    c.seg3d_hyper.lr = 1e-3;
    c.seg3d_hyper.batch_size = 2;
    c.seg3d_hyper.patches_per_epoch = 8;
    c.seg3d_hyper.epochs = 80;
    c.seg3d_hyper.patience = 0;

    c.output_dir = "runs/smoke";
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

void save_config(const ExperimentConfig& c, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config " + path.string());
    out << json(c).dump(2) << '\n';
    if (!out) throw IoError("failed writing config " + path.string());
}

} // namespace pseudoseg
