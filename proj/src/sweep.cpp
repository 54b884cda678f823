#include "pseudoseg/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "pseudoseg/error.hpp"
#include "pseudoseg/rng.hpp"

namespace pseudoseg {

PhantomSet generate_phantoms(const ExperimentConfig& cfg)
{
    PhantomSet s;
    for (const auto& p : cfg.train_phantoms) s.train.push_back(generate_phantom(p));
    s.test = generate_phantom(cfg.test_phantom);
    return s;
}

ConditionSeeds condition_seeds(const ExperimentConfig& cfg, std::uint64_t seed)
{
    const auto base = derive_seed(cfg.global_seed, seed);
    return {derive_seed(base, 1), derive_seed(base, 2), derive_seed(base, 3), derive_seed(base, 4)};
}

std::vector<LabelVolume> sparse_train_labels(const PhantomSet& phantoms, std::int64_t slices)
{
    std::vector<LabelVolume> out;
    for (const auto& p : phantoms.train)
        out.push_back(sparsify_labels(p.labels, evenly_spaced_plan(p.labels.shape().z, slices)));
    return out;
}

ModelState2D stage_train2d(const ExperimentConfig& cfg, const PhantomSet& phantoms,
                           const std::vector<LabelVolume>& sparse, const ConditionKey& key)
{
    require(sparse.size() == phantoms.train.size(), "train2d: one label volume per training phantom expected");
    const auto seeds = condition_seeds(cfg, key.seed);
    auto model = build_seg2d(cfg.seg2d_spec, seeds.seg2d_init);
    auto hyper = cfg.seg2d_hyper;
    hyper.seed = derive_seed(seeds.seg2d_train, cfg.seg2d_hyper.seed);
    std::vector<LabeledVolume> vols;
    for (std::size_t i = 0; i < sparse.size(); ++i) vols.push_back({&phantoms.train[i].image, &sparse[i]});
    train_seg2d(model, vols, hyper);
    return model;
}

std::vector<ProbVolume> stage_predict2d(const ModelState2D& model, const PhantomSet& phantoms)
{
    std::vector<ProbVolume> out;
    for (const auto& p : phantoms.train) out.push_back(predict_volume_2d(model, p.image));
    return out;
}

std::vector<FusedTargets> stage_fuse(const ExperimentConfig& cfg, const std::vector<ProbVolume>& probs,
                                     const std::vector<LabelVolume>& sparse, Alpha alpha)
{
    require(probs.size() == sparse.size(), "fuse: one probability volume per label volume expected");
    std::vector<FusedTargets> out;
    for (std::size_t i = 0; i < sparse.size(); ++i)
        out.push_back(fuse(sparse[i], make_pseudo_labels(probs[i], sparse[i], cfg.sweep.pseudo_mode, cfg.sweep.pseudo_threshold),
                           alpha));
    return out;
}

ModelState3D stage_train3d(const ExperimentConfig& cfg, const PhantomSet& phantoms,
                           const std::vector<FusedTargets>& fused, const ConditionKey& key)
{
    require(fused.size() == phantoms.train.size(), "train3d: one fused target set per training phantom expected");
    const auto seeds = condition_seeds(cfg, key.seed);
    auto model = build_seg3d(cfg.seg3d_spec, seeds.seg3d_init);
    auto hyper = cfg.seg3d_hyper;
    hyper.seed = derive_seed(seeds.seg3d_train, cfg.seg3d_hyper.seed);
    std::vector<FusedVolume> vols;
    for (std::size_t i = 0; i < fused.size(); ++i) vols.push_back({&phantoms.train[i].image, &fused[i]});
    train_seg3d(model, vols, hyper);
    return model;
}

namespace {

bool wants(const ExperimentConfig& cfg, Scheme s)
{
    return std::find(cfg.sweep.schemes.begin(), cfg.sweep.schemes.end(), s) != cfg.sweep.schemes.end();
}

std::string tag(const ConditionKey& k)
{
    return "slices=" + std::to_string(k.slices) + " seed=" + std::to_string(k.seed);
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

std::vector<MetricsReport> run_condition(const ExperimentConfig& cfg, const PhantomSet& phantoms, const ConditionKey& key)
{
    const double fraction = static_cast<double>(key.slices) / static_cast<double>(phantoms.train.front().labels.shape().z);
    const auto sparse = sparse_train_labels(phantoms, key.slices);
    std::vector<MetricsReport> out;
    const double thr = cfg.sweep.threshold;
    const bool need_pseudo = wants(cfg, Scheme::seg3d_pseudo) && !cfg.alphas.empty();

    std::vector<ProbVolume> probs;
    std::string failed_2d;
    if (wants(cfg, Scheme::seg2d) || need_pseudo) {
        try {
            const auto t0 = std::chrono::steady_clock::now();
            const auto model = stage_train2d(cfg, phantoms, sparse, key);
            spdlog::info("[{}] seg2d trained in {:.1f} s", tag(key), seconds_since(t0));
            if (wants(cfg, Scheme::seg2d))
                out.push_back(evaluate({Scheme::seg2d, fraction, 0.0, key.seed}, predict_volume_2d(model, phantoms.test.image),
                                       phantoms.test.labels, thr));
            if (need_pseudo) probs = stage_predict2d(model, phantoms);
            spdlog::info("[{}] seg2d done in {:.1f} s", tag(key), seconds_since(t0));
        } catch (const std::exception& e) {
            spdlog::error("[{}] 2D stage failed: {}", tag(key), e.what());
            failed_2d = "train2d";
            if (wants(cfg, Scheme::seg2d)) out.push_back(failed_report({Scheme::seg2d, fraction, 0.0, key.seed}, failed_2d));
        }
    }

    auto run_3d = [&](Scheme scheme, double alpha, const std::vector<ProbVolume>& p) {
        const Condition cond{scheme, fraction, alpha, key.seed};
        try {
            const auto t0 = std::chrono::steady_clock::now();
            const auto fused = stage_fuse(cfg, p, sparse, Alpha(alpha));
            const auto model = stage_train3d(cfg, phantoms, fused, key);
            const double train_s = seconds_since(t0);
            out.push_back(evaluate(cond,
                                   predict_volume_3d(model, phantoms.test.image, cfg.sweep.tile_overlap, cfg.sweep.blend),
                                   phantoms.test.labels, thr));
            spdlog::info("[{}] {} alpha={}: trained in {:.1f} s, evaluated in {:.1f} s", tag(key), to_string(scheme), alpha,
                         train_s, seconds_since(t0) - train_s);
        } catch (const std::exception& e) {
            spdlog::error("[{}] 3D stage ({}, alpha={}) failed: {}", tag(key), to_string(scheme), alpha, e.what());
            out.push_back(failed_report(cond, "train3d"));
        }
    };

    if (wants(cfg, Scheme::seg3d_sparse)) {
        // At alpha = 0 the pseudo-label values cannot matter; zeros stand in if
        // the 2D stage did not produce any.
        if (probs.empty()) {
            std::vector<ProbVolume> zeros;
            for (const auto& s : sparse)
                zeros.emplace_back(s.shape(), s.voxel_size(), std::vector<float>(static_cast<std::size_t>(s.shape().voxels()), 0.0f));
            run_3d(Scheme::seg3d_sparse, 0.0, zeros);
        } else {
            run_3d(Scheme::seg3d_sparse, 0.0, probs);
        }
    }
    if (wants(cfg, Scheme::seg3d_pseudo)) {
        for (double a : cfg.alphas) {
            if (!failed_2d.empty())
                out.push_back(failed_report({Scheme::seg3d_pseudo, fraction, a, key.seed}, failed_2d));
            else
                run_3d(Scheme::seg3d_pseudo, a, probs);
        }
    }
    return out;
}

std::vector<MetricsReport> run_sweep(const ExperimentConfig& cfg, int jobs, const ProgressFn& progress)
{
    cfg.validate();
    require(jobs >= 1, "jobs must be >= 1");
    const auto phantoms = generate_phantoms(cfg);
    std::vector<ConditionKey> keys;
    for (auto n : cfg.sweep.slice_counts)
        for (auto s : cfg.sweep.seeds) keys.push_back({n, s});

    std::vector<std::vector<MetricsReport>> results(keys.size());
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < keys.size(); i = next++) {
            results[i] = run_condition(cfg, phantoms, keys[i]);
            if (progress) {
                std::lock_guard lock(progress_mutex);
                progress(keys[i], results[i]);
            }
        }
    };
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), keys.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }

    std::vector<MetricsReport> all;
    for (auto& r : results) all.insert(all.end(), r.begin(), r.end());
    return all;
}

namespace {

std::string g6(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) parts.push_back(cur);
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

} // namespace

std::string csv_header()
{
    return "scheme,labeled_fraction,alpha,seed,tp,fp,fn,tn,dice,precision,recall,degenerate_flags";
}

std::string csv_row(const MetricsReport& r)
{
    std::string flags;
    for (const auto& f : r.flags) flags += (flags.empty() ? "" : "|") + f;
    if (flags.empty()) flags = "none";
    const auto& c = r.counts;
    return to_string(r.condition.scheme) + "," + g6(r.condition.labeled_fraction) + "," + g6(r.condition.alpha) + "," +
           std::to_string(r.condition.seed) + "," + std::to_string(c.tp) + "," + std::to_string(c.fp) + "," +
           std::to_string(c.fn) + "," + std::to_string(c.tn) + "," + g6(r.dice) + "," + g6(r.precision) + "," +
           g6(r.recall) + "," + flags;
}

void write_csv(const std::vector<MetricsReport>& reports, std::ostream& out)
{
    out << csv_header() << '\n';
    for (const auto& r : reports) out << csv_row(r) << '\n';
}

void write_csv(const std::vector<MetricsReport>& reports, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    write_csv(reports, out);
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<MetricsReport> read_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != csv_header()) throw InvalidArgument("results CSV: unexpected header");
    std::vector<MetricsReport> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 12) throw InvalidArgument("results CSV row " + std::to_string(row) + ": expected 12 fields");
        try {
            MetricsReport r;
            r.condition = {scheme_from_string(f[0]), std::stod(f[1]), std::stod(f[2]), std::stoull(f[3])};
            r.counts = {std::stoll(f[4]), std::stoll(f[5]), std::stoll(f[6]), std::stoll(f[7])};
            r.dice = std::stod(f[8]);
            r.precision = std::stod(f[9]);
            r.recall = std::stod(f[10]);
            if (f[11] != "none") r.flags = split(f[11], '|');
            out.push_back(std::move(r));
        } catch (const std::logic_error& e) {
            throw InvalidArgument("results CSV row " + std::to_string(row) + ": " + e.what());
        }
    }
    return out;
}

std::vector<MetricsReport> read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_csv(in);
}

} // namespace pseudoseg
