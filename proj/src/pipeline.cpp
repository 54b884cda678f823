#include "pseudoseg/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "pseudoseg/error.hpp"
#include "pseudoseg/volg.hpp"

namespace pseudoseg {

namespace fs = std::filesystem;
using nlohmann::json;

Pipeline::Pipeline(ExperimentConfig cfg, fs::path out) : cfg_(std::move(cfg)), out_(std::move(out))
{
    cfg_.validate();
    hash_ = cfg_.hash();
}

std::string Pipeline::alpha_tag(double alpha)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "a%g", alpha);
    return buf;
}

fs::path Pipeline::condition_dir(const ConditionKey& key) const
{
    return out_ / ("s" + std::to_string(key.slices) + "_seed" + std::to_string(key.seed));
}

fs::path Pipeline::alpha_dir(const ConditionKey& key, double alpha) const
{
    return condition_dir(key) / alpha_tag(alpha);
}

Provenance Pipeline::provenance(const std::string& stage, std::uint64_t seed, json extra) const
{
    return Provenance{hash_, stage, seed, std::move(extra)};
}

void Pipeline::check(const Provenance& p, const fs::path& from) const
{
    if (p.config_hash != hash_)
        throw ArtifactError(from.string() + " was produced by config " + (p.config_hash.empty() ? "<none>" : p.config_hash) +
                            ", current config is " + hash_ + "; rerun the upstream stage");
}

namespace {

void require_file(const fs::path& p, const std::string& producer)
{
    if (!fs::exists(p)) throw ArtifactError("missing upstream artifact " + p.string() + " (run '" + producer + "' first)");
}

std::string train_name(std::size_t i) { return "train" + std::to_string(i); }

} // namespace

std::vector<fs::path> Pipeline::generate() const
{
    const auto dir = out_ / "phantoms";
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    save_config(cfg_, out_ / "config.json");
    std::vector<fs::path> written;
    auto emit = [&](const PhantomConfig& pc, const std::string& name) {
        const auto p = generate_phantom(pc);
        const auto prov = provenance("generate", pc.seed, {{"volume", name}});
        written.push_back(dir / (name + "_image.volg"));
        save_volume(p.image, written.back(), prov);
        written.push_back(dir / (name + "_labels.volg"));
        save_labels(p.labels, written.back(), prov);
    };
    for (std::size_t i = 0; i < cfg_.train_phantoms.size(); ++i) emit(cfg_.train_phantoms[i], train_name(i));
    emit(cfg_.test_phantom, "test");
    return written;
}

PhantomSet Pipeline::load_phantoms() const
{
    const auto dir = out_ / "phantoms";
    auto load = [&](const std::string& name) {
        const auto img = dir / (name + "_image.volg");
        const auto lab = dir / (name + "_labels.volg");
        require_file(img, "generate");
        require_file(lab, "generate");
        Provenance pi, pl;
        Phantom p{load_volume(img, &pi), load_labels(lab, &pl)};
        check(pi, img);
        check(pl, lab);
        return p;
    };
    PhantomSet s;
    for (std::size_t i = 0; i < cfg_.train_phantoms.size(); ++i) s.train.push_back(load(train_name(i)));
    s.test = load("test");
    return s;
}

std::vector<LabelVolume> Pipeline::load_sparse(const ConditionKey& key) const
{
    std::vector<LabelVolume> out;
    for (std::size_t i = 0; i < cfg_.train_phantoms.size(); ++i) {
        const auto path = condition_dir(key) / (train_name(i) + "_sparse.volg");
        require_file(path, "train2d");
        Provenance p;
        out.push_back(load_labels(path, &p));
        check(p, path);
    }
    return out;
}

void Pipeline::train2d(const ConditionKey& key) const
{
    const auto phantoms = load_phantoms();
    const auto dir = condition_dir(key);
    fs::create_directories(dir);
    const auto sparse = sparse_train_labels(phantoms, key.slices);
    const json extra{{"slices", key.slices}};
    for (std::size_t i = 0; i < sparse.size(); ++i)
        save_labels(sparse[i], dir / (train_name(i) + "_sparse.volg"), provenance("sparsify", key.seed, extra));
    const auto model = stage_train2d(cfg_, phantoms, sparse, key);
    auto ckpt = to_checkpoint(model);
    ckpt.provenance = provenance("train2d", key.seed, extra);
    save_checkpoint(ckpt, dir / "seg2d.ckpt");
}

void Pipeline::pseudolabel(const ConditionKey& key, double alpha) const
{
    const auto phantoms = load_phantoms();
    const auto sparse = load_sparse(key);
    const auto ckpt_path = condition_dir(key) / "seg2d.ckpt";
    require_file(ckpt_path, "train2d");
    const auto ckpt = load_checkpoint(ckpt_path);
    check(ckpt.provenance, ckpt_path);
    const auto probs = stage_predict2d(from_checkpoint_2d(ckpt), phantoms);
    const json extra{{"slices", key.slices}, {"alpha", alpha}};
    for (std::size_t i = 0; i < probs.size(); ++i)
        save_probs(probs[i], condition_dir(key) / (train_name(i) + "_probs2d.volg"), provenance("predict2d", key.seed, extra));
    const auto fused = stage_fuse(cfg_, probs, sparse, Alpha(alpha));
    const auto dir = alpha_dir(key, alpha);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < fused.size(); ++i)
        save_fused(fused[i], dir / train_name(i), provenance("pseudolabel", key.seed, extra));
}

void Pipeline::train3d(const ConditionKey& key, double alpha) const
{
    const auto phantoms = load_phantoms();
    const auto dir = alpha_dir(key, alpha);
    std::vector<FusedTargets> fused;
    for (std::size_t i = 0; i < phantoms.train.size(); ++i) {
        const auto stem = dir / train_name(i);
        require_file(stem.string() + "_targets.volg", "pseudolabel");
        Provenance p;
        fused.push_back(load_fused(stem, &p));
        check(p, stem.string() + "_targets.volg");
    }
    const auto model = stage_train3d(cfg_, phantoms, fused, key);
    auto ckpt = to_checkpoint(model);
    ckpt.provenance = provenance("train3d", key.seed, {{"slices", key.slices}, {"alpha", alpha}});
    save_checkpoint(ckpt, dir / "seg3d.ckpt");
}

std::vector<MetricsReport> Pipeline::eval(const ConditionKey& key, const std::vector<double>& alphas) const
{
    const auto phantoms = load_phantoms();
    const double fraction = static_cast<double>(key.slices) / static_cast<double>(phantoms.train.front().labels.shape().z);
    const double thr = cfg_.sweep.threshold;
    std::vector<MetricsReport> out;

    const auto c2 = condition_dir(key) / "seg2d.ckpt";
    require_file(c2, "train2d");
    const auto ck2 = load_checkpoint(c2);
    check(ck2.provenance, c2);
    out.push_back(evaluate({Scheme::seg2d, fraction, 0.0, key.seed}, predict_volume_2d(from_checkpoint_2d(ck2), phantoms.test.image),
                           phantoms.test.labels, thr));

    for (double a : alphas) {
        const auto c3 = alpha_dir(key, a) / "seg3d.ckpt";
        require_file(c3, "train3d");
        const auto ck3 = load_checkpoint(c3);
        check(ck3.provenance, c3);
        const auto probs = predict_volume_3d(from_checkpoint_3d(ck3), phantoms.test.image, cfg_.sweep.tile_overlap, cfg_.sweep.blend);
        save_probs(probs, alpha_dir(key, a) / "test_probs3d.volg",
                   provenance("eval", key.seed, {{"slices", key.slices}, {"alpha", a}}));
        out.push_back(evaluate({a == 0.0 ? Scheme::seg3d_sparse : Scheme::seg3d_pseudo, fraction, a, key.seed}, probs,
                               phantoms.test.labels, thr));
    }
    write_csv(out, condition_dir(key) / "metrics.csv");
    return out;
}

} // namespace pseudoseg
