#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pseudoseg/config.hpp"
#include "pseudoseg/sweep.hpp"

namespace pseudoseg {

/// Stage-by-stage execution with every intermediate persisted under `out`.
/// Each artifact embeds (config hash, stage, seed); a stage refuses inputs
/// whose hash differs from the current configuration (ArtifactError).
///
///   out/config.json
///   out/phantoms/{train0,train1,train2,test}_{image,labels}.volg
///   out/s<slices>_seed<seed>/train<i>_sparse.volg, seg2d.ckpt, train<i>_probs2d.volg
///   out/s<slices>_seed<seed>/a<alpha>/train<i>_{targets,weights,source}.volg, seg3d.ckpt
///   out/s<slices>_seed<seed>/metrics.csv
class Pipeline {
public:
    Pipeline(ExperimentConfig cfg, std::filesystem::path out);

    const ExperimentConfig& config() const { return cfg_; }
    const std::string& config_hash() const { return hash_; }
    std::filesystem::path condition_dir(const ConditionKey& key) const;
    std::filesystem::path alpha_dir(const ConditionKey& key, double alpha) const;

    /// Returns the written file paths.
    std::vector<std::filesystem::path> generate() const;
    void train2d(const ConditionKey& key) const;
    void pseudolabel(const ConditionKey& key, double alpha) const;
    void train3d(const ConditionKey& key, double alpha) const;
    /// Scores seg2d and the 3D model of every alpha in `alphas` (0 is the
    /// sparse baseline) on the test phantom; writes metrics.csv.
    std::vector<MetricsReport> eval(const ConditionKey& key, const std::vector<double>& alphas) const;

    static std::string alpha_tag(double alpha);

private:
    Provenance provenance(const std::string& stage, std::uint64_t seed, nlohmann::json extra = nlohmann::json::object()) const;
    void check(const Provenance& p, const std::filesystem::path& from) const;
    PhantomSet load_phantoms() const;
    std::vector<LabelVolume> load_sparse(const ConditionKey& key) const;

    ExperimentConfig cfg_;
    std::filesystem::path out_;
    std::string hash_;
};

} // namespace pseudoseg
