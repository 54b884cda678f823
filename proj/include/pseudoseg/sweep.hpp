#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "pseudoseg/config.hpp"
#include "pseudoseg/fuselabel.hpp"
#include "pseudoseg/metrics.hpp"
#include "pseudoseg/phantom.hpp"
#include "pseudoseg/seg2d.hpp"
#include "pseudoseg/seg3d.hpp"

namespace pseudoseg {

struct PhantomSet {
    std::vector<Phantom> train;
    Phantom test;
};

PhantomSet generate_phantoms(const ExperimentConfig& cfg);

/// One cell of the sweep grid before the scheme is chosen.
struct ConditionKey {
    std::int64_t slices = 0;
    std::uint64_t seed = 0;
    friend bool operator==(const ConditionKey&, const ConditionKey&) = default;
};

/// Independent streams for one condition. The 3D init and training seeds are
/// shared by the baseline and the proposed scheme so the two runs differ only
/// in their loss weights.
struct ConditionSeeds {
    std::uint64_t seg2d_init, seg2d_train, seg3d_init, seg3d_train;
};

ConditionSeeds condition_seeds(const ExperimentConfig& cfg, std::uint64_t seed);

std::vector<LabelVolume> sparse_train_labels(const PhantomSet& phantoms, std::int64_t slices);

ModelState2D stage_train2d(const ExperimentConfig& cfg, const PhantomSet& phantoms,
                           const std::vector<LabelVolume>& sparse, const ConditionKey& key);

/// 2D probabilities on every training volume.
std::vector<ProbVolume> stage_predict2d(const ModelState2D& model, const PhantomSet& phantoms);

std::vector<FusedTargets> stage_fuse(const ExperimentConfig& cfg, const std::vector<ProbVolume>& probs,
                                     const std::vector<LabelVolume>& sparse, Alpha alpha);

ModelState3D stage_train3d(const ExperimentConfig& cfg, const PhantomSet& phantoms,
                           const std::vector<FusedTargets>& fused, const ConditionKey& key);

/// All reports of one condition, in scheme order: seg2d, seg3d_sparse, then
/// seg3d_pseudo per alpha. A failing stage yields failed_<stage> rows for the
/// schemes depending on it; the others still run.
std::vector<MetricsReport> run_condition(const ExperimentConfig& cfg, const PhantomSet& phantoms, const ConditionKey& key);

using ProgressFn = std::function<void(const ConditionKey&, const std::vector<MetricsReport>&)>;

/// Grid over slice counts x seeds with up to `jobs` conditions in flight.
/// Output order is the grid order regardless of jobs.
std::vector<MetricsReport> run_sweep(const ExperimentConfig& cfg, int jobs = 1, const ProgressFn& progress = {});

std::string csv_header();
std::string csv_row(const MetricsReport& r);
void write_csv(const std::vector<MetricsReport>& reports, std::ostream& out);
void write_csv(const std::vector<MetricsReport>& reports, const std::filesystem::path& path);
std::vector<MetricsReport> read_csv(std::istream& in);
std::vector<MetricsReport> read_csv(const std::filesystem::path& path);

} // namespace pseudoseg
