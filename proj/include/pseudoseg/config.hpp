#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pseudoseg/fuselabel.hpp"
#include "pseudoseg/metrics.hpp"
#include "pseudoseg/model_io.hpp"
#include "pseudoseg/patch.hpp"
#include "pseudoseg/phantom.hpp"
#include "pseudoseg/seg2d.hpp"
#include "pseudoseg/seg3d.hpp"

namespace pseudoseg {

/// The (slice count, seed, scheme) grid plus evaluation settings.
struct SweepConfig {
    std::vector<std::int64_t> slice_counts{2, 5, 11, 22, 50};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<Scheme> schemes{Scheme::seg2d, Scheme::seg3d_sparse, Scheme::seg3d_pseudo};
    double threshold = 0.5;
    PseudoMode pseudo_mode = PseudoMode::hard;
    double pseudo_threshold = 0.5;
    double tile_overlap = 0.25;
    BlendMode blend = BlendMode::uniform;

    friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

struct ExperimentConfig {
    std::vector<PhantomConfig> train_phantoms; ///< three
    PhantomConfig test_phantom;
    SweepConfig sweep;
    Seg2DSpec seg2d_spec;
    HyperParams seg2d_hyper;
    Seg3DSpec seg3d_spec;
    HyperParams seg3d_hyper;
    std::vector<double> alphas{0.5}; ///< proposed-scheme weights; the baseline always uses 0
    std::string output_dir = "runs/default";
    std::uint64_t global_seed = 0;

    /// Throws ConfigError naming the offending key.
    void validate() const;
    /// Hex SHA-256 of the canonical JSON form, excluding output_dir.
    std::string hash() const;

    /// Full-scale experiment on 50x114x114 phantoms.
    static ExperimentConfig defaults();
    /// 16^3 volumes, two seeds, small networks.
    static ExperimentConfig smoke();

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

void to_json(nlohmann::json& j, const SweepConfig& s);
void from_json(const nlohmann::json& j, SweepConfig& s);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Every key is required; a missing or mistyped key raises ConfigError with its path.
ExperimentConfig config_from_json(const nlohmann::json& j);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& c, const std::filesystem::path& path);

std::string sha256_hex(const std::string& bytes);

} // namespace pseudoseg
