#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "pseudoseg/config.hpp"
#include "pseudoseg/error.hpp"
#include "pseudoseg/pipeline.hpp"
#include "pseudoseg/plot.hpp"
#include "pseudoseg/sweep.hpp"

namespace fs = std::filesystem;
using namespace pseudoseg;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kArtifact = 3, kNumerical = 4 };

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha;
    int jobs = 1;
    bool smoke = false;
    std::optional<std::int64_t> slices;
    std::optional<std::uint64_t> replicate;
    std::string csv;
};

ExperimentConfig resolve(const Options& o)
{
    ExperimentConfig c = !o.config.empty() ? load_config(o.config) : o.smoke ? ExperimentConfig::smoke() : ExperimentConfig::defaults();
    if (!o.out.empty()) c.output_dir = o.out;
    if (o.seed) c.global_seed = *o.seed;
    c.validate();
    return c;
}

ConditionKey condition(const Options& o, const ExperimentConfig& c)
{
    return {o.slices.value_or(c.sweep.slice_counts.front()), o.replicate.value_or(c.sweep.seeds.front())};
}

double stage_alpha(const Options& o, const ExperimentConfig& c)
{
    const double a = o.alpha.value_or(c.alphas.empty() ? 0.0 : c.alphas.front());
    if (!(a >= 0.0)) throw ConfigError("--alpha must be >= 0");
    return a;
}

void write_text(const fs::path& p, const std::string& text)
{
    std::ofstream f(p, std::ios::binary);
    f << text;
    if (!f) throw IoError("failed writing " + p.string());
}

void emit_report(const std::vector<MetricsReport>& reports, const fs::path& dir, const std::string& hash)
{
    for (const auto& p : write_plots(reports, dir / "plots", "config " + hash)) spdlog::info("wrote {}", p.string());
    write_text(dir / "summary.md", summary_table(reports));
    std::printf("%s", summary_table(reports).c_str());
}

int run(const std::string& cmd, const Options& o)
{
    const auto cfg = resolve(o);
    const fs::path out = cfg.output_dir;
    Pipeline pipe(cfg, out);
    spdlog::info("{}: config {} -> {}", cmd, pipe.config_hash().substr(0, 12), out.string());
    const auto t0 = std::chrono::steady_clock::now();

    if (cmd == "generate") {
        for (const auto& p : pipe.generate()) spdlog::info("wrote {}", p.string());
    } else if (cmd == "train2d") {
        pipe.train2d(condition(o, cfg));
    } else if (cmd == "pseudolabel") {
        pipe.pseudolabel(condition(o, cfg), stage_alpha(o, cfg));
    } else if (cmd == "train3d") {
        pipe.train3d(condition(o, cfg), stage_alpha(o, cfg));
    } else if (cmd == "eval") {
        std::vector<double> alphas{0.0};
        if (const double a = stage_alpha(o, cfg); a > 0) alphas.push_back(a);
        for (const auto& r : pipe.eval(condition(o, cfg), alphas)) std::printf("%s\n", csv_row(r).c_str());
    } else if (cmd == "sweep") {
        auto sweep_cfg = cfg;
        if (o.alpha) {
            if (!(*o.alpha > 0)) throw ConfigError("--alpha for a sweep must be > 0 (the baseline always runs at 0)");
            sweep_cfg.alphas = {*o.alpha};
        }
        fs::create_directories(out);
        save_config(sweep_cfg, out / "config.json");
        const auto hash = sweep_cfg.hash();
        const auto sweep_t0 = std::chrono::steady_clock::now();
        const auto reports = run_sweep(sweep_cfg, o.jobs, [](const ConditionKey& k, const std::vector<MetricsReport>& rs) {
            for (const auto& r : rs) spdlog::info("slices={} seed={}: {}", k.slices, k.seed, csv_row(r));
        });
        write_csv(reports, out / "results.csv");
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - sweep_t0).count();
        write_text(out / "results.meta.json", nlohmann::json{{"config_hash", hash},
                                                             {"stage", "sweep"},
                                                             {"seed", sweep_cfg.global_seed},
                                                             {"jobs", o.jobs},
                                                             {"elapsed_seconds", elapsed}}
                                                      .dump(2) + "\n");
        emit_report(reports, out, hash);
    } else if (cmd == "report") {
        const fs::path csv = o.csv.empty() ? out / "results.csv" : fs::path(o.csv);
        if (!fs::exists(csv)) throw ArtifactError("missing " + csv.string() + " (run 'sweep' first)");
        emit_report(read_csv(csv), csv.parent_path(), pipe.config_hash());
    }
    spdlog::info("{} finished in {:.1f} s", cmd,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Sparse-annotation volumetric segmentation: phantoms, 2D pseudo-labeler, 3D U-Net, sweeps"};
    app.require_subcommand(1, 1);
    Options o;

    struct Cmd {
        const char* name;
        const char* help;
        bool condition;
    };
    const Cmd cmds[] = {
        {"generate", "Write the train/test phantom volumes and dense labels", false},
        {"train2d", "Sparsify the training labels and train the 2D pseudo-labeler", true},
        {"pseudolabel", "Infer 2D pseudo-labels and fuse them with the ground truth at --alpha", true},
        {"train3d", "Train the 3D U-Net on fused targets (--alpha 0 is the sparse baseline)", true},
        {"eval", "Score seg2d, the baseline and the --alpha model on the test phantom", true},
        {"sweep", "Run the full sparsity sweep; writes results.csv and plots", false},
        {"report", "Re-render plots and the summary table from a results CSV", false},
    };
    for (const auto& c : cmds) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "Output directory (overrides the config)");
        sub->add_option("--seed", o.seed, "Global seed (overrides the config)");
        sub->add_option("--alpha", o.alpha, "Pseudo-label loss weight");
        sub->add_option("--jobs", o.jobs, "Conditions run in parallel")->check(CLI::PositiveNumber);
        sub->add_flag("--smoke", o.smoke, "Use the 16^3 fast configuration when no --config is given");
        if (c.condition) {
            sub->add_option("--slices", o.slices, "Labeled slices per training volume (default: first sweep entry)");
            sub->add_option("--replicate", o.replicate, "Sweep seed of the condition (default: first sweep entry)");
        }
        if (std::string(c.name) == "report") sub->add_option("--csv", o.csv, "Results CSV (default: <out>/results.csv)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        return run(cmd, o);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kConfig;
    } catch (const InvalidArgument& e) {
        spdlog::error("{}", e.what());
        return kConfig;
    } catch (const ArtifactError& e) {
        spdlog::error("{}", e.what());
        return kArtifact;
    } catch (const NumericalError& e) {
        spdlog::error("{}", e.what());
        return kNumerical;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kFailure;
    }
}
