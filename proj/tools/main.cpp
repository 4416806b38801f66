#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pheno/config.hpp"
#include "pheno/csv.hpp"
#include "pheno/errors.hpp"
#include "pheno/pipeline.hpp"

namespace {

// Exit codes: 0 success, 1 usage, 2 data error, 3 internal.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"phenofuse - crop phenological-stage onset estimation from radar, optical, "
                 "and climate time series"};
    app.require_subcommand(1);

    std::string config_path;
    std::string crop_filter;
    std::string out_dir;
    std::string preset;
    long long seed = -1;
    int threads = -1;
    app.add_option("--config", config_path, "pipeline config JSON")->expected(1);
    app.add_option("--seed", seed, "override config seed (pipeline and synth)");
    app.add_option("--crop", crop_filter, "restrict the run to one crop");
    app.add_option("--out", out_dir, "override the output directory");
    app.add_option("--preset", preset,
                   "feature preset: search, paper-standard, or comma-separated feature names");
    app.add_option("--threads", threads, "worker threads (0 = hardware concurrency)");

    const char* stages[] = {"synth", "preprocess", "features", "train", "evaluate", "report", "all"};
    const char* descs[] = {
        "generate a synthetic input world (phenology, climate, grids, truth)",
        "field selection, aggregation, cloud masking, smoothing, daily resampling",
        "compute the feature table and assemble labeled per-day datasets",
        "nested cross-validation with TPE feature/hyperparameter studies",
        "metric, residual-bin, per-year, scatter, and importance tables",
        "summary JSON and scatter SVGs",
        "run every stage in order",
    };
    for (std::size_t i = 0; i < std::size(stages); ++i)
        app.add_subcommand(stages[i], descs[i])->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e) == 0 ? kExitOk : kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        pheno::PipelineConfig cfg;
        if (!config_path.empty()) {
            if (!std::filesystem::exists(config_path))
                throw pheno::ValidationError("missing config file: " + config_path);
            cfg = pheno::PipelineConfig::load(config_path);
        }
        if (seed >= 0) {
            cfg.seed = static_cast<std::uint64_t>(seed);
            cfg.synth.seed = static_cast<std::uint64_t>(seed);
        }
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (threads >= 0) cfg.threads = threads;
        if (!crop_filter.empty()) {
            const auto crop = pheno::crop_from_name(crop_filter);
            if (!crop) throw pheno::ValidationError("unknown crop \"" + crop_filter + "\"");
            cfg.crops = {*crop};
        }
        if (!preset.empty()) {
            if (preset == "search" || preset == "paper-standard") {
                cfg.feature_preset = preset;
            } else {
                cfg.feature_preset = "list";
                cfg.feature_list = pheno::csv::split_line(preset);
            }
            cfg.preset_mask(); // validate
        }

        const std::string stage = app.get_subcommands().front()->get_name();
        pheno::run_stage(stage, cfg);
        return kExitOk;
    } catch (const pheno::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const pheno::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kExitInternal;
    }
}
