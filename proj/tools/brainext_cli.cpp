// brainext: batch brain extraction for T1 volumes.
// Subcommands: synth | train | segment | evaluate.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "brainext/config.hpp"
#include "brainext/ingest.hpp"
#include "brainext/pipeline.hpp"

namespace {

int log_level() {
    const char* env = std::getenv("BRAINEXT_LOG");
    if (!env) return 1;
    const std::string v(env);
    if (v == "quiet" || v == "0") return 0;
    if (v == "debug" || v == "2") return 2;
    return 1;
}

void info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[brainext] " << msg << "\n";
}

void debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[brainext:debug] " << msg << "\n";
}

struct GlobalOpts {
    std::string config_path;
    std::int64_t seed_override = -1;
    int jobs_override = 0;
};

brainext::PipelineConfig load_config(const GlobalOpts& g) {
    brainext::PipelineConfig cfg;
    if (!g.config_path.empty()) cfg = brainext::parse_config_file(g.config_path);
    if (g.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed_override);
    if (g.jobs_override > 0) cfg.jobs = g.jobs_override;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"brain extraction pipeline (slice grouping + shape model + CNN + CRF)"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may appear after the subcommand

    GlobalOpts g;
    app.add_option("--config", g.config_path, "pipeline config file (key = value lines)");
    app.add_option("--seed", g.seed_override, "override the config seed");
    app.add_option("--jobs", g.jobs_override, "worker threads for per-slice stages");

    std::string out_dir, data_dir, bundle_path, volume_path, mask_path;
    std::string pred_dir, gt_dir, mode = "3d";
    int n_subjects = 0;

    auto* synth = app.add_subcommand("synth", "generate a synthetic phantom dataset");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--subjects", n_subjects, "number of subjects (default from config)");

    auto* train = app.add_subcommand("train", "train all models and write a bundle");
    train->add_option("--data", data_dir, "training directory (volumes+masks+labels)")->required();
    train->add_option("--out", bundle_path, "output bundle path")->required();

    auto* segment = app.add_subcommand("segment", "segment one volume with a trained bundle");
    segment->add_option("--bundle", bundle_path, "trained model bundle")->required();
    segment->add_option("--volume", volume_path, "input volume")->required();
    segment->add_option("--out", mask_path, "output mask path")->required();

    auto* evaluate = app.add_subcommand("evaluate", "score predicted masks against ground truth");
    evaluate->add_option("--pred", pred_dir, "directory of predicted masks")->required();
    evaluate->add_option("--gt", gt_dir, "directory of ground-truth masks")->required();
    evaluate->add_option("--mode", mode, "2d or 3d (default 3d)");
    evaluate->add_option("--out", out_dir, "report output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const brainext::PipelineConfig cfg = load_config(g);

        if (synth->parsed()) {
            brainext::PipelineConfig c = cfg;
            if (n_subjects > 0) c.synth_subjects = n_subjects;
            const auto files = brainext::synth_dataset(c, out_dir);
            info("wrote " + std::to_string(files.size()) + " subjects to " + out_dir);
        } else if (train->parsed()) {
            const brainext::TrainOutput out = brainext::train_models(cfg, data_dir);
            brainext::save_bundle(bundle_path, out.bundle);
            const auto dir = std::filesystem::path(bundle_path).parent_path();
            const auto stem = std::filesystem::path(bundle_path).stem().string();
            brainext::write_loss_history_csv((dir / (stem + "_cnn_loss.csv")).string(),
                                             out.cnn_history);
            brainext::write_crf_tune_log_csv((dir / (stem + "_crf_tuning.csv")).string(),
                                             out.crf_trials);
            info("group classifier training accuracy: m12=" + std::to_string(out.m12_accuracy) +
                 " m23=" + std::to_string(out.m23_accuracy));
            info("bundle written to " + bundle_path);
        } else if (segment->parsed()) {
            const brainext::ModelBundle bundle = brainext::load_bundle(bundle_path);
            const brainext::Volume volume = brainext::read_volume(volume_path);
            const brainext::SegmentationResult res =
                brainext::segment_volume(cfg, bundle, volume);
            brainext::write_mask(mask_path, res.mask);
            debug("partition k1..k4: " + std::to_string(res.partition.k1) + " " +
                  std::to_string(res.partition.k2) + " " + std::to_string(res.partition.k3) + " " +
                  std::to_string(res.partition.k4));
            info("mask written to " + mask_path);
        } else if (evaluate->parsed()) {
            const brainext::EvaluationOutput out = brainext::evaluate_dirs(pred_dir, gt_dir, mode);
            std::filesystem::create_directories(out_dir);
            const auto base = std::filesystem::path(out_dir);
            brainext::write_report_csv((base / ("report_" + mode + ".csv")).string(), out.rows);
            brainext::write_report_json((base / ("report_" + mode + ".json")).string(), out.rows);
            brainext::write_boxplot_json((base / ("boxplot_" + mode + ".json")).string(),
                                         out.boxplots);
            std::cout << "dice mean=" << out.report.dice.mean << " sd=" << out.report.dice.sd
                      << " (n=" << out.report.dice.n << ")\n";
            info("reports written to " + out_dir);
        }
    } catch (const brainext::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const brainext::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const brainext::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
