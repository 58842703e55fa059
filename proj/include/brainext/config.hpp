#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "brainext/asmof.hpp"
#include "brainext/cnn.hpp"
#include "brainext/common.hpp"
#include "brainext/crf.hpp"
#include "brainext/grouping.hpp"
#include "brainext/groupone.hpp"

namespace brainext {

// Every tunable of the pipeline; parsed from a line-oriented "key = value"
// file. Unknown keys are rejected so typos fail loudly.
struct PipelineConfig {
    std::uint64_t seed = 1;
    int jobs = 1;

    // synthetic dataset
    int synth_subjects = 6;
    int synth_nx = 64, synth_ny = 64, synth_nz = 48;
    double synth_noise_sigma = 0.03;

    // group labels from mask areas: II starts at t2 * max area, III at t3
    double label_t2 = 0.35;
    double label_t3 = 0.75;

    GroupingParams grouping;
    AsmParams asm_params;

    CnnTrainConfig cnn_train;
    int band_distance = 5;

    CrfParams crf;
    int crf_tune_trials = 50;
    int crf_val_slices = 1;  // validation slices per training subject

    GroupOneParams groupone;

    void validate() const {
        if (synth_subjects < 1) throw ValidationError("config: synth.subjects must be >= 1");
        if (synth_nx < 8 || synth_ny < 8 || synth_nz < 8)
            throw ValidationError("config: synth dims must be >= 8");
        if (synth_noise_sigma < 0.0)
            throw ValidationError("config: synth.noise_sigma must be >= 0");
        if (!(label_t2 > 0.0 && label_t2 < label_t3 && label_t3 < 1.0))
            throw ValidationError("config: need 0 < labels.t2 < labels.t3 < 1");
        if (!(grouping.subrect_k > 0.0 && grouping.subrect_k <= 1.0))
            throw ValidationError("config: grouping.subrect_k must be in (0,1]");
        if (grouping.svm_epochs < 1) throw ValidationError("config: grouping.svm_epochs >= 1");
        asm_params.validate();
        if (cnn_train.epochs < 1 || cnn_train.batch_size < 1 || cnn_train.samples_per_class < 1)
            throw ValidationError("config: cnn training sizes must be >= 1");
        if (cnn_train.eta < 0.0) throw ValidationError("config: cnn.eta must be >= 0");
        if (!(cnn_train.alpha > 0.0)) throw ValidationError("config: cnn.alpha must be > 0");
        if (band_distance < 0) throw ValidationError("config: cnn.band_distance must be >= 0");
        crf.validate();
        if (crf_tune_trials < 1) throw ValidationError("config: crf.tune_trials must be >= 1");
        if (crf_val_slices < 1) throw ValidationError("config: crf.val_slices must be >= 1");
        groupone.validate();
        if (jobs < 1) throw ValidationError("config: jobs must be >= 1");
    }
};

namespace config_detail {
inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}
}  // namespace config_detail

inline PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = config_detail::trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
        const std::string key = config_detail::trim(stripped.substr(0, eq));
        const std::string value = config_detail::trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ValidationError("config line " + std::to_string(line_no) + ": empty key or value");

        auto as_i = [&]() {
            try {
                return std::stoi(value);
            } catch (...) {
                throw ValidationError("config: key '" + key + "' expects an integer");
            }
        };
        auto as_u64 = [&]() {
            try {
                return static_cast<std::uint64_t>(std::stoull(value));
            } catch (...) {
                throw ValidationError("config: key '" + key + "' expects an integer");
            }
        };
        auto as_d = [&]() {
            try {
                return std::stod(value);
            } catch (...) {
                throw ValidationError("config: key '" + key + "' expects a number");
            }
        };

        if (key == "seed") cfg.seed = as_u64();
        else if (key == "jobs") cfg.jobs = as_i();
        else if (key == "synth.subjects") cfg.synth_subjects = as_i();
        else if (key == "synth.nx") cfg.synth_nx = as_i();
        else if (key == "synth.ny") cfg.synth_ny = as_i();
        else if (key == "synth.nz") cfg.synth_nz = as_i();
        else if (key == "synth.noise_sigma") cfg.synth_noise_sigma = as_d();
        else if (key == "labels.t2") cfg.label_t2 = as_d();
        else if (key == "labels.t3") cfg.label_t3 = as_d();
        else if (key == "grouping.subrect_k") cfg.grouping.subrect_k = as_d();
        else if (key == "grouping.svm_epochs") cfg.grouping.svm_epochs = as_i();
        else if (key == "grouping.svm_lr") cfg.grouping.svm_lr = as_d();
        else if (key == "grouping.svm_reg") cfg.grouping.svm_reg = as_d();
        else if (key == "asm.n_landmarks") cfg.asm_params.n_landmarks = as_i();
        else if (key == "asm.n_s") cfg.asm_params.n_s = as_i();
        else if (key == "asm.profile_k") cfg.asm_params.profile_k = as_i();
        else if (key == "asm.l_max") cfg.asm_params.l_max = as_i();
        else if (key == "asm.n_grid") cfg.asm_params.n_grid = as_i();
        else if (key == "asm.n_max") cfg.asm_params.n_max = as_i();
        else if (key == "asm.k_nn") cfg.asm_params.k_nn = as_i();
        else if (key == "asm.n_keep") cfg.asm_params.n_keep = as_i();
        else if (key == "asm.knn_max_train") cfg.asm_params.knn_max_train = as_i();
        else if (key == "asm.f_v") cfg.asm_params.f_v = as_d();
        else if (key == "asm.q") cfg.asm_params.q = as_d();
        else if (key == "cnn.epochs") cfg.cnn_train.epochs = as_i();
        else if (key == "cnn.batch_size") cfg.cnn_train.batch_size = as_i();
        else if (key == "cnn.samples_per_class") cfg.cnn_train.samples_per_class = as_i();
        else if (key == "cnn.eta") cfg.cnn_train.eta = as_d();
        else if (key == "cnn.alpha") cfg.cnn_train.alpha = as_d();
        else if (key == "cnn.band_distance") cfg.band_distance = as_i();
        else if (key == "crf.w1") cfg.crf.w1 = as_d();
        else if (key == "crf.w2") cfg.crf.w2 = as_d();
        else if (key == "crf.sigma_alpha") cfg.crf.sigma_alpha = as_d();
        else if (key == "crf.sigma_beta") cfg.crf.sigma_beta = as_d();
        else if (key == "crf.sigma_gamma") cfg.crf.sigma_gamma = as_d();
        else if (key == "crf.iterations") cfg.crf.n_iterations = as_i();
        else if (key == "crf.tune_trials") cfg.crf_tune_trials = as_i();
        else if (key == "crf.val_slices") cfg.crf_val_slices = as_i();
        else if (key == "groupone.alpha_area") cfg.groupone.alpha_area = as_d();
        else if (key == "groupone.beta_dist") cfg.groupone.beta_dist = as_d();
        else if (key == "groupone.denoise_min_area") cfg.groupone.denoise_min_area = as_i();
        else
            throw ValidationError("config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline PipelineConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

}  // namespace brainext
