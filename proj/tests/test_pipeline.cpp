#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "brainext/config.hpp"
#include "brainext/pipeline.hpp"

using namespace brainext;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               ("brainext_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string dir(const std::string& name) const {
        const fs::path p = path / name;
        fs::create_directories(p);
        return p.string();
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

PipelineConfig fast_config() {
    PipelineConfig cfg;
    cfg.seed = 7;
    cfg.jobs = 2;
    cfg.synth_subjects = 3;
    cfg.synth_nx = 48;
    cfg.synth_ny = 48;
    cfg.synth_nz = 44;
    cfg.asm_params.n_landmarks = 32;
    cfg.asm_params.n_max = 5;
    cfg.cnn_train.epochs = 5;
    cfg.cnn_train.samples_per_class = 2500;
    cfg.crf_tune_trials = 6;
    cfg.validate();
    return cfg;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(BRAINEXT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys and bad values", "[pipeline]") {
    const PipelineConfig def = parse_config_text("");
    REQUIRE(def.seed == 1);
    REQUIRE(def.crf.w2 == 3.0);
    REQUIRE(def.crf.sigma_gamma == 3.0);
    REQUIRE(def.groupone.alpha_area == 0.4);
    REQUIRE(def.groupone.beta_dist == 1.75);
    REQUIRE(def.band_distance == 5);

    const PipelineConfig cfg = parse_config_text(
        "# comment\n"
        "seed = 42\n"
        "asm.n_landmarks = 24\n"
        "crf.w1 = 2.5\n"
        "groupone.alpha_area = 0.5\n");
    REQUIRE(cfg.seed == 42);
    REQUIRE(cfg.asm_params.n_landmarks == 24);
    REQUIRE(cfg.crf.w1 == 2.5);
    REQUIRE(cfg.groupone.alpha_area == 0.5);

    REQUIRE_THROWS_AS(parse_config_text("nonsense.key = 1\n"), ValidationError);
    REQUIRE_THROWS_AS(parse_config_text("seed 42\n"), ValidationError);
    REQUIRE_THROWS_AS(parse_config_text("asm.f_v = 1.5\n"), ValidationError);
    REQUIRE_THROWS_AS(parse_config_text("asm.n_grid = 4\n"), ValidationError);
    REQUIRE_THROWS_AS(parse_config_text("crf.sigma_alpha = -1\n"), ValidationError);
}

TEST_CASE("synthetic datasets are deterministic and well formed", "[pipeline]") {
    TempDir tmp("synth");
    PipelineConfig cfg = fast_config();
    cfg.synth_subjects = 2;
    const auto files_a = synth_dataset(cfg, tmp.dir("a"));
    const auto files_b = synth_dataset(cfg, tmp.dir("b"));
    REQUIRE(files_a.size() == 2);
    for (std::size_t i = 0; i < files_a.size(); ++i) {
        REQUIRE(read_bytes(files_a[i].volume_path) == read_bytes(files_b[i].volume_path));
        REQUIRE(read_bytes(files_a[i].mask_path) == read_bytes(files_b[i].mask_path));
        REQUIRE(read_bytes(files_a[i].labels_path) == read_bytes(files_b[i].labels_path));
    }
    const Volume v = read_volume(files_a[0].volume_path);
    REQUIRE(v.nx == cfg.synth_nx);
    REQUIRE(v.nz == cfg.synth_nz);
    const BinaryMask m = read_mask(files_a[0].mask_path);
    const std::vector<GroupTag> labels = read_labels_csv(files_a[0].labels_path, v.nz);
    partition_from_labels(labels);  // throws unless palindromic
    REQUIRE(labels == labels_from_areas(m, cfg.label_t2, cfg.label_t3));
}

TEST_CASE("evaluate scores identical masks at dice one", "[pipeline]") {
    TempDir tmp("eval");
    BinaryMask m(10, 10, 6);
    for (int z = 1; z < 5; ++z)
        for (int y = 2; y < 8; ++y)
            for (int x = 2; x < 8; ++x) m.at(x, y, z) = 1;
    write_mask(tmp.dir("pred") + "/s0.nii", m);
    write_mask(tmp.dir("gt") + "/s0.nii", m);
    const EvaluationOutput out = evaluate_dirs(tmp.dir("pred"), tmp.dir("gt"), "3d");
    REQUIRE(out.report.dice.mean == 1.0);
    REQUIRE(out.report.ahd.mean == 0.0);

    const EvaluationOutput out2d = evaluate_dirs(tmp.dir("pred"), tmp.dir("gt"), "2d");
    REQUIRE(out2d.report.dice.mean == 1.0);
    REQUIRE(out2d.report.rows.size() == 4);  // only slices with foreground are scored

    REQUIRE_THROWS_AS(evaluate_dirs(tmp.dir("pred"), tmp.dir("gt"), "4d"), ValidationError);
}

TEST_CASE("cubes shifted by a third overlap at dice two-thirds", "[pipeline]") {
    // 30-cubes shifted by 10 along x: TP = 20*30*30, FP = FN = 10*30*30
    BinaryMask a(50, 40, 40), b(50, 40, 40);
    for (int z = 5; z < 35; ++z)
        for (int y = 5; y < 35; ++y) {
            for (int x = 0; x < 30; ++x) a.at(x, y, z) = 1;
            for (int x = 10; x < 40; ++x) b.at(x, y, z) = 1;
        }
    const std::vector<std::pair<std::string, std::pair<BinaryMask, BinaryMask>>> pairs{
        {"cubes", {a, b}}};
    const EvaluationOutput out = evaluate_masks(pairs, "3d");
    REQUIRE(out.report.dice.mean == Catch::Approx(2.0 / 3.0));
}

TEST_CASE("evaluate names orphan files", "[pipeline]") {
    TempDir tmp("orphan");
    BinaryMask m(4, 4, 2);
    m.at(1, 1, 0) = 1;
    write_mask(tmp.dir("pred") + "/only_pred.nii", m);
    write_mask(tmp.dir("gt") + "/only_gt.nii", m);
    try {
        evaluate_dirs(tmp.dir("pred"), tmp.dir("gt"), "3d");
        FAIL("expected orphan error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("only_pred") != std::string::npos);
        REQUIRE(msg.find("only_gt") != std::string::npos);
    }
}

TEST_CASE("cnn band refinement never alters pixels outside the band", "[pipeline]") {
    CnnSpec spec;
    spec.conv_depths = {2};
    spec.proj_dim = 0;
    spec.pad_unit = false;
    spec.fc_widths = {4, 2};
    CnnModel cnn(spec);
    init_weights(cnn, 3);

    Volume v(24, 24, 5);
    Rng rng(4);
    for (auto& d : v.data) d = static_cast<float>(rng.uniform01());
    Mask2D asm_mask(24, 24, 0);
    for (int y = 8; y < 16; ++y)
        for (int x = 8; x < 16; ++x) asm_mask.at(x, y) = 1;

    const ImageF map = pipeline_detail::refine_slice_map(v, 2, asm_mask, cnn, 2);
    const Mask2D band = boundary_band(asm_mask, 2);
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
            if (band.at(x, y)) continue;
            REQUIRE(map.at(x, y) == (asm_mask.at(x, y) ? 1.0f : 0.0f));
        }

    // empty mask -> empty band -> untouched baseline
    Mask2D empty(24, 24, 0);
    const ImageF untouched = pipeline_detail::refine_slice_map(v, 2, empty, cnn, 2);
    for (float p : untouched.data) REQUIRE(p == 0.0f);
}

TEST_CASE("trained pipeline segments a held-out phantom", "[pipeline][slow]") {
    TempDir tmp("e2e");
    const PipelineConfig cfg = fast_config();
    synth_dataset(cfg, tmp.dir("train"));
    const TrainOutput out = train_models(cfg, tmp.dir("train"));
    REQUIRE(out.m12_accuracy >= 0.9);
    REQUIRE(out.m23_accuracy >= 0.9);
    REQUIRE(!out.cnn_history.empty());
    REQUIRE(out.crf_trials.size() == static_cast<std::size_t>(cfg.crf_tune_trials));

    PipelineConfig test_cfg = cfg;
    test_cfg.seed = 7777;
    test_cfg.synth_subjects = 1;
    const auto test_files = synth_dataset(test_cfg, tmp.dir("test"));
    const Volume test_vol = read_volume(test_files[0].volume_path);
    const BinaryMask gt = read_mask(test_files[0].mask_path);

    const SegmentationResult res = segment_volume(cfg, out.bundle, test_vol);
    const double d = dice(confusion(res.mask, gt));
    REQUIRE(d >= 0.95);
    REQUIRE(ahd(res.mask, gt) <= 1.0);

    const GroupPartition truth =
        partition_from_labels(labels_from_areas(gt, cfg.label_t2, cfg.label_t3));
    REQUIRE(std::abs(res.partition.k1 - truth.k1) <= 3);
    REQUIRE(std::abs(res.partition.k2 - truth.k2) <= 3);
    REQUIRE(std::abs(res.partition.k3 - truth.k3) <= 3);
    REQUIRE(std::abs(res.partition.k4 - truth.k4) <= 3);

    // group-I slices near the anchors segment well on their own
    int checked_group_one = 0;
    for (int z : {res.partition.k1 - 2, res.partition.k1 - 1, res.partition.k4,
                  res.partition.k4 + 1}) {
        if (z < 0 || z >= test_vol.nz) continue;
        if (res.partition.labels[static_cast<std::size_t>(z)] != GroupTag::I) continue;
        const BinaryMask gs = BinaryMask::from_slice(gt.slice(z));
        if (gs.count() == 0) continue;
        const BinaryMask ps = BinaryMask::from_slice(res.mask.slice(z));
        REQUIRE(dice(confusion(ps, gs)) >= 0.85);
        ++checked_group_one;
    }
    REQUIRE(checked_group_one >= 2);

    // CNN band accuracy on a middle slice of the held-out subject
    {
        const Volume normalized = normalize_volume(test_vol);
        const int z = (res.partition.k2 + res.partition.k3) / 2;
        const GroupTag g = res.partition.labels[static_cast<std::size_t>(z)];
        const ImageF norm_slice = extract_sagittal_slice(normalized, z).pixels;
        const Mask2D asm_mask = pipeline_detail::asm_segment_slice(
            norm_slice, out.bundle.shape_model(g), out.bundle.appearance_model(g),
            cfg.asm_params);
        const Mask2D band = boundary_band(asm_mask, cfg.band_distance);
        const ImageF map = pipeline_detail::refine_slice_map(normalized, z, asm_mask,
                                                             out.bundle.cnn, cfg.band_distance);
        std::size_t correct = 0, total = 0;
        for (int y = 0; y < band.height; ++y)
            for (int x = 0; x < band.width; ++x) {
                if (!band.at(x, y)) continue;
                ++total;
                const int pred_label = map.at(x, y) > 0.5f ? 1 : 0;
                if (pred_label == gt.at(x, y, z)) ++correct;
            }
        REQUIRE(total > 0);
        REQUIRE(static_cast<double>(correct) / static_cast<double>(total) >= 0.9);
    }

    // a bundle that round-trips through disk drives the same segmentation
    save_bundle(tmp.file("model.bundle"), out.bundle);
    const ModelBundle loaded = load_bundle(tmp.file("model.bundle"));
    const SegmentationResult res2 = segment_volume(cfg, loaded, test_vol);
    REQUIRE(res2.mask.labels == res.mask.labels);
}

TEST_CASE("cli exit codes follow the contract", "[pipeline][slow]") {
    TempDir tmp("cli");

    // validation error: unknown config key -> 1
    {
        std::ofstream bad(tmp.file("bad.cfg"));
        bad << "not.a.key = 3\n";
    }
    REQUIRE(run_cli("synth --config " + tmp.file("bad.cfg") + " --out " + tmp.dir("x")) == 1);

    // io error: missing volume -> 2
    REQUIRE(run_cli("segment --bundle " + tmp.file("missing.bundle") + " --volume " +
                    tmp.file("missing.nii") + " --out " + tmp.file("out.nii")) == 2);

    // validation error: training on an empty directory -> 1
    REQUIRE(run_cli("train --data " + tmp.dir("empty") + " --out " + tmp.file("m.bundle")) == 1);

    // success: synth a tiny dataset -> 0, then evaluate pred=gt -> 0
    {
        std::ofstream cfg(tmp.file("mini.cfg"));
        cfg << "synth.subjects = 1\nsynth.nx = 16\nsynth.ny = 16\nsynth.nz = 44\n";
    }
    REQUIRE(run_cli("synth --config " + tmp.file("mini.cfg") + " --out " + tmp.dir("data")) == 0);
    REQUIRE(fs::exists(fs::path(tmp.dir("data")) / "sub00.nii"));
    REQUIRE(fs::exists(fs::path(tmp.dir("data")) / "sub00_mask.nii"));
    REQUIRE(fs::exists(fs::path(tmp.dir("data")) / "sub00_labels.csv"));

    fs::copy_file(fs::path(tmp.dir("data")) / "sub00_mask.nii",
                  fs::path(tmp.dir("pred")) / "sub00_mask.nii");
    fs::copy_file(fs::path(tmp.dir("data")) / "sub00_mask.nii",
                  fs::path(tmp.dir("gt")) / "sub00_mask.nii");
    REQUIRE(run_cli("evaluate --pred " + tmp.dir("pred") + " --gt " + tmp.dir("gt") +
                    " --mode 3d --out " + tmp.dir("report")) == 0);
    REQUIRE(fs::exists(fs::path(tmp.dir("report")) / "report_3d.csv"));
    REQUIRE(fs::exists(fs::path(tmp.dir("report")) / "report_3d.json"));
    REQUIRE(fs::exists(fs::path(tmp.dir("report")) / "boxplot_3d.json"));

    // segmenting a truncated volume surfaces the io error -> 2
    {
        ModelBundle tiny;
        tiny.m12.trained = tiny.m23.trained = true;
        tiny.m12.w = {1.0};
        tiny.m23.w = {1.0};
        tiny.rates = GroupRates{0.2, 0.4, 0.6, 0.8};
        save_bundle(tmp.file("tiny.bundle"), tiny);
        const auto src = fs::path(tmp.dir("data")) / "sub00.nii";
        std::vector<std::uint8_t> bytes = read_bytes(src.string());
        bytes.resize(bytes.size() - 10);
        std::ofstream out(tmp.file("trunc.nii"), std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    REQUIRE(run_cli("segment --bundle " + tmp.file("tiny.bundle") + " --volume " +
                    tmp.file("trunc.nii") + " --out " + tmp.file("out.nii")) == 2);
}
