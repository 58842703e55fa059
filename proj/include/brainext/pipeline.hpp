#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "brainext/asmof.hpp"
#include "brainext/cnn.hpp"
#include "brainext/common.hpp"
#include "brainext/config.hpp"
#include "brainext/core.hpp"
#include "brainext/crf.hpp"
#include "brainext/grouping.hpp"
#include "brainext/groupone.hpp"
#include "brainext/ingest.hpp"
#include "brainext/metrics.hpp"

namespace brainext {

namespace fs = std::filesystem;

// ---- shared helpers ----

inline Volume normalize_volume(const Volume& v) {
    Volume out = v;
    for (int z = 0; z < v.nz; ++z) {
        const SagittalSlice norm = normalize_intensity(extract_sagittal_slice(v, z));
        for (int y = 0; y < v.ny; ++y)
            for (int x = 0; x < v.nx; ++x) out.at(x, y, z) = norm.pixels.at(x, y);
    }
    return out;
}

inline std::vector<ImageF> volume_slices(const Volume& v) {
    std::vector<ImageF> out;
    out.reserve(static_cast<std::size_t>(v.nz));
    for (int z = 0; z < v.nz; ++z) out.push_back(extract_sagittal_slice(v, z).pixels);
    return out;
}

// Group labels for a phantom subject from its mask-area profile.
inline std::vector<GroupTag> labels_from_areas(const BinaryMask& gt, double t2, double t3) {
    std::vector<double> area(static_cast<std::size_t>(gt.depth), 0.0);
    double max_area = 0.0;
    for (int z = 0; z < gt.depth; ++z) {
        double a = 0.0;
        for (int y = 0; y < gt.height; ++y)
            for (int x = 0; x < gt.width; ++x) a += gt.at(x, y, z);
        area[static_cast<std::size_t>(z)] = a;
        max_area = std::max(max_area, a);
    }
    if (max_area <= 0.0) throw ValidationError("labels_from_areas: empty ground truth");
    std::vector<GroupTag> labels(static_cast<std::size_t>(gt.depth), GroupTag::I);
    for (int z = 0; z < gt.depth; ++z) {
        const double f = area[static_cast<std::size_t>(z)] / max_area;
        if (f >= t3)
            labels[static_cast<std::size_t>(z)] = GroupTag::III;
        else if (f >= t2)
            labels[static_cast<std::size_t>(z)] = GroupTag::II;
    }
    return labels;
}

// ---- synthetic dataset ----

struct SubjectFiles {
    std::string name;
    std::string volume_path, mask_path, labels_path;
};

inline std::string subject_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "sub%02d", index);
    return buf;
}

inline PhantomSpec phantom_spec_for_subject(const PipelineConfig& cfg, int index) {
    Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(2 * index)));
    PhantomSpec spec;
    spec.nx = cfg.synth_nx;
    spec.ny = cfg.synth_ny;
    spec.nz = cfg.synth_nz;
    auto jitter = [&](double base, double rel) { return base * (1.0 + rel * (2.0 * rng.uniform01() - 1.0)); };
    spec.semi_x = jitter(0.30 * cfg.synth_nx, 0.05);
    spec.semi_y = jitter(0.345 * cfg.synth_ny, 0.05);
    spec.semi_z = jitter(0.355 * cfg.synth_nz, 0.05);
    spec.center_x = 0.5 * cfg.synth_nx + rng.uniform(-1.5, 1.5);
    spec.center_y = 0.5 * cfg.synth_ny + rng.uniform(-1.5, 1.5);
    spec.center_z = 0.5 * cfg.synth_nz + rng.uniform(-1.5, 1.5);
    spec.shell_thickness = 3.0;
    spec.noise_sigma = cfg.synth_noise_sigma;
    spec.seed = Rng::derive(cfg.seed, static_cast<std::uint64_t>(2 * index + 1));
    return spec;
}

inline std::vector<SubjectFiles> synth_dataset(const PipelineConfig& cfg,
                                               const std::string& outdir) {
    fs::create_directories(outdir);
    std::vector<SubjectFiles> out;
    for (int i = 0; i < cfg.synth_subjects; ++i) {
        const Phantom ph = generate_phantom(phantom_spec_for_subject(cfg, i));
        const std::vector<GroupTag> labels = labels_from_areas(ph.mask, cfg.label_t2, cfg.label_t3);
        partition_from_labels(labels);  // validates the palindromic order

        SubjectFiles f;
        f.name = subject_name(i);
        f.volume_path = (fs::path(outdir) / (f.name + ".nii")).string();
        f.mask_path = (fs::path(outdir) / (f.name + "_mask.nii")).string();
        f.labels_path = (fs::path(outdir) / (f.name + "_labels.csv")).string();
        write_volume(f.volume_path, ph.volume, VolumeDtype::F32);
        write_mask(f.mask_path, ph.mask);
        std::ofstream lab(f.labels_path);
        if (!lab) throw IoError("cannot open for writing: " + f.labels_path);
        lab << "z,group\n";
        for (std::size_t z = 0; z < labels.size(); ++z)
            lab << z << ',' << group_char(labels[z]) << '\n';
        out.push_back(std::move(f));
    }
    return out;
}

// ---- training ----

struct TrainingSubject {
    std::string name;
    Volume volume;       // raw intensities
    Volume normalized;   // per-slice percentile normalized
    BinaryMask gt;
    std::vector<GroupTag> labels;
    GroupPartition partition;
};

inline std::vector<GroupTag> read_labels_csv(const std::string& path, int nz) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<GroupTag> labels(static_cast<std::size_t>(nz), GroupTag::I);
    std::vector<bool> seen(static_cast<std::size_t>(nz), false);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (config_detail::trim(line).empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError("bad labels line in " + path);
        const int z = std::stoi(line.substr(0, comma));
        const int g = std::stoi(line.substr(comma + 1));
        if (z < 0 || z >= nz) throw IoError("labels z out of range in " + path);
        if (g < 1 || g > 3) throw IoError("labels group must be 1..3 in " + path);
        labels[static_cast<std::size_t>(z)] = static_cast<GroupTag>(g);
        seen[static_cast<std::size_t>(z)] = true;
    }
    for (bool s : seen)
        if (!s) throw IoError("labels file does not cover every slice: " + path);
    return labels;
}

inline std::vector<SubjectFiles> discover_subjects(const std::string& dir, bool need_labels) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string fn = entry.path().filename().string();
        const std::string suffix = "_mask.nii";
        if (fn.size() > suffix.size() && fn.substr(fn.size() - suffix.size()) == suffix)
            names.push_back(fn.substr(0, fn.size() - suffix.size()));
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw ValidationError("no subjects found in " + dir);
    std::vector<SubjectFiles> out;
    std::vector<std::string> missing;
    for (const auto& name : names) {
        SubjectFiles f;
        f.name = name;
        f.volume_path = (fs::path(dir) / (name + ".nii")).string();
        f.mask_path = (fs::path(dir) / (name + "_mask.nii")).string();
        f.labels_path = (fs::path(dir) / (name + "_labels.csv")).string();
        if (!fs::exists(f.volume_path)) missing.push_back(f.volume_path);
        if (need_labels && !fs::exists(f.labels_path)) missing.push_back(f.labels_path);
        out.push_back(std::move(f));
    }
    if (!missing.empty()) {
        std::string msg = "missing files:";
        for (const auto& m : missing) msg += " " + m;
        throw ValidationError(msg);
    }
    return out;
}

inline TrainingSubject load_training_subject(const SubjectFiles& f) {
    TrainingSubject s;
    s.name = f.name;
    s.volume = read_volume(f.volume_path);
    s.gt = read_mask(f.mask_path);
    if (s.gt.width != s.volume.nx || s.gt.height != s.volume.ny || s.gt.depth != s.volume.nz)
        throw ValidationError("mask dims do not match volume for subject " + f.name);
    s.labels = read_labels_csv(f.labels_path, s.volume.nz);
    s.partition = partition_from_labels(s.labels);
    s.normalized = normalize_volume(s.volume);
    return s;
}

struct TrainOutput {
    ModelBundle bundle;
    std::vector<EpochStats> cnn_history;
    std::vector<CrfTuneTrial> crf_trials;
    double m12_accuracy = 0.0;
    double m23_accuracy = 0.0;
};

namespace pipeline_detail {

inline LandmarkShape init_shape_at(const ShapeModel& model, double cx, double cy) {
    LandmarkShape init = model.mean;
    const std::size_t n = init.size() / 2;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += init[2 * i];
        my += init[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        init[2 * i] += cx - mx;
        init[2 * i + 1] += cy - my;
    }
    return init;
}

inline Mask2D asm_segment_slice(const ImageF& norm_slice, const ShapeModel& shape_model,
                                const AppearanceModel& app, const AsmParams& params) {
    const SagittalSlice wrapped{0, norm_slice};
    const Rect rect = extract_skull_rect(wrapped);
    const LandmarkShape init =
        init_shape_at(shape_model, rect.x + 0.5 * (rect.w - 1), rect.y + 0.5 * (rect.h - 1));
    const SearchResult res = asm_search(norm_slice, shape_model, app, params, &init);
    return shape_to_mask(res.shape, norm_slice.width, norm_slice.height);
}

// ASM baseline with CNN re-classification of the boundary band.
inline ImageF refine_slice_map(const Volume& normalized, int z, const Mask2D& asm_mask,
                               const CnnModel& cnn, int band_distance) {
    ImageF map(asm_mask.width, asm_mask.height);
    for (std::size_t i = 0; i < asm_mask.data.size(); ++i)
        map.data[i] = asm_mask.data[i] ? 1.0f : 0.0f;
    const Mask2D band = boundary_band(asm_mask, band_distance);
    std::vector<PixelFeature> batch;
    std::vector<std::size_t> where;
    for (int y = 0; y < band.height; ++y)
        for (int x = 0; x < band.width; ++x)
            if (band.at(x, y)) {
                batch.push_back(extract_feature(normalized, x, y, z, cnn.spec.patch));
                where.push_back(static_cast<std::size_t>(y) * band.width + x);
            }
    if (!batch.empty()) {
        const std::vector<double> probs = cnn_classify(cnn, batch);
        for (std::size_t i = 0; i < where.size(); ++i)
            map.data[where[i]] = static_cast<float>(probs[i]);
    }
    return map;
}

// Group-I slices get CNN probabilities across the whole skull rectangle.
inline ImageF group_one_map(const Volume& normalized, const ImageF& norm_slice, int z,
                            const CnnModel& cnn) {
    const SagittalSlice wrapped{z, norm_slice};
    const Rect rect = extract_skull_rect(wrapped);
    ImageF map(norm_slice.width, norm_slice.height, 0.0f);
    std::vector<PixelFeature> batch;
    std::vector<std::size_t> where;
    for (int y = rect.y; y < rect.y + rect.h; ++y)
        for (int x = rect.x; x < rect.x + rect.w; ++x) {
            batch.push_back(extract_feature(normalized, x, y, z, cnn.spec.patch));
            where.push_back(static_cast<std::size_t>(y) * map.width + x);
        }
    const std::vector<double> probs = cnn_classify(cnn, batch);
    for (std::size_t i = 0; i < where.size(); ++i)
        map.data[where[i]] = static_cast<float>(probs[i]);
    return map;
}

}  // namespace pipeline_detail

inline TrainOutput train_models(const PipelineConfig& cfg, const std::string& train_dir) {
    const std::vector<SubjectFiles> files = discover_subjects(train_dir, true);
    std::vector<TrainingSubject> subjects;
    subjects.reserve(files.size());
    for (const auto& f : files) subjects.push_back(load_training_subject(f));

    TrainOutput out;
    ModelBundle& bundle = out.bundle;
    bundle.grouping = cfg.grouping;
    bundle.asm_params = cfg.asm_params;
    bundle.band_distance = cfg.band_distance;
    bundle.groupone = cfg.groupone;

    // 1. slice grouping classifiers and rates
    {
        std::vector<LabeledVolume> lv;
        for (const auto& s : subjects) lv.push_back(LabeledVolume{&s.volume, s.labels});
        GroupClassifiers gc = train_group_classifiers(lv, cfg.grouping);
        bundle.m12 = std::move(gc.m12);
        bundle.m23 = std::move(gc.m23);
        bundle.rates = gc.rates;
        out.m12_accuracy = gc.m12_accuracy;
        out.m23_accuracy = gc.m23_accuracy;
    }

    // 2. per-group shape and appearance models
    std::map<int, std::vector<std::pair<ImageF, Mask2D>>> group_slices;  // group -> (norm, gt)
    for (const auto& s : subjects)
        for (int z = 0; z < s.volume.nz; ++z) {
            const GroupTag g = s.labels[static_cast<std::size_t>(z)];
            if (g == GroupTag::I) continue;
            group_slices[static_cast<int>(g)].emplace_back(
                extract_sagittal_slice(s.normalized, z).pixels, s.gt.slice(z));
        }
    for (const GroupTag g : {GroupTag::II, GroupTag::III}) {
        const auto& pairs = group_slices[static_cast<int>(g)];
        if (pairs.size() < 2)
            throw ValidationError("training set has fewer than 2 slices for a group");
        std::vector<LandmarkShape> shapes;
        std::vector<TrainingSlice> tslices;
        for (const auto& [img, gt] : pairs) {
            shapes.push_back(landmarks_from_mask(gt, cfg.asm_params.n_landmarks));
            tslices.push_back(TrainingSlice{&img, &gt});
        }
        bundle.shape_models.emplace_back(
            g, build_shape_model(shapes, cfg.asm_params.f_v, cfg.asm_params.q));
        bundle.appearance_models.emplace_back(g, train_appearance_model(tslices, cfg.asm_params));
    }

    // 3. CNN training pool: band pixels around ASM masks for groups II/III,
    //    whole skull rectangle for group I; labels from ground truth.
    std::vector<Volume> norm_volumes;
    norm_volumes.reserve(subjects.size());
    for (const auto& s : subjects) norm_volumes.push_back(s.normalized);

    CnnDataset dataset;
    dataset.volumes = &norm_volumes;
    for (std::size_t si = 0; si < subjects.size(); ++si) {
        const TrainingSubject& s = subjects[si];
        std::vector<Mask2D> asm_masks(static_cast<std::size_t>(s.volume.nz));
        std::vector<int> ii_iii;
        for (int z = 0; z < s.volume.nz; ++z)
            if (s.labels[static_cast<std::size_t>(z)] != GroupTag::I) ii_iii.push_back(z);
        parallel_for(ii_iii.size(), cfg.jobs, [&](std::size_t k) {
            const int z = ii_iii[k];
            const GroupTag g = s.labels[static_cast<std::size_t>(z)];
            asm_masks[static_cast<std::size_t>(z)] = pipeline_detail::asm_segment_slice(
                extract_sagittal_slice(s.normalized, z).pixels, bundle.shape_model(g),
                bundle.appearance_model(g), cfg.asm_params);
        });
        for (int z = 0; z < s.volume.nz; ++z) {
            const GroupTag g = s.labels[static_cast<std::size_t>(z)];
            if (g != GroupTag::I) {
                const Mask2D band =
                    boundary_band(asm_masks[static_cast<std::size_t>(z)], cfg.band_distance);
                for (int y = 0; y < band.height; ++y)
                    for (int x = 0; x < band.width; ++x)
                        if (band.at(x, y))
                            dataset.samples.push_back(CnnSample{static_cast<int>(si), x, y, z,
                                                                s.gt.at(x, y, z)});
            } else {
                const SagittalSlice norm = extract_sagittal_slice(s.normalized, z);
                const Rect rect = extract_skull_rect(norm);
                for (int y = rect.y; y < rect.y + rect.h; ++y)
                    for (int x = rect.x; x < rect.x + rect.w; ++x)
                        dataset.samples.push_back(
                            CnnSample{static_cast<int>(si), x, y, z, s.gt.at(x, y, z)});
            }
        }
    }
    bundle.cnn = CnnModel(CnnSpec{});
    init_weights(bundle.cnn, Rng::derive(cfg.seed, 1001));
    CnnTrainConfig tc = cfg.cnn_train;
    tc.seed = Rng::derive(cfg.seed, 1002);
    out.cnn_history = cnn_train(bundle.cnn, dataset, tc);

    // 4. CRF parameter search on refined training maps
    {
        std::vector<CrfValidationPair> pairs;
        for (std::size_t si = 0; si < subjects.size(); ++si) {
            const TrainingSubject& s = subjects[si];
            std::vector<int> ii_iii;
            for (int z = 0; z < s.volume.nz; ++z)
                if (s.labels[static_cast<std::size_t>(z)] != GroupTag::I) ii_iii.push_back(z);
            const int stride = std::max(1, static_cast<int>(ii_iii.size()) / cfg.crf_val_slices);
            for (int k = 0; k < cfg.crf_val_slices && k * stride < static_cast<int>(ii_iii.size());
                 ++k) {
                const int z = ii_iii[static_cast<std::size_t>(k * stride + stride / 2) %
                                     ii_iii.size()];
                const GroupTag g = s.labels[static_cast<std::size_t>(z)];
                const ImageF norm_slice = extract_sagittal_slice(s.normalized, z).pixels;
                const Mask2D asm_mask = pipeline_detail::asm_segment_slice(
                    norm_slice, bundle.shape_model(g), bundle.appearance_model(g), cfg.asm_params);
                CrfValidationPair pair;
                pair.prob = pipeline_detail::refine_slice_map(s.normalized, z, asm_mask,
                                                              bundle.cnn, cfg.band_distance);
                pair.intensity = norm_slice;
                pair.gt = s.gt.slice(z);
                pairs.push_back(std::move(pair));
            }
        }
        CrfParams base = cfg.crf;  // w2 and sigma_gamma stay fixed
        CrfTuneResult tuned =
            tune_params(pairs, base, cfg.crf_tune_trials, Rng::derive(cfg.seed, 1003));
        bundle.crf = tuned.params;
        out.crf_trials = std::move(tuned.log);
    }

    // 5. GP over centroid-norm trajectories + mean shift and span statistics
    {
        std::vector<GpSubject> gp_subjects;
        double start_acc = 0.0, end_acc = 0.0;
        for (const auto& s : subjects) {
            GpSubject gs;
            int first = -1, last = -1;
            for (int z = 0; z < s.volume.nz; ++z) {
                const Mask2D m = s.gt.slice(z);
                if (m.data.empty()) continue;
                bool nonempty = false;
                for (auto v : m.data)
                    if (v) {
                        nonempty = true;
                        break;
                    }
                if (!nonempty) continue;
                if (first < 0) first = z;
                last = z;
                gs.positions.push_back(static_cast<double>(z));
                gs.targets.push_back(centroid_norm(m));
            }
            if (gs.positions.size() < 3)
                throw ValidationError("subject " + s.name + " has fewer than 3 brain slices");
            gp_subjects.push_back(std::move(gs));
            start_acc += static_cast<double>(first) / s.volume.nz;
            end_acc += static_cast<double>(last) / s.volume.nz;
        }
        bundle.gp = gp_fit(gp_subjects);
        bundle.start_frac = start_acc / static_cast<double>(subjects.size());
        bundle.end_frac = end_acc / static_cast<double>(subjects.size());

        std::vector<std::pair<double, double>> obs;
        for (const auto& s : subjects) {
            int first = -1, last = -1;
            for (int z = 0; z < s.volume.nz; ++z) {
                bool nonempty = false;
                const Mask2D m = s.gt.slice(z);
                for (auto v : m.data)
                    if (v) {
                        nonempty = true;
                        break;
                    }
                if (nonempty) {
                    if (first < 0) first = z;
                    last = z;
                }
            }
            for (int z = 0; z < s.volume.nz; ++z) {
                if (s.labels[static_cast<std::size_t>(z)] == GroupTag::I) continue;
                const Mask2D m = s.gt.slice(z);
                obs.emplace_back(convert_range(first, last, 1.0, 100.0, z), centroid_norm(m));
            }
        }
        bundle.alpha_shift = estimate_shift(obs, bundle.gp);
    }
    return out;
}

// ---- segmentation ----

struct SegmentationResult {
    BinaryMask mask;
    GroupPartition partition;
};

inline SegmentationResult segment_volume(const PipelineConfig& cfg, const ModelBundle& bundle,
                                         const Volume& volume) {
    const Volume normalized = normalize_volume(volume);
    const std::vector<ImageF> norm_slices = volume_slices(normalized);
    const int nz = volume.nz;

    SegmentationResult result;
    result.partition = assign_groups(volume, bundle.m12, bundle.m23, bundle.rates, bundle.grouping);
    const GroupPartition& part = result.partition;
    result.mask = BinaryMask(volume.nx, volume.ny, nz);

    // groups II/III: ASM -> CNN band refinement -> CRF
    std::vector<int> ii_iii;
    for (int z = 0; z < nz; ++z)
        if (part.labels[static_cast<std::size_t>(z)] != GroupTag::I) ii_iii.push_back(z);
    if (ii_iii.empty()) throw StateError("segment: partition has no group II/III slices");
    std::vector<Mask2D> finals(static_cast<std::size_t>(nz));
    parallel_for(ii_iii.size(), cfg.jobs, [&](std::size_t k) {
        const int z = ii_iii[k];
        const GroupTag g = part.labels[static_cast<std::size_t>(z)];
        const Mask2D asm_mask = pipeline_detail::asm_segment_slice(
            norm_slices[static_cast<std::size_t>(z)], bundle.shape_model(g),
            bundle.appearance_model(g), bundle.asm_params);
        const ImageF map = pipeline_detail::refine_slice_map(normalized, z, asm_mask, bundle.cnn,
                                                             bundle.band_distance);
        finals[static_cast<std::size_t>(z)] =
            mean_field(unary_from_probs(map), norm_slices[static_cast<std::size_t>(z)], bundle.crf)
                .map;
    });

    // per-subject translation correction from the group II/III results
    const int span_b = std::clamp(static_cast<int>(std::lround(bundle.start_frac * nz)), 0, nz - 1);
    const int span_e = std::clamp(static_cast<int>(std::lround(bundle.end_frac * nz)), span_b,
                                  nz - 1);
    std::vector<std::pair<double, double>> obs;
    for (int z : ii_iii) {
        const Mask2D& m = finals[static_cast<std::size_t>(z)];
        if (count_nonzero(m) == 0) continue;
        obs.emplace_back(convert_range(span_b, span_e, 1.0, 100.0, z), centroid_norm(m));
    }
    const double alpha_shift = obs.empty() ? bundle.alpha_shift : estimate_shift(obs, bundle.gp);

    // group I: CNN probability maps over the skull rectangle, then the cascade
    std::vector<ImageF> prob_maps(static_cast<std::size_t>(nz));
    std::vector<int> group_i;
    for (int z = span_b; z <= span_e; ++z)
        if (part.labels[static_cast<std::size_t>(z)] == GroupTag::I) group_i.push_back(z);
    parallel_for(group_i.size(), cfg.jobs, [&](std::size_t k) {
        const int z = group_i[k];
        prob_maps[static_cast<std::size_t>(z)] = pipeline_detail::group_one_map(
            normalized, norm_slices[static_cast<std::size_t>(z)], z, bundle.cnn);
    });

    const int low_m = part.k1 - 1;   // last group-I slice below group II
    const int high_q1 = part.k4;     // first group-I slice above group II
    const Mask2D& anchor_low = finals[static_cast<std::size_t>(std::min(part.k1, nz - 1))];
    const Mask2D& anchor_high = finals[static_cast<std::size_t>(std::max(part.k4 - 1, 0))];
    const auto steps = process_group_one(prob_maps, norm_slices, span_b, low_m, high_q1, span_e,
                                         anchor_low, anchor_high, bundle.gp, alpha_shift,
                                         bundle.crf, bundle.groupone);
    for (const auto& step : steps) finals[static_cast<std::size_t>(step.z)] = step.final_mask;

    for (int z = 0; z < nz; ++z)
        if (!finals[static_cast<std::size_t>(z)].data.empty())
            result.mask.set_slice(z, finals[static_cast<std::size_t>(z)]);
    return result;
}

// ---- evaluation ----

struct EvaluationOutput {
    MetricReport report;
    std::vector<ReportRow> rows;
    std::vector<BoxplotData> boxplots;
};

namespace pipeline_detail {

inline double metric_or_nan(const std::function<double()>& fn) {
    try {
        return fn();
    } catch (const NumericError&) {
        return std::numeric_limits<double>::quiet_NaN();
    } catch (const ValidationError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

inline MetricRow metric_row(const std::string& entity, const BinaryMask& pred,
                            const BinaryMask& gt) {
    const Confusion c = confusion(pred, gt);
    MetricRow row;
    row.entity = entity;
    row.dice = dice(c);
    row.jaccard = jaccard(c);
    row.sensitivity = metric_or_nan([&] { return sensitivity(c); });
    row.specificity = metric_or_nan([&] { return specificity(c); });
    row.ahd = metric_or_nan([&] { return ahd(pred, gt); });
    return row;
}

}  // namespace pipeline_detail

inline EvaluationOutput evaluate_masks(
    const std::vector<std::pair<std::string, std::pair<BinaryMask, BinaryMask>>>& named_pairs,
    const std::string& mode) {
    if (mode != "2d" && mode != "3d") throw ValidationError("evaluate: mode must be 2d or 3d");
    std::vector<MetricRow> rows;
    for (const auto& [name, pair] : named_pairs) {
        const BinaryMask& pred = pair.first;
        const BinaryMask& gt = pair.second;
        if (!pred.same_dims(gt))
            throw ValidationError("evaluate: dims differ for subject " + name);
        if (mode == "3d") {
            rows.push_back(pipeline_detail::metric_row(name, pred, gt));
        } else {
            for (int z = 0; z < pred.depth; ++z) {
                const BinaryMask ps = BinaryMask::from_slice(pred.slice(z));
                const BinaryMask gs = BinaryMask::from_slice(gt.slice(z));
                if (ps.count() == 0 && gs.count() == 0) continue;  // nothing to score
                char ent[64];
                std::snprintf(ent, sizeof(ent), "%s/z%03d", name.c_str(), z);
                rows.push_back(pipeline_detail::metric_row(ent, ps, gs));
            }
        }
    }
    EvaluationOutput out;
    out.report = aggregate(rows);

    auto push_rows = [&](const char* metric, auto member) {
        std::vector<double> vals;
        for (const auto& r : rows) {
            out.rows.push_back(ReportRow{r.entity, metric, mode, r.*member});
            vals.push_back(r.*member);
        }
        const MetricAggregate agg = aggregate_values(vals);
        out.rows.push_back(ReportRow{"(mean)", metric, mode, agg.mean});
        out.rows.push_back(ReportRow{"(sd)", metric, mode, agg.sd});
        out.boxplots.push_back(boxplot_data(metric, vals));
    };
    push_rows("dice", &MetricRow::dice);
    push_rows("jaccard", &MetricRow::jaccard);
    push_rows("ahd", &MetricRow::ahd);
    push_rows("sensitivity", &MetricRow::sensitivity);
    push_rows("specificity", &MetricRow::specificity);
    return out;
}

inline EvaluationOutput evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir,
                                      const std::string& mode) {
    auto list_masks = [](const std::string& dir) {
        if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
        std::vector<std::string> names;
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string fn = entry.path().filename().string();
            if (fn.size() > 4 && fn.substr(fn.size() - 4) == ".nii") names.push_back(fn);
        }
        std::sort(names.begin(), names.end());
        return names;
    };
    const auto pred_names = list_masks(pred_dir);
    const auto gt_names = list_masks(gt_dir);
    std::string orphans;
    for (const auto& n : pred_names)
        if (std::find(gt_names.begin(), gt_names.end(), n) == gt_names.end())
            orphans += " pred:" + n;
    for (const auto& n : gt_names)
        if (std::find(pred_names.begin(), pred_names.end(), n) == pred_names.end())
            orphans += " gt:" + n;
    if (!orphans.empty()) throw ValidationError("evaluate: unmatched mask files:" + orphans);
    if (pred_names.empty()) throw ValidationError("evaluate: no mask files found");

    std::vector<std::pair<std::string, std::pair<BinaryMask, BinaryMask>>> pairs;
    for (const auto& n : pred_names) {
        BinaryMask pred = read_mask((fs::path(pred_dir) / n).string());
        BinaryMask gt = read_mask((fs::path(gt_dir) / n).string());
        pairs.emplace_back(n.substr(0, n.size() - 4),
                           std::make_pair(std::move(pred), std::move(gt)));
    }
    return evaluate_masks(pairs, mode);
}

}  // namespace brainext
