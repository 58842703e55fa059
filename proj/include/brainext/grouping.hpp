#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "brainext/common.hpp"
#include "brainext/core.hpp"
#include "brainext/image.hpp"

namespace brainext {

// Canonical HOG geometry: 64x64 resize, 9 unsigned bins, 8px cells, 2x2 blocks.
struct HogConfig {
    int resize = 64;
    int cell_size = 8;
    int block_size = 2;  // cells per block side
    int n_bins = 9;
};

struct HogDescriptor {
    HogConfig config;
    std::vector<double> values;
};

// Tight bounding box of the largest connected component after Otsu
// thresholding. Degenerate slices fall back to the full image.
inline Rect extract_skull_rect(const SagittalSlice& s) {
    const ImageF& img = s.pixels;
    const double thr = otsu_threshold(img);
    Mask2D fg(img.width, img.height, 0);
    bool any = false;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (img.at(x, y) > thr) {
                fg.at(x, y) = 1;
                any = true;
            }
    if (!any) return Rect{0, 0, img.width, img.height};
    const ComponentMap cm = label_components(fg, 8);
    const Component* best = &cm.components.front();
    for (const auto& c : cm.components)
        if (c.area > best->area) best = &c;
    return Rect{best->min_x, best->min_y, best->max_x - best->min_x + 1,
                best->max_y - best->min_y + 1};
}

// Lower-left k-fraction of a rectangle, at least 1x1.
inline Rect extract_subrect(const Rect& rect, double k) {
    if (!(k > 0.0) || k > 1.0) throw ValidationError("subrect fraction k must be in (0, 1]");
    const int w = std::max(1, static_cast<int>(std::lround(rect.w * k)));
    const int h = std::max(1, static_cast<int>(std::lround(rect.h * k)));
    return Rect{rect.x, rect.y + rect.h - h, w, h};
}

// HOG over a sub-rectangle: resize to 64x64, central-difference gradients,
// hard orientation binning over [0,180), per-block L2 normalization.
inline HogDescriptor hog(const SagittalSlice& s, const Rect& rect, const HogConfig& cfg = {}) {
    if (rect.x < 0 || rect.y < 0 || rect.x + rect.w > s.pixels.width ||
        rect.y + rect.h > s.pixels.height || rect.w < 1 || rect.h < 1)
        throw ValidationError("hog: rect outside slice");
    const ImageF sub = resize_bilinear(crop(s.pixels, rect), cfg.resize, cfg.resize);

    const int n_cells = cfg.resize / cfg.cell_size;
    std::vector<double> cell_hist(static_cast<std::size_t>(n_cells) * n_cells * cfg.n_bins, 0.0);
    for (int y = 1; y < sub.height - 1; ++y)
        for (int x = 1; x < sub.width - 1; ++x) {
            const double gx = 0.5 * (sub.at(x + 1, y) - sub.at(x - 1, y));
            const double gy = 0.5 * (sub.at(x, y + 1) - sub.at(x, y - 1));
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag <= 0.0) continue;
            double theta = std::atan2(gy, gx) * 180.0 / M_PI;  // (-180,180]
            if (theta < 0.0) theta += 180.0;                   // unsigned
            if (theta >= 180.0) theta -= 180.0;
            const int bin = std::min(cfg.n_bins - 1,
                                     static_cast<int>(theta / (180.0 / cfg.n_bins)));
            const int cx = std::min(n_cells - 1, x / cfg.cell_size);
            const int cy = std::min(n_cells - 1, y / cfg.cell_size);
            cell_hist[(static_cast<std::size_t>(cy) * n_cells + cx) * cfg.n_bins + bin] += mag;
        }

    const int n_blocks = n_cells - cfg.block_size + 1;
    const int block_dim = cfg.block_size * cfg.block_size * cfg.n_bins;
    HogDescriptor desc;
    desc.config = cfg;
    desc.values.assign(static_cast<std::size_t>(n_blocks) * n_blocks * block_dim, 0.0);
    std::size_t out = 0;
    for (int by = 0; by < n_blocks; ++by)
        for (int bx = 0; bx < n_blocks; ++bx) {
            double norm2 = 0.0;
            const std::size_t start = out;
            for (int cy = 0; cy < cfg.block_size; ++cy)
                for (int cx = 0; cx < cfg.block_size; ++cx)
                    for (int b = 0; b < cfg.n_bins; ++b) {
                        const double v = cell_hist[(static_cast<std::size_t>(by + cy) * n_cells +
                                                    (bx + cx)) * cfg.n_bins + b];
                        desc.values[out++] = v;
                        norm2 += v * v;
                    }
            const double inv = 1.0 / std::sqrt(norm2 + 1e-12);
            for (std::size_t i = start; i < out; ++i) desc.values[i] *= inv;
        }
    return desc;
}

struct LinearSvm {
    std::vector<double> w;
    double b = 0.0;
    bool trained = false;

    double decision(const std::vector<double>& f) const {
        if (!trained) throw StateError("svm: model not trained");
        if (f.size() != w.size()) throw ValidationError("svm: feature dimension mismatch");
        double acc = b;
        for (std::size_t i = 0; i < f.size(); ++i) acc += w[i] * f[i];
        return acc;
    }
    int predict(const std::vector<double>& f) const { return decision(f) > 0.0 ? 1 : 0; }
};

struct SvmTrainResult {
    LinearSvm model;
    double train_accuracy = 0.0;
};

// Full-batch subgradient descent on hinge loss + L2. Batch averaging keeps the
// result invariant to duplicating every example.
inline SvmTrainResult svm_train(const std::vector<std::vector<double>>& features,
                                const std::vector<int>& labels, int epochs = 300,
                                double lr = 0.5, double reg = 1e-4) {
    if (features.size() != labels.size() || features.empty())
        throw ValidationError("svm_train: features/labels size mismatch or empty");
    const std::size_t dim = features.front().size();
    for (const auto& f : features)
        if (f.size() != dim) throw ValidationError("svm_train: inconsistent feature length");
    bool has0 = false, has1 = false;
    for (int l : labels) {
        if (l == 0) has0 = true;
        else if (l == 1) has1 = true;
        else throw ValidationError("svm_train: labels must be 0 or 1");
    }
    if (!has0 || !has1) throw ValidationError("svm_train: need at least one example per class");

    LinearSvm svm;
    svm.w.assign(dim, 0.0);
    svm.b = 0.0;
    const double n = static_cast<double>(features.size());
    std::vector<double> gw(dim);
    for (int e = 0; e < epochs; ++e) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < features.size(); ++i) {
            const double y = labels[i] == 1 ? 1.0 : -1.0;
            double m = svm.b;
            const auto& f = features[i];
            for (std::size_t d = 0; d < dim; ++d) m += svm.w[d] * f[d];
            if (y * m < 1.0) {
                for (std::size_t d = 0; d < dim; ++d) gw[d] -= y * f[d];
                gb -= y;
            }
        }
        const double step = lr / (1.0 + 0.01 * e);
        for (std::size_t d = 0; d < dim; ++d)
            svm.w[d] -= step * (gw[d] / n + reg * svm.w[d]);
        svm.b -= step * (gb / n);
    }
    svm.trained = true;

    std::size_t correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i)
        if (svm.predict(features[i]) == labels[i]) ++correct;
    return SvmTrainResult{std::move(svm), static_cast<double>(correct) / n};
}

struct GroupRates {
    double r1 = 0.0, r2 = 0.0, r3 = 0.0, r4 = 0.0;
    void validate() const {
        if (!(r1 > 0.0 && r1 < r2 && r2 < r3 && r3 < r4 && r4 < 1.0))
            throw ValidationError("group rates must satisfy 0 < R1 < R2 < R3 < R4 < 1");
    }
};

struct GroupingParams {
    double subrect_k = 0.6;
    int svm_epochs = 300;
    double svm_lr = 0.5;
    double svm_reg = 1e-4;
    HogConfig hog;
};

struct GroupClassifiers {
    LinearSvm m12;  // outputs 1 for group I, 0 for group II
    LinearSvm m23;  // outputs 1 for group II, 0 for group III
    GroupRates rates;
    double m12_accuracy = 0.0;
    double m23_accuracy = 0.0;
};

struct LabeledVolume {
    const Volume* volume = nullptr;
    std::vector<GroupTag> labels;
};

inline std::vector<double> grouping_feature(const SagittalSlice& normalized,
                                            const GroupingParams& p) {
    const Rect rect = extract_skull_rect(normalized);
    const Rect sub = extract_subrect(rect, p.subrect_k);
    return hog(normalized, sub, p.hog).values;
}

// Train M12/M23 and position rates from ground-truth labeled subjects.
inline GroupClassifiers train_group_classifiers(const std::vector<LabeledVolume>& subjects,
                                                const GroupingParams& params = {}) {
    if (subjects.empty()) throw ValidationError("train_group_classifiers: no subjects");
    std::vector<std::vector<double>> f1, f2, f3;
    double sr1 = 0.0, sr2 = 0.0, sr3 = 0.0, sr4 = 0.0;
    for (const auto& sub : subjects) {
        const Volume& v = *sub.volume;
        if (static_cast<int>(sub.labels.size()) != v.nz)
            throw ValidationError("train_group_classifiers: labels must cover every slice");
        const GroupPartition part = partition_from_labels(sub.labels);
        const double n = static_cast<double>(v.nz);
        sr1 += part.k1 / n;
        sr2 += part.k2 / n;
        sr3 += part.k3 / n;
        sr4 += part.k4 / n;
        for (int z = 0; z < v.nz; ++z) {
            const SagittalSlice norm = normalize_intensity(extract_sagittal_slice(v, z));
            auto feat = grouping_feature(norm, params);
            switch (sub.labels[static_cast<std::size_t>(z)]) {
                case GroupTag::I: f1.push_back(std::move(feat)); break;
                case GroupTag::II: f2.push_back(std::move(feat)); break;
                case GroupTag::III: f3.push_back(std::move(feat)); break;
            }
        }
    }
    const double m = static_cast<double>(subjects.size());
    GroupClassifiers out;
    out.rates = GroupRates{sr1 / m, sr2 / m, sr3 / m, sr4 / m};
    out.rates.validate();

    auto make_set = [](const std::vector<std::vector<double>>& pos,
                       const std::vector<std::vector<double>>& neg) {
        std::vector<std::vector<double>> feats;
        std::vector<int> labels;
        feats.reserve(pos.size() + neg.size());
        for (const auto& f : pos) {
            feats.push_back(f);
            labels.push_back(1);
        }
        for (const auto& f : neg) {
            feats.push_back(f);
            labels.push_back(0);
        }
        return std::make_pair(std::move(feats), std::move(labels));
    };
    {
        auto [feats, labels] = make_set(f1, f2);
        auto res = svm_train(feats, labels, params.svm_epochs, params.svm_lr, params.svm_reg);
        out.m12 = std::move(res.model);
        out.m12_accuracy = res.train_accuracy;
    }
    {
        auto [feats, labels] = make_set(f2, f3);
        auto res = svm_train(feats, labels, params.svm_epochs, params.svm_lr, params.svm_reg);
        out.m23 = std::move(res.model);
        out.m23_accuracy = res.train_accuracy;
    }
    return out;
}

// One boundary cut: scan 1-based slice ids inside [rate*n - 10, rate*n + 10]
// for the first slice where the classifier outputs `want`; the cut is id-1 on
// a flip and the rate-predicted id otherwise.
inline int boundary_cut(const std::function<int(int)>& predict_slice0, double rate, int n,
                        int want, int min_k) {
    const double center = rate * n;
    const int lo = static_cast<int>(std::ceil(center - 10.0));
    const int hi = static_cast<int>(std::floor(center + 10.0));
    int k = std::clamp(static_cast<int>(std::lround(center)), min_k, n);
    for (int id = lo; id <= hi; ++id) {
        if (id < 1 || id > n) continue;
        if (id - 1 < min_k) continue;
        if (predict_slice0(id - 1) == want) {
            k = id - 1;
            break;
        }
    }
    return std::clamp(k, min_k, n);
}

// Scan a +-10 window around each rate-predicted boundary for the first
// classifier flip; fall back to the rate-predicted cut when no flip occurs.
inline GroupPartition assign_groups(const Volume& v, const LinearSvm& m12, const LinearSvm& m23,
                                    const GroupRates& rates, const GroupingParams& params = {}) {
    if (!m12.trained || !m23.trained) throw StateError("assign_groups: classifiers not trained");
    if (v.nz <= 40) throw ValidationError("assign_groups: volume must have more than 40 slices");
    rates.validate();
    const int n = v.nz;

    std::vector<std::vector<double>> feats(static_cast<std::size_t>(n));
    std::vector<bool> have(static_cast<std::size_t>(n), false);
    auto feature_at = [&](int z) -> const std::vector<double>& {
        if (!have[static_cast<std::size_t>(z)]) {
            const SagittalSlice norm = normalize_intensity(extract_sagittal_slice(v, z));
            feats[static_cast<std::size_t>(z)] = grouping_feature(norm, params);
            have[static_cast<std::size_t>(z)] = true;
        }
        return feats[static_cast<std::size_t>(z)];
    };
    auto pred12 = [&](int z) { return m12.predict(feature_at(z)); };
    auto pred23 = [&](int z) { return m23.predict(feature_at(z)); };

    const int k1 = boundary_cut(pred12, rates.r1, n, 0, 0);
    const int k2 = boundary_cut(pred23, rates.r2, n, 0, k1);
    const int k3 = boundary_cut(pred23, rates.r3, n, 1, k2);
    const int k4 = boundary_cut(pred12, rates.r4, n, 1, k3);
    return GroupPartition::from_boundaries(k1, k2, k3, k4, n);
}

}  // namespace brainext
