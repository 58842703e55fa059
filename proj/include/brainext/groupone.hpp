#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "brainext/common.hpp"
#include "brainext/core.hpp"
#include "brainext/crf.hpp"
#include "brainext/image.hpp"
#include "brainext/linalg.hpp"

namespace brainext {

// Linear map of x from [A,B] onto [C,D].
inline double convert_range(double a, double b, double c, double d, double x) {
    if (b == a) throw ValidationError("convert_range: degenerate source range");
    return c + (x - a) * (d - c) / (b - a);
}

// Euclidean norm of the (row, col) centroid of the foreground.
inline double centroid_norm(const Mask2D& mask) {
    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                sx += x;
                sy += y;
                ++n;
            }
    if (n == 0) throw ValidationError("centroid_norm: empty mask");
    const double cx = sx / static_cast<double>(n);
    const double cy = sy / static_cast<double>(n);
    return std::hypot(cy, cx);
}

// Squared-exponential GP over normalized slice positions. Targets are
// centered on their mean so a constant trajectory is reproduced exactly.
struct GpModel {
    std::vector<double> x, y;  // pooled training points (y centered)
    double y_mean = 0.0;
    double ell = 10.0, sf2 = 1.0, sn2 = 0.1;
    Mat chol;
    std::vector<double> alpha;
    bool fitted = false;

    double kernel(double a, double b) const {
        const double d = a - b;
        return sf2 * std::exp(-0.5 * d * d / (ell * ell));
    }
};

struct GpSubject {
    std::vector<double> positions;  // raw slice positions, strictly increasing
    std::vector<double> targets;    // centroid norms
};

inline GpModel gp_fit_fixed(const std::vector<double>& x, const std::vector<double>& y_raw,
                            double ell, double sf2, double sn2) {
    if (x.size() != y_raw.size() || x.size() < 3)
        throw ValidationError("gp_fit: need at least 3 points");
    GpModel m;
    m.x = x;
    m.ell = ell;
    m.sf2 = sf2;
    m.sn2 = sn2;
    m.y_mean = 0.0;
    for (double v : y_raw) m.y_mean += v;
    m.y_mean /= static_cast<double>(y_raw.size());
    m.y.resize(y_raw.size());
    for (std::size_t i = 0; i < y_raw.size(); ++i) m.y[i] = y_raw[i] - m.y_mean;

    const std::size_t n = x.size();
    Mat k(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) k.at(i, j) = m.kernel(x[i], x[j]);
        k.at(i, i) += sn2;
    }
    m.chol = cholesky(k);
    m.alpha = cholesky_solve(m.chol, m.y);
    m.fitted = true;
    return m;
}

inline double gp_log_marginal_likelihood(const GpModel& m) {
    double fit = 0.0;
    for (std::size_t i = 0; i < m.y.size(); ++i) fit += m.y[i] * m.alpha[i];
    return -0.5 * fit - 0.5 * cholesky_logdet(m.chol) -
           0.5 * static_cast<double>(m.y.size()) * std::log(2.0 * M_PI);
}

// Pool subjects onto [1,100], then pick hyperparameters from a small grid by
// log marginal likelihood.
inline GpModel gp_fit(const std::vector<GpSubject>& subjects) {
    std::vector<double> xs, ys;
    for (const auto& s : subjects) {
        if (s.positions.size() != s.targets.size())
            throw ValidationError("gp_fit: positions/targets mismatch");
        if (s.positions.size() < 3) throw ValidationError("gp_fit: subject needs >= 3 slices");
        for (std::size_t i = 1; i < s.positions.size(); ++i)
            if (!(s.positions[i] > s.positions[i - 1]))
                throw ValidationError("gp_fit: positions must be strictly increasing");
        const double lo = s.positions.front(), hi = s.positions.back();
        for (std::size_t i = 0; i < s.positions.size(); ++i) {
            xs.push_back(convert_range(lo, hi, 1.0, 100.0, s.positions[i]));
            ys.push_back(s.targets[i]);
        }
    }
    if (xs.size() < 3) throw ValidationError("gp_fit: need at least 3 pooled points");

    double mean = 0.0;
    for (double v : ys) mean += v;
    mean /= static_cast<double>(ys.size());
    double var = 0.0;
    for (double v : ys) var += (v - mean) * (v - mean);
    var = std::max(var / static_cast<double>(ys.size()), 1e-8);

    static const double kEll[4] = {5.0, 10.0, 20.0, 40.0};
    static const double kSf[3] = {0.5, 1.0, 2.0};
    static const double kSn[3] = {0.01, 0.1, 1.0};
    GpModel best;
    double best_lml = -1e300;
    for (double ell : kEll)
        for (double sf : kSf)
            for (double sn : kSn) {
                GpModel m = gp_fit_fixed(xs, ys, ell, sf * var, sn * var);
                const double lml = gp_log_marginal_likelihood(m);
                if (lml > best_lml) {
                    best_lml = lml;
                    best = std::move(m);
                }
            }
    return best;
}

struct GpPrediction {
    double mean = 0.0;
    double variance = 0.0;
};

inline GpPrediction gp_predict(const GpModel& m, double x_star) {
    if (!m.fitted) throw StateError("gp_predict: model not fitted");
    const std::size_t n = m.x.size();
    std::vector<double> ks(n);
    for (std::size_t i = 0; i < n; ++i) ks[i] = m.kernel(x_star, m.x[i]);
    GpPrediction p;
    p.mean = m.y_mean;
    for (std::size_t i = 0; i < n; ++i) p.mean += ks[i] * m.alpha[i];
    const std::vector<double> v = cholesky_solve(m.chol, ks);
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) quad += ks[i] * v[i];
    p.variance = std::max(0.0, m.sf2 - quad);
    return p;
}

// Mean deviation of observed centroid norms from the GP prediction.
inline double estimate_shift(const std::vector<std::pair<double, double>>& position_and_norm,
                             const GpModel& m) {
    if (position_and_norm.empty())
        throw ValidationError("estimate_shift: no usable group II/III slices");
    double acc = 0.0;
    for (const auto& [pos, norm] : position_and_norm) acc += norm - gp_predict(m, pos).mean;
    return acc / static_cast<double>(position_and_norm.size());
}

// ---- rule cascade ----

struct GroupOneParams {
    double alpha_area = 0.4;
    double beta_dist = 1.75;
    int denoise_min_area = 5;

    void validate() const {
        if (!(alpha_area > 0.0 && alpha_area <= 1.0))
            throw ValidationError("groupone alpha must be in (0,1]");
        if (!(beta_dist >= 1.0)) throw ValidationError("groupone beta must be >= 1");
    }
};

// Remove components of X whose centroid falls outside the bounding box of Y's
// foreground (closed box); empty Y leaves X unchanged.
inline Mask2D check_center(const Mask2D& x, const Mask2D& y) {
    int min_x = y.width, min_y = y.height, max_x = -1, max_y = -1;
    for (int yy = 0; yy < y.height; ++yy)
        for (int xx = 0; xx < y.width; ++xx)
            if (y.at(xx, yy)) {
                min_x = std::min(min_x, xx);
                max_x = std::max(max_x, xx);
                min_y = std::min(min_y, yy);
                max_y = std::max(max_y, yy);
            }
    if (max_x < 0) return x;  // degenerate reference: keep everything
    const ComponentMap cm = label_components(x, 8);
    std::vector<bool> keep(cm.components.size());
    for (std::size_t i = 0; i < cm.components.size(); ++i) {
        const Component& c = cm.components[i];
        keep[i] = c.centroid_x >= min_x && c.centroid_x <= max_x && c.centroid_y >= min_y &&
                  c.centroid_y <= max_y;
    }
    return filter_components(x, cm, keep);
}

// Remove components with area strictly below alpha * max area.
inline Mask2D check_area(const Mask2D& x, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("check_area: alpha must be in (0,1]");
    const ComponentMap cm = label_components(x, 8);
    if (cm.components.empty()) return x;
    int max_area = 0;
    for (const auto& c : cm.components) max_area = std::max(max_area, c.area);
    const double threshold = alpha * max_area;
    std::vector<bool> keep(cm.components.size());
    for (std::size_t i = 0; i < cm.components.size(); ++i)
        keep[i] = !(cm.components[i].area < threshold);
    return filter_components(x, cm, keep);
}

// Remove components whose |d - ||centroid||| deviation is strictly above
// beta * the smallest deviation.
inline Mask2D check_distance(const Mask2D& x, double d, double beta) {
    if (!(beta >= 1.0)) throw ValidationError("check_distance: beta must be >= 1");
    const ComponentMap cm = label_components(x, 8);
    if (cm.components.empty()) return x;
    std::vector<double> dif(cm.components.size());
    double dif_min = 1e300;
    for (std::size_t i = 0; i < cm.components.size(); ++i) {
        const Component& c = cm.components[i];
        dif[i] = std::fabs(d - std::hypot(c.centroid_y, c.centroid_x));
        dif_min = std::min(dif_min, dif[i]);
    }
    const double threshold = beta * dif_min;
    std::vector<bool> keep(cm.components.size());
    for (std::size_t i = 0; i < cm.components.size(); ++i) keep[i] = !(dif[i] > threshold);
    return filter_components(x, cm, keep);
}

// Keep Y's core, take X inside Y's inner boundary ring of width alpha, then
// fill small holes.
inline Mask2D merge_slice(const Mask2D& x, const Mask2D& y, double alpha) {
    if (!x.same_dims(y)) throw ValidationError("merge_slice: dims differ");
    const Mask2D core = erode_disk(y, alpha);
    Mask2D z(x.width, x.height, 0);
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        const bool in_ring = y.data[i] && !core.data[i];
        z.data[i] = (y.data[i] && !in_ring) || (x.data[i] && in_ring) ? 1 : 0;
    }
    return fill_small_holes(z, 10);
}

struct GroupOneStep {
    int z = 0;
    Mask2D final_mask;
    double predicted_distance = 0.0;
};

// One cascade sweep: slices in `order` are cleaned against the running
// reference, gated by the GP-predicted centroid distance, and finished by CRF.
inline std::vector<GroupOneStep> group_one_sweep(
    const std::vector<int>& order, const std::vector<ImageF>& prob_maps,
    const std::vector<ImageF>& intensities, const Mask2D& anchor, const GpModel& gp,
    double alpha_shift, int span_b, int span_e, const CrfParams& crf_params,
    const GroupOneParams& params) {
    params.validate();
    if (count_nonzero(anchor) == 0) throw ValidationError("group_one_sweep: empty anchor");
    std::vector<GroupOneStep> out;
    Mask2D reference = anchor;
    for (int z : order) {
        const ImageF& prob = prob_maps[static_cast<std::size_t>(z)];
        Mask2D c(prob.width, prob.height, 0);
        for (std::size_t i = 0; i < prob.data.size(); ++i)
            c.data[i] = prob.data[i] >= 0.5f ? 1 : 0;
        const Mask2D detected = c;
        c = remove_small_components(c, params.denoise_min_area);
        c = check_center(c, reference);
        c = check_area(c, params.alpha_area);
        const double pos = convert_range(span_b, span_e, 1.0, 100.0, z);
        const double d = gp_predict(gp, pos).mean + alpha_shift;
        if (count_nonzero(c) > 0) c = check_distance(c, d, params.beta_dist);

        // CRF unary: keep CNN probabilities except on vetoed detections.
        ImageF gated = prob;
        for (std::size_t i = 0; i < gated.data.size(); ++i)
            if (detected.data[i] && !c.data[i]) gated.data[i] = 0.0f;
        const CrfResult res =
            mean_field(unary_from_probs(gated), intensities[static_cast<std::size_t>(z)],
                       crf_params);
        GroupOneStep step;
        step.z = z;
        step.final_mask = res.map;
        step.predicted_distance = d;
        reference = step.final_mask;
        out.push_back(std::move(step));
    }
    return out;
}

// Both sweeps of the cascade: descending from the lower group II anchor and
// ascending from the upper one. Slices outside [span_b, span_e] are left to
// the caller (they stay empty).
inline std::vector<GroupOneStep> process_group_one(
    const std::vector<ImageF>& prob_maps, const std::vector<ImageF>& intensities, int span_b,
    int low_m, int high_q1, int span_e, const Mask2D& anchor_low, const Mask2D& anchor_high,
    const GpModel& gp, double alpha_shift, const CrfParams& crf_params,
    const GroupOneParams& params) {
    std::vector<GroupOneStep> all;
    std::vector<int> low_order, high_order;
    for (int z = low_m; z >= span_b; --z) low_order.push_back(z);
    for (int z = high_q1; z <= span_e; ++z) high_order.push_back(z);
    if (!low_order.empty()) {
        auto steps = group_one_sweep(low_order, prob_maps, intensities, anchor_low, gp,
                                     alpha_shift, span_b, span_e, crf_params, params);
        all.insert(all.end(), std::make_move_iterator(steps.begin()),
                   std::make_move_iterator(steps.end()));
    }
    if (!high_order.empty()) {
        auto steps = group_one_sweep(high_order, prob_maps, intensities, anchor_high, gp,
                                     alpha_shift, span_b, span_e, crf_params, params);
        all.insert(all.end(), std::make_move_iterator(steps.begin()),
                   std::make_move_iterator(steps.end()));
    }
    return all;
}

}  // namespace brainext
