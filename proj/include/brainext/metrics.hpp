#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "brainext/common.hpp"
#include "brainext/core.hpp"
#include "brainext/image.hpp"

namespace brainext {

struct Confusion {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::uint64_t total() const { return tp + fp + tn + fn; }
};

inline Confusion confusion(const BinaryMask& pred, const BinaryMask& gt) {
    if (!pred.same_dims(gt)) throw ValidationError("confusion: mask dims differ");
    Confusion c;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const bool p = pred.labels[i] != 0;
        const bool g = gt.labels[i] != 0;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

// Zero-denominator convention: 1 when both masks are empty of the relevant
// class, otherwise an error.
inline double dice(const Confusion& c) {
    const double den = static_cast<double>(2 * c.tp + c.fp + c.fn);
    if (den == 0.0) return 1.0;  // both foregrounds empty
    return 2.0 * static_cast<double>(c.tp) / den;
}

inline double jaccard(const Confusion& c) {
    const double den = static_cast<double>(c.tp + c.fp + c.fn);
    if (den == 0.0) return 1.0;
    return static_cast<double>(c.tp) / den;
}

inline double sensitivity(const Confusion& c) {
    const double den = static_cast<double>(c.tp + c.fn);
    if (den == 0.0) {
        if (c.fp == 0) return 1.0;
        throw NumericError("sensitivity undefined: ground truth empty but prediction is not");
    }
    return static_cast<double>(c.tp) / den;
}

inline double specificity(const Confusion& c) {
    const double den = static_cast<double>(c.tn + c.fp);
    if (den == 0.0) {
        if (c.fn == 0) return 1.0;
        throw NumericError("specificity undefined: ground truth has no background but prediction does");
    }
    return static_cast<double>(c.tn) / den;
}

namespace detail {
inline std::vector<std::array<int, 3>> foreground_voxels(const BinaryMask& m) {
    std::vector<std::array<int, 3>> out;
    for (int z = 0; z < m.depth; ++z)
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x)
                if (m.at(x, y, z)) out.push_back({x, y, z});
    return out;
}
}  // namespace detail

// Directed average distance via an exact squared EDT of the target set.
inline double directed_avg_distance(const BinaryMask& from, const BinaryMask& to) {
    const std::vector<double> d2 = edt_squared_3d(to.labels, to.width, to.height, to.depth);
    double sum = 0.0;
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < from.labels.size(); ++i)
        if (from.labels[i]) {
            sum += std::sqrt(d2[i]);
            ++n;
        }
    return sum / static_cast<double>(n);
}

// Average Hausdorff distance in voxel units.
inline double ahd(const BinaryMask& x, const BinaryMask& y) {
    if (!x.same_dims(y)) throw ValidationError("ahd: mask dims differ");
    if (x.count() == 0 || y.count() == 0) throw ValidationError("ahd: masks must be nonempty");
    return std::max(directed_avg_distance(x, y), directed_avg_distance(y, x));
}

// All-pairs reference used to verify the EDT path.
inline double ahd_brute_force(const BinaryMask& x, const BinaryMask& y) {
    if (!x.same_dims(y)) throw ValidationError("ahd: mask dims differ");
    const auto xs = detail::foreground_voxels(x);
    const auto ys = detail::foreground_voxels(y);
    if (xs.empty() || ys.empty()) throw ValidationError("ahd: masks must be nonempty");
    auto directed = [](const std::vector<std::array<int, 3>>& a,
                       const std::vector<std::array<int, 3>>& b) {
        double sum = 0.0;
        for (const auto& p : a) {
            double best = 1e300;
            for (const auto& q : b) {
                const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
                best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
            sum += std::sqrt(best);
        }
        return sum / static_cast<double>(a.size());
    };
    return std::max(directed(xs, ys), directed(ys, xs));
}

struct MetricRow {
    std::string entity;
    double dice = 0.0, jaccard = 0.0, ahd = 0.0, sensitivity = 0.0, specificity = 0.0;
    // NaN marks a metric whose zero-denominator convention raised; excluded from aggregates.
};

struct MetricAggregate {
    double mean = 0.0, sd = 0.0;
    std::size_t n = 0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    MetricAggregate dice, jaccard, ahd, sensitivity, specificity;
};

inline MetricAggregate aggregate_values(const std::vector<double>& vals) {
    MetricAggregate a;
    for (double v : vals)
        if (std::isfinite(v)) ++a.n;
    if (a.n == 0) return a;
    double sum = 0.0;
    for (double v : vals)
        if (std::isfinite(v)) sum += v;
    a.mean = sum / static_cast<double>(a.n);
    double ss = 0.0;
    for (double v : vals)
        if (std::isfinite(v)) ss += (v - a.mean) * (v - a.mean);
    a.sd = std::sqrt(ss / static_cast<double>(a.n));  // population SD
    return a;
}

inline MetricReport aggregate(const std::vector<MetricRow>& rows) {
    if (rows.empty()) throw ValidationError("aggregate: no entities");
    MetricReport rep;
    rep.rows = rows;
    auto collect = [&](auto member) {
        std::vector<double> vals;
        vals.reserve(rows.size());
        for (const auto& r : rows) vals.push_back(r.*member);
        return aggregate_values(vals);
    };
    rep.dice = collect(&MetricRow::dice);
    rep.jaccard = collect(&MetricRow::jaccard);
    rep.ahd = collect(&MetricRow::ahd);
    rep.sensitivity = collect(&MetricRow::sensitivity);
    rep.specificity = collect(&MetricRow::specificity);
    return rep;
}

// Tukey boxplot summary mirroring the evaluation figures.
struct BoxplotData {
    std::string metric;
    double q1 = 0.0, median = 0.0, q3 = 0.0;
    double whisker_lo = 0.0, whisker_hi = 0.0;
    std::vector<double> outliers;
};

inline BoxplotData boxplot_data(const std::string& name, std::vector<double> vals) {
    vals.erase(std::remove_if(vals.begin(), vals.end(), [](double v) { return !std::isfinite(v); }),
               vals.end());
    if (vals.empty()) throw ValidationError("boxplot: no finite values");
    std::sort(vals.begin(), vals.end());
    BoxplotData b;
    b.metric = name;
    std::vector<float> sorted(vals.begin(), vals.end());
    b.q1 = percentile_sorted(sorted, 25.0);
    b.median = percentile_sorted(sorted, 50.0);
    b.q3 = percentile_sorted(sorted, 75.0);
    const double iqr = b.q3 - b.q1;
    const double lo_fence = b.q1 - 1.5 * iqr;
    const double hi_fence = b.q3 + 1.5 * iqr;
    b.whisker_lo = vals.back();
    b.whisker_hi = vals.front();
    for (double v : vals) {
        if (v >= lo_fence && v <= hi_fence) {
            b.whisker_lo = std::min(b.whisker_lo, v);
            b.whisker_hi = std::max(b.whisker_hi, v);
        } else {
            b.outliers.push_back(v);
        }
    }
    return b;
}

}  // namespace brainext
