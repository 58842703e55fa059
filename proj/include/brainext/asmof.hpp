#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "brainext/common.hpp"
#include "brainext/core.hpp"
#include "brainext/image.hpp"
#include "brainext/linalg.hpp"

namespace brainext {

// Stacked landmark coordinates (x1,y1,...,xn,yn).
using LandmarkShape = std::vector<double>;

struct AsmParams {
    int n_landmarks = 40;
    int n_s = 2;         // candidate displacements each side during search
    int profile_k = 3;   // profile points each side of a candidate
    int l_max = 2;       // resolution levels
    int n_grid = 5;      // training grid side, odd
    int n_max = 10;      // iterations per level
    int k_nn = 15;
    int n_keep = 12;         // features kept by Mann-Whitney selection
    int knn_max_train = 800; // stride-subsample cap per landmark/level
    double f_v = 0.95;
    double q = 3.0;

    void validate() const {
        if (n_landmarks < 3 || n_s < 1 || profile_k < 1 || l_max < 1 || n_max < 1 || k_nn < 1 ||
            n_keep < 1 || knn_max_train < 1)
            throw ValidationError("asm params must be positive");
        if (n_grid < 1 || n_grid % 2 == 0) throw ValidationError("asm n_grid must be odd");
        if (!(f_v > 0.0 && f_v <= 1.0)) throw ValidationError("asm f_v must be in (0,1]");
        if (!(q >= 2.0 && q <= 3.0)) throw ValidationError("asm q must be in [2,3]");
    }
};

// ---- landmark extraction ----

namespace detail {
// Clockwise Moore-neighbor ring (image coords, y down), starting west.
inline constexpr int kMooreDx[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
inline constexpr int kMooreDy[8] = {0, -1, -1, -1, 0, 1, 1, 1};
}  // namespace detail

// Trace the outer contour of the single foreground component, clockwise from
// the topmost-then-leftmost pixel; returns pixel centers.
inline std::vector<std::pair<int, int>> trace_contour(const Mask2D& mask) {
    int sx = -1, sy = -1;
    for (int y = 0; y < mask.height && sx < 0; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                sx = x;
                sy = y;
                break;
            }
    if (sx < 0) throw ValidationError("trace_contour: empty mask");

    std::vector<std::pair<int, int>> contour;
    int px = sx, py = sy;
    int back = 0;  // direction index of the backtrack pixel (west of start)
    const int start_back = back;
    do {
        contour.emplace_back(px, py);
        int found = -1;
        for (int step = 1; step <= 8; ++step) {
            const int d = (back + step) % 8;
            const int nx = px + detail::kMooreDx[d];
            const int ny = py + detail::kMooreDy[d];
            if (mask.in_bounds(nx, ny) && mask.at(nx, ny)) {
                found = d;
                break;
            }
        }
        if (found < 0) break;  // isolated pixel
        const int bx = px + detail::kMooreDx[(found + 7) % 8];
        const int by = py + detail::kMooreDy[(found + 7) % 8];
        px += detail::kMooreDx[found];
        py += detail::kMooreDy[found];
        // new backtrack = previous scan position relative to the new pixel
        for (int d = 0; d < 8; ++d)
            if (px + detail::kMooreDx[d] == bx && py + detail::kMooreDy[d] == by) {
                back = d;
                break;
            }
        if (contour.size() > 4 * mask.data.size()) break;  // safety net
    } while (!(px == sx && py == sy && back == start_back));
    return contour;
}

// Outer contour resampled to n points at equal arclength.
inline LandmarkShape landmarks_from_mask(const Mask2D& mask, int n) {
    const ComponentMap cm = label_components(mask, 8);
    if (cm.components.empty()) throw ValidationError("landmarks_from_mask: empty mask");
    if (cm.components.size() > 1)
        throw ValidationError("landmarks_from_mask: mask must have exactly one component");
    if (cm.components.front().area < n)
        throw ValidationError("landmarks_from_mask: component area smaller than landmark count");

    const auto contour = trace_contour(mask);
    const std::size_t m = contour.size();
    LandmarkShape shape(static_cast<std::size_t>(2 * n));
    if (m == 1) {
        for (int i = 0; i < n; ++i) {
            shape[2 * i] = contour[0].first;
            shape[2 * i + 1] = contour[0].second;
        }
        return shape;
    }

    std::vector<double> seg(m);
    double perimeter = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto& a = contour[i];
        const auto& b = contour[(i + 1) % m];
        seg[i] = std::hypot(static_cast<double>(b.first - a.first),
                            static_cast<double>(b.second - a.second));
        perimeter += seg[i];
    }
    std::size_t si = 0;
    double seg_start = 0.0;
    for (int j = 0; j < n; ++j) {
        const double target = perimeter * j / n;
        while (seg_start + seg[si] < target && si + 1 < m) {
            seg_start += seg[si];
            ++si;
        }
        const auto& a = contour[si];
        const auto& b = contour[(si + 1) % m];
        const double t = seg[si] > 0.0 ? (target - seg_start) / seg[si] : 0.0;
        shape[2 * j] = a.first + t * (b.first - a.first);
        shape[2 * j + 1] = a.second + t * (b.second - a.second);
    }
    return shape;
}

// ---- shape model ----

struct ShapeModel {
    LandmarkShape mean;          // 2n
    Mat eigenvectors;            // 2n x t
    std::vector<double> eigenvalues;  // first t, descending
    double f_v = 0.95;
    double q = 3.0;

    int n_modes() const { return static_cast<int>(eigenvalues.size()); }
    std::size_t dim() const { return mean.size(); }
};

inline ShapeModel build_shape_model(const std::vector<LandmarkShape>& shapes, double f_v,
                                    double q) {
    if (shapes.size() < 2) throw ValidationError("build_shape_model: need at least 2 shapes");
    const std::size_t dim = shapes.front().size();
    for (const auto& s : shapes)
        if (s.size() != dim) throw ValidationError("build_shape_model: inconsistent shape length");

    ShapeModel model;
    model.f_v = f_v;
    model.q = q;
    model.mean.assign(dim, 0.0);
    for (const auto& s : shapes)
        for (std::size_t i = 0; i < dim; ++i) model.mean[i] += s[i];
    for (double& v : model.mean) v /= static_cast<double>(shapes.size());

    Mat cov(dim, dim, 0.0);
    for (const auto& s : shapes)
        for (std::size_t i = 0; i < dim; ++i) {
            const double di = s[i] - model.mean[i];
            for (std::size_t j = 0; j < dim; ++j) cov.at(i, j) += di * (s[j] - model.mean[j]);
        }
    const double scale = 1.0 / static_cast<double>(shapes.size() - 1);
    for (double& v : cov.data) v *= scale;

    EigenSym eig = jacobi_eigen_sym(std::move(cov));
    double total = 0.0;
    for (double& l : eig.values) {
        if (l < 0.0) l = 0.0;  // numerical noise
        total += l;
    }
    std::size_t t = 0;
    if (total > 0.0) {
        double acc = 0.0;
        while (t < eig.values.size()) {
            acc += eig.values[t];
            ++t;
            if (acc >= f_v * total) break;
        }
    }
    model.eigenvalues.assign(eig.values.begin(), eig.values.begin() + t);
    model.eigenvectors = Mat(dim, t);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < t; ++j) model.eigenvectors.at(i, j) = eig.vectors.at(i, j);
    return model;
}

struct ProjectionResult {
    std::vector<double> b;
    LandmarkShape shape;
};

// b = Phi^T (x - mean), clamped to +-q*sqrt(lambda); shape = mean + Phi b.
inline ProjectionResult project_and_limit(const ShapeModel& model, const LandmarkShape& shape) {
    if (shape.size() != model.dim())
        throw ValidationError("project_and_limit: shape dimension mismatch");
    std::vector<double> diff(shape.size());
    for (std::size_t i = 0; i < shape.size(); ++i) diff[i] = shape[i] - model.mean[i];
    ProjectionResult res;
    res.b = matvec_t(model.eigenvectors, diff);
    for (std::size_t j = 0; j < res.b.size(); ++j) {
        const double bound = model.q * std::sqrt(model.eigenvalues[j]);
        res.b[j] = std::clamp(res.b[j], -bound, bound);
    }
    res.shape = model.mean;
    for (std::size_t i = 0; i < res.shape.size(); ++i)
        for (std::size_t j = 0; j < res.b.size(); ++j)
            res.shape[i] += model.eigenvectors.at(i, j) * res.b[j];
    return res;
}

// ---- appearance model with optimal features ----

// 60 feature images: Gaussian derivatives {L, Lx, Ly, Lxx, Lxy, Lyy} at
// sigma in {1,2,4,8,16} plus the local 3x3 standard deviation of each.
inline std::vector<ImageF> filter_bank(const ImageF& img) {
    static const double kSigmas[5] = {1.0, 2.0, 4.0, 8.0, 16.0};
    std::vector<ImageF> out;
    out.reserve(60);
    ImageF row_g, row_g1, row_g2, tmp;
    for (double sigma : kSigmas) {
        const auto g = gaussian_kernel(sigma, 0);
        const auto g1 = gaussian_kernel(sigma, 1);
        const auto g2 = gaussian_kernel(sigma, 2);
        convolve_rows(img, g, row_g);
        convolve_rows(img, g1, row_g1);
        convolve_rows(img, g2, row_g2);
        convolve_cols(row_g, g, tmp);
        out.push_back(tmp);  // L
        convolve_cols(row_g1, g, tmp);
        out.push_back(tmp);  // Lx
        convolve_cols(row_g, g1, tmp);
        out.push_back(tmp);  // Ly
        convolve_cols(row_g2, g, tmp);
        out.push_back(tmp);  // Lxx
        convolve_cols(row_g1, g1, tmp);
        out.push_back(tmp);  // Lxy
        convolve_cols(row_g, g2, tmp);
        out.push_back(tmp);  // Lyy
    }
    for (int i = 0; i < 30; ++i) out.push_back(local_std3(out[static_cast<std::size_t>(i)]));
    return out;
}

inline constexpr int kFilterBankSize = 60;

inline std::vector<double> sample_feature_vector(const std::vector<ImageF>& bank, double x,
                                                 double y) {
    std::vector<double> f(bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i) f[i] = bilinear_sample(bank[i], x, y);
    return f;
}

// Rank features by Mann-Whitney separation |U/(n0*n1) - 1/2|; ties keep the
// lower index first.
inline std::vector<int> mann_whitney_select(const std::vector<std::vector<double>>& samples,
                                            const std::vector<std::uint8_t>& labels, int n_keep) {
    if (samples.empty() || samples.size() != labels.size())
        throw ValidationError("mann_whitney_select: bad inputs");
    std::size_t n1 = 0;
    for (auto l : labels) n1 += l ? 1 : 0;
    const std::size_t n0 = labels.size() - n1;
    if (n0 == 0 || n1 == 0)
        throw ValidationError("mann_whitney_select: both classes must be present");

    const std::size_t n_feat = samples.front().size();
    std::vector<std::pair<double, int>> scored(n_feat);
    std::vector<std::pair<double, std::size_t>> vals(samples.size());
    std::vector<double> ranks(samples.size());
    for (std::size_t f = 0; f < n_feat; ++f) {
        for (std::size_t i = 0; i < samples.size(); ++i) vals[i] = {samples[i][f], i};
        std::sort(vals.begin(), vals.end());
        std::size_t i = 0;
        while (i < vals.size()) {
            std::size_t j = i;
            while (j + 1 < vals.size() && vals[j + 1].first == vals[i].first) ++j;
            const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
            for (std::size_t k = i; k <= j; ++k) ranks[vals[k].second] = midrank;
            i = j + 1;
        }
        double r1 = 0.0;
        for (std::size_t s = 0; s < samples.size(); ++s)
            if (labels[s]) r1 += ranks[s];
        const double u1 = r1 - static_cast<double>(n1) * (static_cast<double>(n1) + 1.0) / 2.0;
        const double sep = std::fabs(u1 / (static_cast<double>(n0) * static_cast<double>(n1)) - 0.5);
        scored[f] = {sep, static_cast<int>(f)};
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> keep;
    for (int i = 0; i < n_keep && i < static_cast<int>(scored.size()); ++i)
        keep.push_back(scored[static_cast<std::size_t>(i)].second);
    return keep;
}

struct LandmarkAppearance {
    std::vector<int> selected;                // indices into the filter bank
    std::vector<double> feat_mean, feat_std;  // z-scoring, per selected feature
    std::vector<double> train;                // n_train x selected.size(), row-major
    std::vector<std::uint8_t> labels;
    std::size_t n_train() const { return labels.size(); }
};

struct AppearanceModel {
    int n_landmarks = 0;
    int n_grid = 5;
    int profile_k = 3;
    int k_nn = 15;
    // per_level[level][landmark]; level 0 = full resolution
    std::vector<std::vector<LandmarkAppearance>> per_level;

    bool trained_for(std::size_t level, int landmark) const {
        return level < per_level.size() && landmark >= 0 &&
               landmark < static_cast<int>(per_level[level].size()) &&
               !per_level[level][static_cast<std::size_t>(landmark)].selected.empty();
    }
};

// Weighted kNN vote with weight exp(-d^2) in the z-scored selected-feature space.
inline double knn_inside_prob(const AppearanceModel& model, int level, int landmark,
                              const std::vector<double>& raw_features) {
    if (!model.trained_for(static_cast<std::size_t>(level), landmark))
        throw StateError("knn_inside_prob: landmark has no trained appearance model");
    const LandmarkAppearance& lm =
        model.per_level[static_cast<std::size_t>(level)][static_cast<std::size_t>(landmark)];
    const std::size_t dim = lm.selected.size();
    std::vector<double> query(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        const double raw = raw_features[static_cast<std::size_t>(lm.selected[d])];
        query[d] = (raw - lm.feat_mean[d]) / lm.feat_std[d];
    }
    const std::size_t n = lm.n_train();
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d2 = 0.0;
        const double* row = lm.train.data() + i * dim;
        for (std::size_t d = 0; d < dim; ++d) {
            const double diff = row[d] - query[d];
            d2 += diff * diff;
        }
        dist[i] = {d2, i};
    }
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(model.k_nn), n);
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double w_in = 0.0, w_all = 0.0, votes_in = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double w = std::exp(-dist[i].first);
        w_all += w;
        if (lm.labels[dist[i].second]) {
            w_in += w;
            votes_in += 1.0;
        }
    }
    if (w_all <= 0.0) return votes_in / static_cast<double>(k);  // all weights underflowed
    return w_in / w_all;
}

inline double knn_inside_prob(const AppearanceModel& model, int landmark,
                              const std::vector<double>& raw_features) {
    return knn_inside_prob(model, 0, landmark, raw_features);
}

struct TrainingSlice {
    const ImageF* image = nullptr;  // normalized slice
    const Mask2D* mask = nullptr;   // ground truth
};

// Build per-level, per-landmark kNN training sets from a grid of labeled
// points around each ground-truth landmark, then keep the most separating
// features per Mann-Whitney.
inline AppearanceModel train_appearance_model(const std::vector<TrainingSlice>& slices,
                                              const AsmParams& params) {
    params.validate();
    if (slices.empty()) throw ValidationError("train_appearance_model: no training slices");
    AppearanceModel model;
    model.n_landmarks = params.n_landmarks;
    model.n_grid = params.n_grid;
    model.profile_k = params.profile_k;
    model.k_nn = params.k_nn;
    model.per_level.resize(static_cast<std::size_t>(params.l_max));

    const int half = (params.n_grid - 1) / 2;
    for (int level = 0; level < params.l_max; ++level) {
        const double ds = std::pow(2.0, level);
        auto& per_landmark = model.per_level[static_cast<std::size_t>(level)];
        per_landmark.resize(static_cast<std::size_t>(params.n_landmarks));
        std::vector<std::vector<std::vector<double>>> raw(
            static_cast<std::size_t>(params.n_landmarks));
        std::vector<std::vector<std::uint8_t>> lab(static_cast<std::size_t>(params.n_landmarks));

        for (const auto& ts : slices) {
            const LandmarkShape shape = landmarks_from_mask(*ts.mask, params.n_landmarks);
            ImageF img = *ts.image;
            for (int l = 0; l < level; ++l) img = downsample2(img);
            const std::vector<ImageF> bank = filter_bank(img);
            for (int i = 0; i < params.n_landmarks; ++i) {
                const double lx = shape[static_cast<std::size_t>(2 * i)] / ds;
                const double ly = shape[static_cast<std::size_t>(2 * i + 1)] / ds;
                for (int gy = -half; gy <= half; ++gy)
                    for (int gx = -half; gx <= half; ++gx) {
                        const double px = lx + gx, py = ly + gy;
                        raw[static_cast<std::size_t>(i)].push_back(
                            sample_feature_vector(bank, px, py));
                        const int mx = std::clamp(static_cast<int>(std::lround(px * ds)), 0,
                                                  ts.mask->width - 1);
                        const int my = std::clamp(static_cast<int>(std::lround(py * ds)), 0,
                                                  ts.mask->height - 1);
                        lab[static_cast<std::size_t>(i)].push_back(ts.mask->at(mx, my) ? 1 : 0);
                    }
            }
        }

        for (int i = 0; i < params.n_landmarks; ++i) {
            auto& samples = raw[static_cast<std::size_t>(i)];
            auto& labels = lab[static_cast<std::size_t>(i)];
            // stride subsample to bound kNN cost
            if (static_cast<int>(samples.size()) > params.knn_max_train) {
                const std::size_t stride =
                    (samples.size() + params.knn_max_train - 1) / params.knn_max_train;
                std::vector<std::vector<double>> s2;
                std::vector<std::uint8_t> l2;
                for (std::size_t s = 0; s < samples.size(); s += stride) {
                    s2.push_back(std::move(samples[s]));
                    l2.push_back(labels[s]);
                }
                samples = std::move(s2);
                labels = std::move(l2);
            }
            LandmarkAppearance& lm = per_landmark[static_cast<std::size_t>(i)];
            lm.selected = mann_whitney_select(samples, labels, params.n_keep);
            const std::size_t dim = lm.selected.size();
            lm.feat_mean.assign(dim, 0.0);
            lm.feat_std.assign(dim, 0.0);
            for (const auto& s : samples)
                for (std::size_t d = 0; d < dim; ++d)
                    lm.feat_mean[d] += s[static_cast<std::size_t>(lm.selected[d])];
            for (double& v : lm.feat_mean) v /= static_cast<double>(samples.size());
            for (const auto& s : samples)
                for (std::size_t d = 0; d < dim; ++d) {
                    const double diff = s[static_cast<std::size_t>(lm.selected[d])] - lm.feat_mean[d];
                    lm.feat_std[d] += diff * diff;
                }
            for (double& v : lm.feat_std)
                v = std::max(std::sqrt(v / static_cast<double>(samples.size())), 1e-12);
            lm.train.resize(samples.size() * dim);
            lm.labels = labels;
            for (std::size_t s = 0; s < samples.size(); ++s)
                for (std::size_t d = 0; d < dim; ++d)
                    lm.train[s * dim + d] =
                        (samples[s][static_cast<std::size_t>(lm.selected[d])] - lm.feat_mean[d]) /
                        lm.feat_std[d];
        }
    }
    return model;
}

// Boundary objective: separation cost of placing the inside/outside
// split before position `split` of the profile g.
inline double profile_objective(const std::vector<double>& g, int split) {
    double acc = 0.0;
    for (int i = 0; i < static_cast<int>(g.size()); ++i)
        acc += (i < split) ? g[static_cast<std::size_t>(i)] : 1.0 - g[static_cast<std::size_t>(i)];
    return acc;
}

struct SearchResult {
    LandmarkShape shape;
    int bound_violations = 0;  // mode-coefficient bound checks that failed after limiting
    int iterations = 0;
};

// Coarse-to-fine ASM search: per landmark, slide along the profile normal to
// the position minimizing the boundary objective, then fit centroid
// translation plus limited shape coefficients.
inline SearchResult asm_search(const ImageF& slice, const ShapeModel& shape_model,
                               const AppearanceModel& app, const AsmParams& params,
                               const LandmarkShape* init = nullptr) {
    params.validate();
    const int n = params.n_landmarks;
    if (static_cast<int>(shape_model.dim()) != 2 * n)
        throw ValidationError("asm_search: shape model size does not match n_landmarks");

    LandmarkShape x;
    if (init) {
        x = *init;
        if (x.size() != shape_model.dim()) throw ValidationError("asm_search: bad init shape");
    } else {
        x = shape_model.mean;
        double cx = 0.0, cy = 0.0;
        for (int i = 0; i < n; ++i) {
            cx += x[static_cast<std::size_t>(2 * i)];
            cy += x[static_cast<std::size_t>(2 * i + 1)];
        }
        cx /= n;
        cy /= n;
        const double tx = 0.5 * (slice.width - 1) - cx;
        const double ty = 0.5 * (slice.height - 1) - cy;
        for (int i = 0; i < n; ++i) {
            x[static_cast<std::size_t>(2 * i)] += tx;
            x[static_cast<std::size_t>(2 * i + 1)] += ty;
        }
    }

    std::vector<ImageF> pyramid{slice};
    for (int l = 1; l < params.l_max; ++l) pyramid.push_back(downsample2(pyramid.back()));

    SearchResult result;
    const int reach = params.n_s + params.profile_k;
    std::vector<double> g(static_cast<std::size_t>(2 * reach + 1));
    LandmarkShape x_new(x.size());

    for (int level = params.l_max - 1; level >= 0; --level) {
        const double ds = std::pow(2.0, level);
        const std::vector<ImageF> bank = filter_bank(pyramid[static_cast<std::size_t>(level)]);
        for (int iter = 0; iter < params.n_max; ++iter) {
            double ccx = 0.0, ccy = 0.0;
            for (int i = 0; i < n; ++i) {
                ccx += x[static_cast<std::size_t>(2 * i)];
                ccy += x[static_cast<std::size_t>(2 * i + 1)];
            }
            ccx /= n;
            ccy /= n;

            for (int i = 0; i < n; ++i) {
                const int prev = (i + n - 1) % n;
                const int next = (i + 1) % n;
                const double px = x[static_cast<std::size_t>(2 * i)] / ds;
                const double py = x[static_cast<std::size_t>(2 * i + 1)] / ds;
                const double tx = x[static_cast<std::size_t>(2 * next)] -
                                  x[static_cast<std::size_t>(2 * prev)];
                const double ty = x[static_cast<std::size_t>(2 * next + 1)] -
                                  x[static_cast<std::size_t>(2 * prev + 1)];
                double nx = -ty, ny = tx;
                const double len = std::hypot(nx, ny);
                if (len > 1e-12) {
                    nx /= len;
                    ny /= len;
                } else {
                    nx = 1.0;
                    ny = 0.0;
                }
                // orient outward (away from the shape centroid)
                const double ox = x[static_cast<std::size_t>(2 * i)] - ccx;
                const double oy = x[static_cast<std::size_t>(2 * i + 1)] - ccy;
                if (nx * ox + ny * oy < 0.0) {
                    nx = -nx;
                    ny = -ny;
                }
                // inward axis u = -n_out; g runs outside -> inside
                const double ux = -nx, uy = -ny;
                for (int t = -reach; t <= reach; ++t)
                    g[static_cast<std::size_t>(t + reach)] = knn_inside_prob(
                        app, level, i, sample_feature_vector(bank, px + t * ux, py + t * uy));

                int best_c = 0;
                double best_f = 1e300;
                for (int c = -params.n_s; c <= params.n_s; ++c) {
                    double f = 0.0;
                    for (int j = -params.profile_k; j <= params.profile_k; ++j) {
                        const double gi = g[static_cast<std::size_t>(c + j + reach)];
                        f += (j < 0) ? gi : 1.0 - gi;
                    }
                    if (f < best_f || (f == best_f && std::abs(c) < std::abs(best_c))) {
                        best_f = f;
                        best_c = c;
                    }
                }
                x_new[static_cast<std::size_t>(2 * i)] = (px + best_c * ux) * ds;
                x_new[static_cast<std::size_t>(2 * i + 1)] = (py + best_c * uy) * ds;
            }

            // Step 3: centroid translation + limited projection; Step 4: rebuild.
            double mx = 0.0, my = 0.0, nmx = 0.0, nmy = 0.0;
            for (int i = 0; i < n; ++i) {
                mx += shape_model.mean[static_cast<std::size_t>(2 * i)];
                my += shape_model.mean[static_cast<std::size_t>(2 * i + 1)];
                nmx += x_new[static_cast<std::size_t>(2 * i)];
                nmy += x_new[static_cast<std::size_t>(2 * i + 1)];
            }
            const double tx2 = nmx / n - mx / n;
            const double ty2 = nmy / n - my / n;
            LandmarkShape centered(x_new.size());
            for (int i = 0; i < n; ++i) {
                centered[static_cast<std::size_t>(2 * i)] =
                    x_new[static_cast<std::size_t>(2 * i)] - tx2;
                centered[static_cast<std::size_t>(2 * i + 1)] =
                    x_new[static_cast<std::size_t>(2 * i + 1)] - ty2;
            }
            ProjectionResult proj = project_and_limit(shape_model, centered);
            for (std::size_t j = 0; j < proj.b.size(); ++j) {
                const double bound = shape_model.q * std::sqrt(shape_model.eigenvalues[j]);
                if (std::fabs(proj.b[j]) > bound + 1e-9) ++result.bound_violations;
            }
            for (int i = 0; i < n; ++i) {
                x[static_cast<std::size_t>(2 * i)] =
                    proj.shape[static_cast<std::size_t>(2 * i)] + tx2;
                x[static_cast<std::size_t>(2 * i + 1)] =
                    proj.shape[static_cast<std::size_t>(2 * i + 1)] + ty2;
            }
            ++result.iterations;
        }
    }
    result.shape = std::move(x);
    return result;
}

// Rasterize a landmark polygon into a slice-sized mask.
inline Mask2D shape_to_mask(const LandmarkShape& shape, int width, int height) {
    return polygon_to_mask(shape, width, height);
}

}  // namespace brainext
