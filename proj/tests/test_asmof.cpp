#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "brainext/asmof.hpp"
#include "brainext/core.hpp"

using namespace brainext;

namespace {

Mask2D filled_square(int w, int h, int x0, int y0, int side) {
    Mask2D m(w, h, 0);
    for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x) m.at(x, y) = 1;
    return m;
}

Mask2D filled_disc(int w, int h, double cx, double cy, double r) {
    Mask2D m(w, h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.at(x, y) = 1;
    return m;
}

// pair-counting Mann-Whitney U oracle (independent of the rank-sum route)
double u_statistic_oracle(const std::vector<double>& values,
                          const std::vector<std::uint8_t>& labels) {
    double u = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < values.size(); ++j) {
            if (labels[j]) continue;
            if (values[i] > values[j])
                u += 1.0;
            else if (values[i] == values[j])
                u += 0.5;
        }
    }
    return u;
}

}  // namespace

TEST_CASE("square landmarks sit on the corners at equal arclength", "[asmof]") {
    const Mask2D square = filled_square(32, 32, 8, 8, 16);  // pixels 8..23
    const LandmarkShape s = landmarks_from_mask(square, 4);
    REQUIRE(s.size() == 8);
    // analytic perimeter parameterization: start at (8,8), clockwise, step P/4 = 15
    const double expect[4][2] = {{8, 8}, {23, 8}, {23, 23}, {8, 23}};
    for (int i = 0; i < 4; ++i) {
        REQUIRE(s[2 * i] == Catch::Approx(expect[i][0]).margin(1e-9));
        REQUIRE(s[2 * i + 1] == Catch::Approx(expect[i][1]).margin(1e-9));
    }
}

TEST_CASE("landmark extraction validates its input", "[asmof]") {
    Mask2D empty(16, 16, 0);
    REQUIRE_THROWS_AS(landmarks_from_mask(empty, 4), ValidationError);

    Mask2D two = filled_square(32, 32, 2, 2, 5);
    for (int y = 20; y < 25; ++y)
        for (int x = 20; x < 25; ++x) two.at(x, y) = 1;
    REQUIRE_THROWS_AS(landmarks_from_mask(two, 4), ValidationError);

    const Mask2D tiny = filled_square(16, 16, 4, 4, 2);
    REQUIRE_THROWS_AS(landmarks_from_mask(tiny, 40), ValidationError);
}

TEST_CASE("circle landmarks are evenly spaced", "[asmof]") {
    const double r = 16.0;
    const Mask2D disc = filled_disc(50, 50, 24, 24, r);
    const int n = 16;
    const LandmarkShape s = landmarks_from_mask(disc, n);
    const double expected_chord = 2.0 * M_PI * r / n;
    for (int i = 0; i < n; ++i) {
        const int j = (i + 1) % n;
        const double d = std::hypot(s[2 * j] - s[2 * i], s[2 * j + 1] - s[2 * i + 1]);
        REQUIRE(std::fabs(d - expected_chord) <= 1.0);
    }
}

TEST_CASE("two-shape model has one mode along the difference", "[asmof]") {
    LandmarkShape a{0, 0, 4, 0, 4, 4, 0, 4};
    LandmarkShape b{1, 0, 5, 0, 5, 4, 1, 4};  // a shifted +1 in x
    const ShapeModel m = build_shape_model({a, b}, 1.0, 3.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        REQUIRE(m.mean[i] == Catch::Approx(0.5 * (a[i] + b[i])));
    REQUIRE(m.n_modes() == 1);
    // mode direction proportional to (b - a)
    double norm = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) norm += (b[i] - a[i]) * (b[i] - a[i]);
    norm = std::sqrt(norm);
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        dot += m.eigenvectors.at(i, 0) * (b[i] - a[i]) / norm;
    REQUIRE(std::fabs(std::fabs(dot) - 1.0) < 1e-9);
}

TEST_CASE("identical shapes give a rigid zero-mode model", "[asmof]") {
    LandmarkShape a{0, 0, 4, 0, 4, 4, 0, 4};
    const ShapeModel m = build_shape_model({a, a, a}, 0.95, 3.0);
    REQUIRE(m.n_modes() == 0);
    const ProjectionResult p = project_and_limit(m, a);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(p.shape[i] == Catch::Approx(a[i]));
}

TEST_CASE("mode count is the smallest t reaching the variance fraction", "[asmof]") {
    Rng rng(3);
    std::vector<LandmarkShape> shapes;
    LandmarkShape base(20);
    for (auto& v : base) v = rng.uniform(0.0, 30.0);
    for (int s = 0; s < 10; ++s) {
        LandmarkShape sh = base;
        for (auto& v : sh) v += rng.normal(0.0, 2.0);
        shapes.push_back(sh);
    }
    const ShapeModel m = build_shape_model(shapes, 0.95, 3.0);

    // trace identity: total eigenvalue mass equals the summed per-coordinate variance
    double trace = 0.0;
    for (std::size_t d = 0; d < base.size(); ++d) {
        double mean = 0.0;
        for (const auto& s : shapes) mean += s[d];
        mean /= shapes.size();
        double var = 0.0;
        for (const auto& s : shapes) var += (s[d] - mean) * (s[d] - mean);
        trace += var / (shapes.size() - 1);
    }
    const EigenSym full = [&] {
        Mat cov(base.size(), base.size(), 0.0);
        std::vector<double> mean(base.size(), 0.0);
        for (const auto& s : shapes)
            for (std::size_t i = 0; i < s.size(); ++i) mean[i] += s[i] / shapes.size();
        for (const auto& s : shapes)
            for (std::size_t i = 0; i < s.size(); ++i)
                for (std::size_t j = 0; j < s.size(); ++j)
                    cov.at(i, j) += (s[i] - mean[i]) * (s[j] - mean[j]) / (shapes.size() - 1);
        return jacobi_eigen_sym(std::move(cov));
    }();
    double total = 0.0;
    for (double l : full.values) total += std::max(0.0, l);
    REQUIRE(total == Catch::Approx(trace).epsilon(1e-9));

    double kept = 0.0;
    for (double l : m.eigenvalues) kept += l;
    REQUIRE(kept >= 0.95 * total - 1e-9);
    double without_last = kept - m.eigenvalues.back();
    REQUIRE(without_last < 0.95 * total);

    // orthonormal columns
    for (int i = 0; i < m.n_modes(); ++i) {
        double nrm = 0.0;
        for (std::size_t r = 0; r < base.size(); ++r)
            nrm += m.eigenvectors.at(r, static_cast<std::size_t>(i)) *
                   m.eigenvectors.at(r, static_cast<std::size_t>(i));
        REQUIRE(std::fabs(nrm - 1.0) < 1e-9);
        for (int j = i + 1; j < m.n_modes(); ++j) {
            double dot = 0.0;
            for (std::size_t r = 0; r < base.size(); ++r)
                dot += m.eigenvectors.at(r, static_cast<std::size_t>(i)) *
                       m.eigenvectors.at(r, static_cast<std::size_t>(j));
            REQUIRE(std::fabs(dot) < 1e-8);
        }
    }
}

TEST_CASE("full-variance reconstruction is exact", "[asmof]") {
    Rng rng(5);
    std::vector<LandmarkShape> shapes;
    for (int s = 0; s < 6; ++s) {
        LandmarkShape sh(16);
        for (auto& v : sh) v = rng.uniform(0.0, 20.0);
        shapes.push_back(sh);
    }
    const ShapeModel m = build_shape_model(shapes, 1.0, 3.0);
    for (const auto& s : shapes) {
        const ProjectionResult p = project_and_limit(m, s);
        for (std::size_t i = 0; i < s.size(); ++i) REQUIRE(std::fabs(p.shape[i] - s[i]) < 1e-6);
    }
}

TEST_CASE("projection clamps coefficients to the mode bounds", "[asmof]") {
    Rng rng(7);
    std::vector<LandmarkShape> shapes;
    for (int s = 0; s < 8; ++s) {
        LandmarkShape sh(12);
        for (auto& v : sh) v = rng.normal(10.0, 3.0);
        shapes.push_back(sh);
    }
    const ShapeModel m = build_shape_model(shapes, 0.99, 3.0);
    REQUIRE(m.n_modes() >= 1);

    const ProjectionResult mean_fix = project_and_limit(m, m.mean);
    for (double b : mean_fix.b) REQUIRE(std::fabs(b) < 1e-9);
    for (std::size_t i = 0; i < m.mean.size(); ++i)
        REQUIRE(mean_fix.shape[i] == Catch::Approx(m.mean[i]).margin(1e-12));

    // push far along mode 1 -> clamped to q*sqrt(lambda_1)
    LandmarkShape pushed = m.mean;
    const double bound = m.q * std::sqrt(m.eigenvalues[0]);
    for (std::size_t i = 0; i < pushed.size(); ++i)
        pushed[i] += 10.0 * bound * m.eigenvectors.at(i, 0);
    const ProjectionResult clamped = project_and_limit(m, pushed);
    REQUIRE(clamped.b[0] == Catch::Approx(bound));

    // reconstruction of an in-bounds subspace shape is exact
    LandmarkShape inb = m.mean;
    std::vector<double> b_true(static_cast<std::size_t>(m.n_modes()));
    for (std::size_t j = 0; j < b_true.size(); ++j) {
        b_true[j] = 0.5 * m.q * std::sqrt(m.eigenvalues[j]) * (rng.uniform01() - 0.5);
        for (std::size_t i = 0; i < inb.size(); ++i)
            inb[i] += m.eigenvectors.at(i, j) * b_true[j];
    }
    const ProjectionResult rec = project_and_limit(m, inb);
    for (std::size_t i = 0; i < inb.size(); ++i) REQUIRE(std::fabs(rec.shape[i] - inb[i]) < 1e-9);

    LandmarkShape wrong(10);
    REQUIRE_THROWS_AS(project_and_limit(m, wrong), ValidationError);
}

TEST_CASE("filter bank basics: constants, ramps, linearity", "[asmof]") {
    ImageF constant(48, 48, 0.7f);
    const auto bank_c = filter_bank(constant);
    REQUIRE(bank_c.size() == 60);
    for (std::size_t f = 0; f < 60; ++f) {
        if (f % 6 == 0 && f < 30) continue;  // L itself is the constant
        for (float v : bank_c[f].data) REQUIRE(std::fabs(v) < 1e-5);
    }

    const double slope = 0.03;
    ImageF ramp(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) ramp.at(x, y) = static_cast<float>(slope * x);
    const auto bank_r = filter_bank(ramp);
    // Lx at every scale equals the slope away from the borders (sigma up to 4 here)
    for (int si = 0; si < 3; ++si) {
        const ImageF& lx = bank_r[static_cast<std::size_t>(6 * si + 1)];
        const int margin = 20;
        for (int y = margin; y < 64 - margin; ++y)
            for (int x = margin; x < 64 - margin; ++x)
                REQUIRE(std::fabs(lx.at(x, y) - slope) < 1e-3);
    }

    ImageF doubled = ramp;
    for (auto& v : doubled.data) v *= 2.0f;
    const auto bank_d = filter_bank(doubled);
    for (std::size_t f = 0; f < 60; ++f)
        for (std::size_t i = 0; i < bank_d[f].data.size(); ++i)
            REQUIRE(std::fabs(bank_d[f].data[i] - 2.0f * bank_r[f].data[i]) < 1e-3);
}

TEST_CASE("mann-whitney ranking matches the pair-counting oracle", "[asmof]") {
    // 6 samples, 3 candidate features
    const std::vector<std::vector<double>> samples{
        {0.1, 5.0, 1.0}, {0.2, 4.0, 1.0}, {0.3, 6.0, 1.0},
        {0.9, 1.0, 1.0}, {0.8, 2.0, 1.0}, {0.7, 3.0, 1.0},
    };
    const std::vector<std::uint8_t> labels{1, 1, 1, 0, 0, 0};
    const std::size_t n0 = 3, n1 = 3;

    std::vector<double> sep(3);
    for (int f = 0; f < 3; ++f) {
        std::vector<double> vals;
        for (const auto& s : samples) vals.push_back(s[static_cast<std::size_t>(f)]);
        const double u = u_statistic_oracle(vals, labels);
        sep[static_cast<std::size_t>(f)] = std::fabs(u / (n0 * n1) - 0.5);
    }
    // feature 0 and 1 perfectly separate (score 0.5), feature 2 is constant (score 0)
    REQUIRE(sep[0] == Catch::Approx(0.5));
    REQUIRE(sep[1] == Catch::Approx(0.5));
    REQUIRE(sep[2] == Catch::Approx(0.0));

    const std::vector<int> keep = mann_whitney_select(samples, labels, 3);
    REQUIRE(keep.size() == 3);
    REQUIRE(keep[0] == 0);  // tie with feature 1 broken by lower index
    REQUIRE(keep[1] == 1);
    REQUIRE(keep[2] == 2);  // constant feature ranked last

    REQUIRE_THROWS_AS(mann_whitney_select(samples, {1, 1, 1, 1, 1, 1}, 2), ValidationError);
}

namespace {

AppearanceModel manual_appearance(const std::vector<std::vector<double>>& train_raw,
                                  const std::vector<std::uint8_t>& labels, int k_nn) {
    AppearanceModel app;
    app.n_landmarks = 1;
    app.k_nn = k_nn;
    app.per_level.resize(1);
    app.per_level[0].resize(1);
    LandmarkAppearance& lm = app.per_level[0][0];
    const std::size_t dim = train_raw.front().size();
    for (std::size_t d = 0; d < dim; ++d) {
        lm.selected.push_back(static_cast<int>(d));
        lm.feat_mean.push_back(0.0);
        lm.feat_std.push_back(1.0);  // identity scaling keeps the oracle simple
    }
    for (const auto& row : train_raw)
        for (double v : row) lm.train.push_back(v);
    lm.labels = labels;
    return app;
}

}  // namespace

TEST_CASE("knn probability follows the exp(-d^2) weighted vote", "[asmof]") {
    // exact hit with k=1
    const AppearanceModel hit = manual_appearance({{1.0, 2.0}, {5.0, 5.0}}, {1, 0}, 1);
    std::vector<double> q60(2, 0.0);
    q60[0] = 1.0;
    q60[1] = 2.0;
    REQUIRE(knn_inside_prob(hit, 0, q60) == Catch::Approx(1.0));

    // two equidistant neighbors with opposite labels
    const AppearanceModel tie = manual_appearance({{-1.0}, {1.0}}, {0, 1}, 2);
    REQUIRE(knn_inside_prob(tie, 0, {0.0}) == Catch::Approx(0.5));

    // 5-point toy set, k=3: hand-computed weighted vote
    const std::vector<std::vector<double>> pts{{0.0}, {0.4}, {1.0}, {1.6}, {3.0}};
    const std::vector<std::uint8_t> labels{0, 1, 1, 0, 1};
    const AppearanceModel toy = manual_appearance(pts, labels, 3);
    const double query = 0.5;
    // 3 nearest: 0.4 (d=0.1, label 1), 1.0 (d=0.5, label 1), 0.0 (d=0.5, label 0)
    const double w1 = std::exp(-0.01), w2 = std::exp(-0.25), w3 = std::exp(-0.25);
    const double expect = (w1 + w2) / (w1 + w2 + w3);
    REQUIRE(knn_inside_prob(toy, 0, {query}) == Catch::Approx(expect).epsilon(1e-12));

    REQUIRE_THROWS_AS(knn_inside_prob(toy, 3, {query}), StateError);

    Rng rng(9);
    for (int t = 0; t < 50; ++t) {
        const double p = knn_inside_prob(toy, 0, {rng.uniform(-5.0, 5.0)});
        REQUIRE(p >= 0.0);
        REQUIRE(p <= 1.0);
    }
}

TEST_CASE("profile objective scores boundary placements", "[asmof]") {
    // ideal step with transition at the center (split index k)
    const int k = 3;
    std::vector<double> step(2 * k + 1, 0.0);
    for (int i = k; i < 2 * k + 1; ++i) step[static_cast<std::size_t>(i)] = 1.0;
    REQUIRE(profile_objective(step, k) == Catch::Approx(0.0));

    std::vector<double> flat(2 * k + 1, 0.5);
    REQUIRE(profile_objective(flat, k) == Catch::Approx((2.0 * k + 1.0) / 2.0));

    const std::vector<double> g{0.1, 0.2, 0.9, 0.8, 0.7};
    REQUIRE(profile_objective(g, 2) == Catch::Approx(0.9));

    // for a monotone ideal step the best split is exactly at the transition
    double best = 1e9;
    int best_split = -1;
    for (int split = 0; split <= 2 * k + 1; ++split) {
        const double f = profile_objective(step, split);
        if (f < best) {
            best = f;
            best_split = split;
        }
    }
    REQUIRE(best_split == k);
}

TEST_CASE("asm search is a fixpoint under an ideal appearance oracle", "[asmof]") {
    const Mask2D disc = filled_disc(64, 64, 32, 32, 14);
    ImageF img(64, 64);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = disc.data[i] ? 1.0f : 0.0f;

    AsmParams params;
    params.n_landmarks = 24;
    params.l_max = 1;
    params.n_max = 5;
    params.k_nn = 2;
    params.n_keep = 1;
    params.validate();

    const LandmarkShape gt = landmarks_from_mask(disc, params.n_landmarks);
    const ShapeModel rigid = build_shape_model({gt, gt}, 0.95, 3.0);
    REQUIRE(rigid.n_modes() == 0);

    // appearance: first feature image is the sigma=1 smoothed intensity;
    // train on raw values 0.9 (inside) vs 0.1 (outside) for every landmark
    AppearanceModel app;
    app.n_landmarks = params.n_landmarks;
    app.k_nn = 2;
    app.profile_k = params.profile_k;
    app.per_level.resize(1);
    app.per_level[0].resize(static_cast<std::size_t>(params.n_landmarks));
    for (auto& lm : app.per_level[0]) {
        lm.selected = {0};
        lm.feat_mean = {0.0};
        lm.feat_std = {1.0};
        lm.train = {0.9, 0.1};
        lm.labels = {1, 0};
    }

    const SearchResult res = asm_search(img, rigid, app, params, &gt);
    REQUIRE(res.bound_violations == 0);
    for (std::size_t i = 0; i < gt.size(); ++i)
        REQUIRE(res.shape[i] == Catch::Approx(gt[i]).margin(1e-9));
}

TEST_CASE("zero-mode search output is a pure translation of the mean", "[asmof]") {
    const Mask2D disc = filled_disc(64, 64, 40, 28, 12);
    ImageF img(64, 64);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = disc.data[i] ? 1.0f : 0.0f;

    AsmParams params;
    params.n_landmarks = 16;
    params.l_max = 1;
    params.n_max = 3;
    params.k_nn = 2;

    // rigid model built from a different disc (centered elsewhere)
    const Mask2D proto = filled_disc(64, 64, 32, 32, 12);
    const LandmarkShape proto_shape = landmarks_from_mask(proto, params.n_landmarks);
    const ShapeModel rigid = build_shape_model({proto_shape, proto_shape}, 0.95, 3.0);

    AppearanceModel app;
    app.n_landmarks = params.n_landmarks;
    app.k_nn = 2;
    app.per_level.resize(1);
    app.per_level[0].resize(static_cast<std::size_t>(params.n_landmarks));
    for (auto& lm : app.per_level[0]) {
        lm.selected = {0};
        lm.feat_mean = {0.0};
        lm.feat_std = {1.0};
        lm.train = {0.9, 0.1};
        lm.labels = {1, 0};
    }

    const SearchResult res = asm_search(img, rigid, app, params);
    REQUIRE(res.bound_violations == 0);
    const double tx = res.shape[0] - rigid.mean[0];
    const double ty = res.shape[1] - rigid.mean[1];
    for (int i = 0; i < params.n_landmarks; ++i) {
        REQUIRE(res.shape[static_cast<std::size_t>(2 * i)] - rigid.mean[static_cast<std::size_t>(2 * i)] ==
                Catch::Approx(tx).margin(1e-9));
        REQUIRE(res.shape[static_cast<std::size_t>(2 * i + 1)] -
                    rigid.mean[static_cast<std::size_t>(2 * i + 1)] ==
                Catch::Approx(ty).margin(1e-9));
    }
}

TEST_CASE("trained search lands near the phantom boundary", "[asmof][slow]") {
    // build group III style training slices from phantom volumes
    AsmParams params;
    params.n_landmarks = 32;
    params.l_max = 2;
    params.n_max = 6;

    std::vector<ImageF> imgs;
    std::vector<Mask2D> masks;
    for (std::uint64_t s = 0; s < 3; ++s) {
        PhantomSpec spec;
        spec.nx = 64;
        spec.ny = 64;
        spec.nz = 48;
        Rng jit(s + 1);
        spec.semi_x = 18.0 * (1.0 + 0.05 * (2 * jit.uniform01() - 1));
        spec.semi_y = 21.0 * (1.0 + 0.05 * (2 * jit.uniform01() - 1));
        spec.semi_z = 17.0;
        spec.noise_sigma = 0.02;
        spec.seed = s * 17 + 3;
        const Phantom ph = generate_phantom(spec);
        for (int z = 20; z < 28; z += 2) {
            const SagittalSlice norm = normalize_intensity(extract_sagittal_slice(ph.volume, z));
            imgs.push_back(norm.pixels);
            masks.push_back(ph.mask.slice(z));
        }
    }
    std::vector<LandmarkShape> shapes;
    std::vector<TrainingSlice> tslices;
    for (std::size_t i = 0; i + 1 < imgs.size(); ++i) {  // hold out the last slice
        shapes.push_back(landmarks_from_mask(masks[i], params.n_landmarks));
        tslices.push_back(TrainingSlice{&imgs[i], &masks[i]});
    }
    const ShapeModel shape_model = build_shape_model(shapes, params.f_v, params.q);
    const AppearanceModel app = train_appearance_model(tslices, params);

    const ImageF& test_img = imgs.back();
    const Mask2D& test_gt = masks.back();
    const SearchResult res = asm_search(test_img, shape_model, app, params);
    REQUIRE(res.bound_violations == 0);

    // oracle: exact distance transform of the ground-truth contour
    Mask2D contour(test_gt.width, test_gt.height, 0);
    for (int y = 0; y < test_gt.height; ++y)
        for (int x = 0; x < test_gt.width; ++x) {
            if (!test_gt.at(x, y)) continue;
            const bool border = x == 0 || y == 0 || x == test_gt.width - 1 ||
                                y == test_gt.height - 1 || !test_gt.at(x - 1, y) ||
                                !test_gt.at(x + 1, y) || !test_gt.at(x, y - 1) ||
                                !test_gt.at(x, y + 1);
            if (border) contour.at(x, y) = 1;
        }
    const std::vector<double> d2 =
        edt_squared_3d(std::vector<std::uint8_t>(contour.data.begin(), contour.data.end()),
                       contour.width, contour.height, 1);
    double mean_dist = 0.0;
    for (int i = 0; i < params.n_landmarks; ++i) {
        const int x = std::clamp(static_cast<int>(std::lround(res.shape[2 * i])), 0,
                                 contour.width - 1);
        const int y = std::clamp(static_cast<int>(std::lround(res.shape[2 * i + 1])), 0,
                                 contour.height - 1);
        mean_dist += std::sqrt(d2[static_cast<std::size_t>(y) * contour.width + x]);
    }
    mean_dist /= params.n_landmarks;
    REQUIRE(mean_dist <= 2.0);
}
