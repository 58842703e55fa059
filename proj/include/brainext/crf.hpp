#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "brainext/common.hpp"
#include "brainext/core.hpp"
#include "brainext/image.hpp"
#include "brainext/metrics.hpp"

namespace brainext {

struct CrfParams {
    double w1 = 1.0;
    double w2 = 3.0;          // hard-coded smoothness weight
    double sigma_alpha = 10.0;
    double sigma_beta = 0.1;
    double sigma_gamma = 3.0;  // hard-coded smoothness width
    int n_iterations = 10;

    void validate() const {
        if (!(sigma_alpha > 0.0 && sigma_beta > 0.0 && sigma_gamma > 0.0))
            throw ValidationError("crf kernel widths must be > 0");
        if (n_iterations < 1) throw ValidationError("crf needs at least one iteration");
        if (w1 < 0.0 || w2 < 0.0) throw ValidationError("crf kernel weights must be >= 0");
    }
};

// Per-pixel negative log probabilities, index 0 = background, 1 = brain.
struct UnaryField {
    int width = 0, height = 0;
    std::vector<std::array<double, 2>> phi;

    std::size_t size() const { return phi.size(); }
};

inline UnaryField unary_from_probs(const ImageF& prob_brain) {
    UnaryField u;
    u.width = prob_brain.width;
    u.height = prob_brain.height;
    u.phi.resize(prob_brain.data.size());
    for (std::size_t i = 0; i < prob_brain.data.size(); ++i) {
        const double p = std::clamp(static_cast<double>(prob_brain.data[i]), 1e-12, 1.0 - 1e-12);
        u.phi[i] = {-std::log(1.0 - p), -std::log(p)};
    }
    return u;
}

// Appearance and smoothness kernel values for a pixel pair.
inline std::array<double, 2> pairwise_kernel(int xi, int yi, double ii, int xj, int yj, double ij,
                                             const CrfParams& p) {
    const double d2 = static_cast<double>(xi - xj) * (xi - xj) +
                      static_cast<double>(yi - yj) * (yi - yj);
    const double di = ii - ij;
    const double k1 = std::exp(-d2 / (2.0 * p.sigma_alpha * p.sigma_alpha) -
                               di * di / (2.0 * p.sigma_beta * p.sigma_beta));
    const double k2 = std::exp(-d2 / (2.0 * p.sigma_gamma * p.sigma_gamma));
    return {k1, k2};
}

struct CrfResult {
    Mask2D map;
    ImageF marginal;  // P(brain) after the final iteration
};

namespace crf_detail {

// Dense pairwise sums via one multilinear bilateral grid (4x spatial
// downsampling; optional intensity axis). Used only above the exact-path
// size limit.
inline std::vector<double> grid_filter(const std::vector<double>& values, const ImageF& intensity,
                                       double spatial_sigma, double intensity_sigma) {
    const int w = intensity.width, h = intensity.height;
    const double step = 4.0;
    const bool use_int = intensity_sigma > 0.0;
    float ilo = 0.0f, ihi = 1.0f;
    if (use_int) {
        ilo = *std::min_element(intensity.data.begin(), intensity.data.end());
        ihi = *std::max_element(intensity.data.begin(), intensity.data.end());
        if (!(ihi > ilo)) ihi = ilo + 1.0f;
    }
    const int gw = static_cast<int>(std::ceil(w / step)) + 2;
    const int gh = static_cast<int>(std::ceil(h / step)) + 2;
    const int gi = use_int
                       ? static_cast<int>(std::ceil((ihi - ilo) / intensity_sigma)) + 2
                       : 1;
    std::vector<double> grid(static_cast<std::size_t>(gw) * gh * gi, 0.0);
    auto gidx = [&](int gx, int gy, int gz) {
        return (static_cast<std::size_t>(gz) * gh + gy) * gw + gx;
    };
    auto splat_coords = [&](int x, int y, double& fx, double& fy, double& fz) {
        fx = x / step + 0.5;
        fy = y / step + 0.5;
        fz = use_int ? (intensity.at(x, y) - ilo) / intensity_sigma + 0.5 : 0.0;
    };
    // splat
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double fx, fy, fz;
            splat_coords(x, y, fx, fy, fz);
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy),
                      z0 = static_cast<int>(fz);
            const double ax = fx - x0, ay = fy - y0, az = fz - z0;
            const double v = values[static_cast<std::size_t>(y) * w + x];
            for (int dz = 0; dz < (use_int ? 2 : 1); ++dz)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const double wgt = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay) *
                                           (use_int ? (dz ? az : 1 - az) : 1.0);
                        const int gx = std::min(x0 + dx, gw - 1);
                        const int gy2 = std::min(y0 + dy, gh - 1);
                        const int gz2 = std::min(z0 + dz, gi - 1);
                        grid[gidx(gx, gy2, gz2)] += wgt * v;
                    }
        }
    // separable Gaussian blur along each grid axis
    auto blur_axis = [&](int axis, double sigma) {
        if (sigma <= 0.0) return;
        const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
        std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
        for (int t = -r; t <= r; ++t)
            k[static_cast<std::size_t>(t + r)] = std::exp(-0.5 * t * t / (sigma * sigma));
        std::vector<double> out(grid.size(), 0.0);
        const int dims[3] = {gw, gh, gi};
        for (int z = 0; z < gi; ++z)
            for (int y = 0; y < gh; ++y)
                for (int x = 0; x < gw; ++x) {
                    const int coord[3] = {x, y, z};
                    double acc = 0.0;
                    for (int t = -r; t <= r; ++t) {
                        int c[3] = {x, y, z};
                        c[axis] = coord[axis] + t;
                        if (c[axis] < 0 || c[axis] >= dims[axis]) continue;
                        acc += k[static_cast<std::size_t>(t + r)] * grid[gidx(c[0], c[1], c[2])];
                    }
                    out[gidx(x, y, z)] = acc;
                }
        grid = std::move(out);
    };
    blur_axis(0, spatial_sigma / step);
    blur_axis(1, spatial_sigma / step);
    if (use_int) blur_axis(2, 1.0);
    // slice
    std::vector<double> result(values.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double fx, fy, fz;
            splat_coords(x, y, fx, fy, fz);
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy),
                      z0 = static_cast<int>(fz);
            const double ax = fx - x0, ay = fy - y0, az = fz - z0;
            double acc = 0.0;
            for (int dz = 0; dz < (use_int ? 2 : 1); ++dz)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const double wgt = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay) *
                                           (use_int ? (dz ? az : 1 - az) : 1.0);
                        const int gx = std::min(x0 + dx, gw - 1);
                        const int gy2 = std::min(y0 + dy, gh - 1);
                        const int gz2 = std::min(z0 + dz, gi - 1);
                        acc += wgt * grid[gidx(gx, gy2, gz2)];
                    }
            result[static_cast<std::size_t>(y) * w + x] = acc;
        }
    return result;
}

}  // namespace crf_detail

inline constexpr std::size_t kCrfExactLimit = 4096;

// Mean-field inference over the fully connected binary CRF. Exact O(N^2)
// message passing up to kCrfExactLimit pixels; a 4x-downsampled bilateral
// grid approximates the Gaussian sums beyond that.
inline CrfResult mean_field(const UnaryField& unary, const ImageF& intensity,
                            const CrfParams& params) {
    params.validate();
    if (unary.width != intensity.width || unary.height != intensity.height)
        throw ValidationError("mean_field: unary/intensity dims differ");
    const int w = unary.width, h = unary.height;
    const std::size_t n = unary.size();

    std::vector<double> q(n);  // Q(brain)
    for (std::size_t i = 0; i < n; ++i) {
        const double e1 = std::exp(-unary.phi[i][1]);
        const double e0 = std::exp(-unary.phi[i][0]);
        q[i] = e1 / (e0 + e1);
    }

    const bool exact = n <= kCrfExactLimit;
    std::vector<float> kernel;  // row-major dense kernel, diagonal zeroed
    std::vector<double> rowsum(n, 0.0);
    if (exact) {
        kernel.assign(n * n, 0.0f);
        for (std::size_t i = 0; i < n; ++i) {
            const int xi = static_cast<int>(i) % w, yi = static_cast<int>(i) / w;
            const double ii = intensity.at(xi, yi);
            for (std::size_t j = i + 1; j < n; ++j) {
                const int xj = static_cast<int>(j) % w, yj = static_cast<int>(j) / w;
                const auto k = pairwise_kernel(xi, yi, ii, xj, yj, intensity.at(xj, yj), params);
                const float kv = static_cast<float>(params.w1 * k[0] + params.w2 * k[1]);
                kernel[i * n + j] = kv;
                kernel[j * n + i] = kv;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            const float* row = kernel.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) acc += row[j];
            rowsum[i] = acc;
        }
    }

    std::vector<double> coupled(n, 0.0);
    std::vector<double> ones(n, 1.0);
    for (int iter = 0; iter < params.n_iterations; ++iter) {
        if (exact) {
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                const float* row = kernel.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) acc += row[j] * q[j];
                coupled[i] = acc;
            }
        } else {
            std::vector<double> app = crf_detail::grid_filter(q, intensity, params.sigma_alpha,
                                                              params.sigma_beta);
            std::vector<double> smo = crf_detail::grid_filter(q, intensity, params.sigma_gamma,
                                                              0.0);
            std::vector<double> app1 = crf_detail::grid_filter(ones, intensity,
                                                               params.sigma_alpha,
                                                               params.sigma_beta);
            std::vector<double> smo1 = crf_detail::grid_filter(ones, intensity,
                                                               params.sigma_gamma, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                // exclude self (kernel value w1 + w2 at zero distance)
                coupled[i] = params.w1 * (app[i] - q[i]) + params.w2 * (smo[i] - q[i]);
                rowsum[i] = params.w1 * (app1[i] - 1.0) + params.w2 * (smo1[i] - 1.0);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            // Potts compatibility: the message for a label sums kernels against
            // the opposite-label marginals.
            const double m_brain = rowsum[i] - coupled[i];
            const double m_bg = coupled[i];
            const double a1 = -unary.phi[i][1] - m_brain;
            const double a0 = -unary.phi[i][0] - m_bg;
            const double mx = std::max(a0, a1);
            const double e0 = std::exp(a0 - mx), e1 = std::exp(a1 - mx);
            double qb = e1 / (e0 + e1);
            qb = std::clamp(qb, 1e-12, 1.0 - 1e-12);
            q[i] = qb;
        }
    }

    CrfResult res;
    res.map = Mask2D(w, h, 0);
    res.marginal = ImageF(w, h);
    for (std::size_t i = 0; i < n; ++i) {
        res.marginal.data[i] = static_cast<float>(q[i]);
        res.map.data[i] = q[i] > 0.5 ? 1 : 0;
    }
    return res;
}

// Gibbs energy of a labeling under the dense binary Potts model.
inline double crf_energy(const Mask2D& labels, const UnaryField& unary, const ImageF& intensity,
                         const CrfParams& params) {
    const int w = unary.width;
    const std::size_t n = unary.size();
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) e += unary.phi[i][labels.data[i] ? 1 : 0];
    for (std::size_t i = 0; i < n; ++i) {
        const int xi = static_cast<int>(i) % w, yi = static_cast<int>(i) / w;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (labels.data[i] == labels.data[j]) continue;
            const int xj = static_cast<int>(j) % w, yj = static_cast<int>(j) / w;
            const auto k = pairwise_kernel(xi, yi, intensity.at(xi, yi), xj, yj,
                                           intensity.at(xj, yj), params);
            e += params.w1 * k[0] + params.w2 * k[1];
        }
    }
    return e;
}

struct ExactCrfResult {
    Mask2D map;
    ImageF marginal;
    double min_energy = 0.0;
};

// Brute-force enumeration over all 2^N labelings; the test oracle.
inline ExactCrfResult exact_small_crf(const UnaryField& unary, const ImageF& intensity,
                                      const CrfParams& params) {
    const std::size_t n = unary.size();
    if (n > 16) throw ValidationError("exact_small_crf: more than 16 pixels");
    const std::uint32_t states = 1u << n;
    std::vector<double> energy(states);
    Mask2D lab(unary.width, unary.height, 0);
    double best = 1e300;
    std::uint32_t best_state = 0;
    for (std::uint32_t st = 0; st < states; ++st) {
        for (std::size_t i = 0; i < n; ++i) lab.data[i] = (st >> i) & 1u;
        energy[st] = crf_energy(lab, unary, intensity, params);
        if (energy[st] < best) {
            best = energy[st];
            best_state = st;
        }
    }
    double z = 0.0;
    std::vector<double> p1(n, 0.0);
    for (std::uint32_t st = 0; st < states; ++st) {
        const double wgt = std::exp(-(energy[st] - best));
        z += wgt;
        for (std::size_t i = 0; i < n; ++i)
            if ((st >> i) & 1u) p1[i] += wgt;
    }
    ExactCrfResult res;
    res.min_energy = best;
    res.map = Mask2D(unary.width, unary.height, 0);
    res.marginal = ImageF(unary.width, unary.height);
    for (std::size_t i = 0; i < n; ++i) {
        res.map.data[i] = (best_state >> i) & 1u;
        res.marginal.data[i] = static_cast<float>(p1[i] / z);
    }
    return res;
}

// ---- parameter search ----

struct CrfValidationPair {
    ImageF prob;       // unary source
    ImageF intensity;  // appearance kernel source
    Mask2D gt;
};

struct CrfTuneTrial {
    int trial = 0;
    double w1 = 0.0, sigma_alpha = 0.0, sigma_beta = 0.0;
    double mean_dice = 0.0;
};

struct CrfTuneResult {
    CrfParams params;
    std::vector<CrfTuneTrial> log;
};

// Random search over (w1, sigma_alpha, sigma_beta) with w2 and sigma_gamma
// held fixed; returns the trial with the best mean Dice.
inline CrfTuneResult tune_params(const std::vector<CrfValidationPair>& pairs,
                                 const CrfParams& base = CrfParams{}, int budget = 50,
                                 std::uint64_t seed = 0) {
    if (pairs.empty()) throw ValidationError("tune_params: empty validation set");
    Rng rng(seed);
    CrfTuneResult out;
    out.params = base;
    double best = -1.0;
    for (int trial = 0; trial < budget; ++trial) {
        CrfParams p = base;
        p.w1 = rng.log_uniform(0.1, 10.0);
        p.sigma_alpha = rng.log_uniform(1.0, 80.0);
        p.sigma_beta = rng.log_uniform(0.01, 1.0);
        double dice_sum = 0.0;
        for (const auto& pair : pairs) {
            const CrfResult res = mean_field(unary_from_probs(pair.prob), pair.intensity, p);
            dice_sum += dice(confusion(BinaryMask::from_slice(res.map),
                                       BinaryMask::from_slice(pair.gt)));
        }
        const double mean_dice = dice_sum / static_cast<double>(pairs.size());
        out.log.push_back(CrfTuneTrial{trial, p.w1, p.sigma_alpha, p.sigma_beta, mean_dice});
        if (mean_dice > best) {
            best = mean_dice;
            out.params = p;
        }
    }
    return out;
}

}  // namespace brainext
