#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "brainext/common.hpp"

namespace brainext {

// Row-major dense matrix; sized for shape models and GP kernels (<= a few hundred).
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const double& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

inline std::vector<double> matvec(const Mat& a, const std::vector<double>& x) {
    std::vector<double> y(a.rows, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < a.cols; ++c) acc += a.at(r, c) * x[c];
        y[r] = acc;
    }
    return y;
}

inline std::vector<double> matvec_t(const Mat& a, const std::vector<double>& x) {
    std::vector<double> y(a.cols, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c = 0; c < a.cols; ++c) y[c] += a.at(r, c) * x[r];
    return y;
}

struct EigenSym {
    std::vector<double> values;  // descending
    Mat vectors;                 // column j is the eigenvector for values[j]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline EigenSym jacobi_eigen_sym(Mat a, int max_sweeps = 100, double tol = 1e-12) {
    const std::size_t n = a.rows;
    if (n != a.cols) throw NumericError("jacobi_eigen_sym: matrix must be square");
    Mat v(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
        if (off < tol * tol) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (std::fabs(apq) < 1e-300) continue;
                const double app = a.at(p, p), aqq = a.at(q, q);
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::vector<double> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = a.at(i, i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return diag[l] > diag[r]; });

    EigenSym out;
    out.values.resize(n);
    out.vectors = Mat(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = diag[order[j]];
        // fix sign: largest-magnitude entry positive, for reproducibility
        std::size_t imax = 0;
        double vmax = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double val = std::fabs(v.at(i, order[j]));
            if (val > vmax) {
                vmax = val;
                imax = i;
            }
        }
        const double sign = v.at(imax, order[j]) >= 0.0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < n; ++i) out.vectors.at(i, j) = sign * v.at(i, order[j]);
    }
    return out;
}

// Cholesky factor L (lower) of a symmetric positive definite matrix.
inline Mat cholesky(const Mat& a) {
    const std::size_t n = a.rows;
    if (n != a.cols) throw NumericError("cholesky: matrix must be square");
    Mat l(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) sum -= l.at(i, k) * l.at(j, k);
            if (i == j) {
                if (sum <= 0.0) throw NumericError("cholesky: matrix not positive definite");
                l.at(i, i) = std::sqrt(sum);
            } else {
                l.at(i, j) = sum / l.at(j, j);
            }
        }
    }
    return l;
}

// Solve A x = b given A = L L^T.
inline std::vector<double> cholesky_solve(const Mat& l, const std::vector<double>& b) {
    const std::size_t n = l.rows;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= l.at(i, k) * y[k];
        y[i] = sum / l.at(i, i);
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double sum = y[i];
        for (std::size_t k = i + 1; k < n; ++k) sum -= l.at(k, i) * x[k];
        x[i] = sum / l.at(i, i);
    }
    return x;
}

inline double cholesky_logdet(const Mat& l) {
    double acc = 0.0;
    for (std::size_t i = 0; i < l.rows; ++i) acc += std::log(l.at(i, i));
    return 2.0 * acc;
}

}  // namespace brainext
