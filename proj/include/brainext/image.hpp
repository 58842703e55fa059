#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "brainext/common.hpp"

namespace brainext {

template <typename T>
struct Image2D {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Image2D() = default;
    Image2D(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    std::size_t size() const { return data.size(); }
    bool same_dims(const Image2D& o) const { return width == o.width && height == o.height; }
};

using ImageF = Image2D<float>;
using Mask2D = Image2D<std::uint8_t>;

struct Rect {
    int x = 0;      // left column
    int y = 0;      // top row
    int w = 0;
    int h = 0;
};

inline std::size_t count_nonzero(const Mask2D& m) {
    std::size_t n = 0;
    for (auto v : m.data) n += v ? 1 : 0;
    return n;
}

// Bilinear sample with clamped coordinates.
template <typename T>
inline double bilinear_sample(const Image2D<T>& img, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double v00 = img.at(x0, y0), v10 = img.at(x1, y0);
    const double v01 = img.at(x0, y1), v11 = img.at(x1, y1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

inline ImageF resize_bilinear(const ImageF& src, int w, int h) {
    ImageF out(w, h);
    const double sx = (w > 1) ? static_cast<double>(src.width - 1) / (w - 1) : 0.0;
    const double sy = (h > 1) ? static_cast<double>(src.height - 1) / (h - 1) : 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(x, y) = static_cast<float>(bilinear_sample(src, x * sx, y * sy));
    return out;
}

// 2x box-average downsample; trailing odd row/column averages what is there.
inline ImageF downsample2(const ImageF& src) {
    const int w = (src.width + 1) / 2;
    const int h = (src.height + 1) / 2;
    ImageF out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sum = 0.0;
            int cnt = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const int sxp = 2 * x + dx, syp = 2 * y + dy;
                    if (sxp < src.width && syp < src.height) {
                        sum += src.at(sxp, syp);
                        ++cnt;
                    }
                }
            out.at(x, y) = static_cast<float>(sum / cnt);
        }
    }
    return out;
}

inline Mask2D crop(const Mask2D& src, const Rect& r) {
    Mask2D out(r.w, r.h);
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) out.at(x, y) = src.at(r.x + x, r.y + y);
    return out;
}

inline ImageF crop(const ImageF& src, const Rect& r) {
    ImageF out(r.w, r.h);
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) out.at(x, y) = src.at(r.x + x, r.y + y);
    return out;
}

// Otsu's threshold over a 256-bin histogram of [min,max].
inline double otsu_threshold(const ImageF& img) {
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (float v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) return lo;
    constexpr int kBins = 256;
    std::vector<double> hist(kBins, 0.0);
    const double scale = (kBins - 1) / static_cast<double>(hi - lo);
    for (float v : img.data) {
        int b = static_cast<int>((v - lo) * scale);
        hist[std::clamp(b, 0, kBins - 1)] += 1.0;
    }
    const double total = static_cast<double>(img.data.size());
    double sum_all = 0.0;
    for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
    double w0 = 0.0, sum0 = 0.0, best_var = -1.0;
    int best_bin = 0;
    for (int b = 0; b < kBins; ++b) {
        w0 += hist[b];
        if (w0 <= 0.0) continue;
        const double w1 = total - w0;
        if (w1 <= 0.0) break;
        sum0 += b * hist[b];
        const double m0 = sum0 / w0;
        const double m1 = (sum_all - sum0) / w1;
        const double var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (var > best_var) {
            best_var = var;
            best_bin = b;
        }
    }
    return lo + (best_bin + 0.5) / scale;
}

struct Component {
    int label = 0;
    int area = 0;
    double centroid_x = 0.0;  // column
    double centroid_y = 0.0;  // row
    int min_x = 0, min_y = 0, max_x = 0, max_y = 0;
};

struct ComponentMap {
    Image2D<int> labels;  // 0 = background, 1..n = components
    std::vector<Component> components;
};

// Connected components of the foreground; labels assigned in raster order of
// each component's first pixel.
inline ComponentMap label_components(const Mask2D& mask, int connectivity = 8) {
    ComponentMap cm;
    cm.labels = Image2D<int>(mask.width, mask.height, 0);
    static const int dx8[8] = {1, -1, 0, 0, 1, 1, -1, -1};
    static const int dy8[8] = {0, 0, 1, -1, 1, -1, 1, -1};
    const int ndirs = (connectivity == 8) ? 8 : 4;
    std::vector<std::pair<int, int>> stack;
    int next = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y) || cm.labels.at(x, y) != 0) continue;
            ++next;
            Component comp;
            comp.label = next;
            comp.min_x = comp.max_x = x;
            comp.min_y = comp.max_y = y;
            double sx = 0.0, sy = 0.0;
            stack.clear();
            stack.emplace_back(x, y);
            cm.labels.at(x, y) = next;
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                ++comp.area;
                sx += cx;
                sy += cy;
                comp.min_x = std::min(comp.min_x, cx);
                comp.max_x = std::max(comp.max_x, cx);
                comp.min_y = std::min(comp.min_y, cy);
                comp.max_y = std::max(comp.max_y, cy);
                for (int d = 0; d < ndirs; ++d) {
                    const int nx = cx + dx8[d], ny = cy + dy8[d];
                    if (mask.in_bounds(nx, ny) && mask.at(nx, ny) && cm.labels.at(nx, ny) == 0) {
                        cm.labels.at(nx, ny) = next;
                        stack.emplace_back(nx, ny);
                    }
                }
            }
            comp.centroid_x = sx / comp.area;
            comp.centroid_y = sy / comp.area;
            cm.components.push_back(comp);
        }
    }
    return cm;
}

// Keep only components whose label satisfies the predicate.
inline Mask2D filter_components(const Mask2D& mask, const ComponentMap& cm,
                                const std::vector<bool>& keep) {
    Mask2D out(mask.width, mask.height, 0);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            const int l = cm.labels.at(x, y);
            if (l > 0 && keep[static_cast<std::size_t>(l - 1)]) out.at(x, y) = 1;
        }
    return out;
}

inline Mask2D remove_small_components(const Mask2D& mask, int min_area) {
    const ComponentMap cm = label_components(mask, 8);
    std::vector<bool> keep(cm.components.size());
    for (std::size_t i = 0; i < cm.components.size(); ++i)
        keep[i] = cm.components[i].area >= min_area;
    return filter_components(mask, cm, keep);
}

// Binary erosion by a disk of radius r (pixels with dx^2+dy^2 <= r^2).
inline Mask2D erode_disk(const Mask2D& mask, double radius) {
    std::vector<std::pair<int, int>> offsets;
    const int ri = static_cast<int>(std::floor(radius));
    for (int dy = -ri; dy <= ri; ++dy)
        for (int dx = -ri; dx <= ri; ++dx)
            if (dx * dx + dy * dy <= radius * radius) offsets.emplace_back(dx, dy);
    Mask2D out(mask.width, mask.height, 0);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            bool all = true;
            for (auto [dx, dy] : offsets) {
                const int nx = x + dx, ny = y + dy;
                if (!mask.in_bounds(nx, ny) || !mask.at(nx, ny)) {
                    all = false;
                    break;
                }
            }
            if (all) out.at(x, y) = 1;
        }
    return out;
}

// Fill background holes (4-connected, not touching the border) smaller than max_area.
inline Mask2D fill_small_holes(const Mask2D& mask, int max_area) {
    Mask2D bg(mask.width, mask.height, 0);
    for (std::size_t i = 0; i < mask.data.size(); ++i) bg.data[i] = mask.data[i] ? 0 : 1;
    const ComponentMap cm = label_components(bg, 4);
    std::vector<bool> fill(cm.components.size(), false);
    for (std::size_t i = 0; i < cm.components.size(); ++i) {
        const Component& c = cm.components[i];
        const bool touches_border = c.min_x == 0 || c.min_y == 0 || c.max_x == mask.width - 1 ||
                                    c.max_y == mask.height - 1;
        fill[i] = !touches_border && c.area < max_area;
    }
    Mask2D out = mask;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            const int l = cm.labels.at(x, y);
            if (l > 0 && fill[static_cast<std::size_t>(l - 1)]) out.at(x, y) = 1;
        }
    return out;
}

// ---- exact squared Euclidean distance transform (per-axis lower envelope) ----

// 1D squared-distance pass: f is the input (squared distances so far), d the output.
inline void edt_pass_1d(const double* f, double* d, int n) {
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p));
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const int p = v[k];
        d[q] = (q - p) * static_cast<double>(q - p) + f[p];
    }
}

// Exact squared EDT of a 3D foreground set (depth may be 1 for 2D).
// dist[i] = squared Euclidean distance to the nearest foreground voxel.
inline std::vector<double> edt_squared_3d(const std::vector<std::uint8_t>& fg, int nx, int ny,
                                          int nz) {
    const double inf = 1e30;
    std::vector<double> dist(fg.size());
    for (std::size_t i = 0; i < fg.size(); ++i) dist[i] = fg[i] ? 0.0 : inf;
    auto idx = [&](int x, int y, int z) {
        return static_cast<std::size_t>(z) * nx * ny + static_cast<std::size_t>(y) * nx + x;
    };
    std::vector<double> f(std::max({nx, ny, nz})), d(std::max({nx, ny, nz}));
    // x axis
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) f[x] = dist[idx(x, y, z)];
            edt_pass_1d(f.data(), d.data(), nx);
            for (int x = 0; x < nx; ++x) dist[idx(x, y, z)] = d[x];
        }
    // y axis
    for (int z = 0; z < nz; ++z)
        for (int x = 0; x < nx; ++x) {
            for (int y = 0; y < ny; ++y) f[y] = dist[idx(x, y, z)];
            edt_pass_1d(f.data(), d.data(), ny);
            for (int y = 0; y < ny; ++y) dist[idx(x, y, z)] = d[y];
        }
    // z axis
    if (nz > 1) {
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                for (int z = 0; z < nz; ++z) f[z] = dist[idx(x, y, z)];
                edt_pass_1d(f.data(), d.data(), nz);
                for (int z = 0; z < nz; ++z) dist[idx(x, y, z)] = d[z];
            }
    }
    return dist;
}

// ---- separable convolution with replicate borders ----

inline void convolve_rows(const ImageF& src, const std::vector<double>& kernel, ImageF& dst) {
    const int r = static_cast<int>(kernel.size() / 2);
    dst = ImageF(src.width, src.height);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            double acc = 0.0;
            for (int t = -r; t <= r; ++t) {
                const int sx = std::clamp(x - t, 0, src.width - 1);
                acc += kernel[static_cast<std::size_t>(t + r)] * src.at(sx, y);
            }
            dst.at(x, y) = static_cast<float>(acc);
        }
}

inline void convolve_cols(const ImageF& src, const std::vector<double>& kernel, ImageF& dst) {
    const int r = static_cast<int>(kernel.size() / 2);
    dst = ImageF(src.width, src.height);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            double acc = 0.0;
            for (int t = -r; t <= r; ++t) {
                const int sy = std::clamp(y - t, 0, src.height - 1);
                acc += kernel[static_cast<std::size_t>(t + r)] * src.at(x, sy);
            }
            dst.at(x, y) = static_cast<float>(acc);
        }
}

// Sampled Gaussian and derivative kernels, calibrated so that smoothing has
// unit DC gain, the first derivative reproduces a unit ramp exactly and the
// second derivative reproduces the curvature of x^2/2 exactly.
inline std::vector<double> gaussian_kernel(double sigma, int order) {
    const int r = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    for (int t = -r; t <= r; ++t) {
        const double g = std::exp(-0.5 * t * t / (sigma * sigma));
        double v = g;
        if (order == 1) v = -t / (sigma * sigma) * g;
        if (order == 2) v = (t * t / (sigma * sigma) - 1.0) / (sigma * sigma) * g;
        k[static_cast<std::size_t>(t + r)] = v;
    }
    if (order == 0) {
        double s = 0.0;
        for (double v : k) s += v;
        for (double& v : k) v /= s;
    } else if (order == 1) {
        double s = 0.0;
        for (int t = -r; t <= r; ++t) s += -t * k[static_cast<std::size_t>(t + r)];
        for (double& v : k) v /= s;
    } else {
        double dc = 0.0;
        for (double v : k) dc += v;
        for (double& v : k) v -= dc / static_cast<double>(k.size());
        double s = 0.0;
        for (int t = -r; t <= r; ++t) s += 0.5 * t * t * k[static_cast<std::size_t>(t + r)];
        for (double& v : k) v /= s;
    }
    return k;
}

// Local 3x3 population standard deviation with replicate borders.
inline ImageF local_std3(const ImageF& src) {
    ImageF out(src.width, src.height);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            double s = 0.0, s2 = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int sx = std::clamp(x + dx, 0, src.width - 1);
                    const int sy = std::clamp(y + dy, 0, src.height - 1);
                    const double v = src.at(sx, sy);
                    s += v;
                    s2 += v * v;
                }
            const double mean = s / 9.0;
            out.at(x, y) = static_cast<float>(std::sqrt(std::max(0.0, s2 / 9.0 - mean * mean)));
        }
    return out;
}

// Even-odd scanline fill of a closed polygon (coordinates in pixel units);
// a pixel is set when its center lies inside.
inline Mask2D polygon_to_mask(const std::vector<double>& xy, int width, int height) {
    Mask2D out(width, height, 0);
    const std::size_t n = xy.size() / 2;
    if (n < 3) return out;
    std::vector<double> xs;
    for (int y = 0; y < height; ++y) {
        const double py = y;
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = (i + 1) % n;
            const double y0 = xy[2 * i + 1], y1 = xy[2 * j + 1];
            const double x0 = xy[2 * i], x1 = xy[2 * j];
            if ((y0 <= py && y1 > py) || (y1 <= py && y0 > py)) {
                const double t = (py - y0) / (y1 - y0);
                xs.push_back(x0 + t * (x1 - x0));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            const int x_lo = static_cast<int>(std::ceil(xs[i]));
            const int x_hi = static_cast<int>(std::floor(xs[i + 1]));
            for (int x = std::max(0, x_lo); x <= std::min(width - 1, x_hi); ++x) out.at(x, y) = 1;
        }
    }
    return out;
}

}  // namespace brainext
