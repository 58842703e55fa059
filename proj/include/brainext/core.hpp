#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "brainext/common.hpp"
#include "brainext/image.hpp"

namespace brainext {

// Axis convention of the stored grid. SagittalStack means the slowest index
// (nz planes) walks across the head left-to-right, so plane k is a sagittal
// cross-section with an ny x nx pixel grid.
enum class Orientation : std::uint8_t { SagittalStack = 0 };

// 3D intensity grid, x-fastest scanline order: value(x,y,z) = data[x + nx*(y + ny*z)].
struct Volume {
    int nx = 0, ny = 0, nz = 0;
    double sx = 1.0, sy = 1.0, sz = 1.0;  // spacing, millimeters
    Orientation orientation = Orientation::SagittalStack;
    std::vector<float> data;

    Volume() = default;
    Volume(int nx_, int ny_, int nz_, double sx_ = 1.0, double sy_ = 1.0, double sz_ = 1.0)
        : nx(nx_), ny(ny_), nz(nz_), sx(sx_), sy(sy_), sz(sz_) {
        validate_dims();
        data.assign(static_cast<std::size_t>(nx) * ny * nz, 0.0f);
    }

    void validate_dims() const {
        if (nx < 1 || ny < 1 || nz < 1)
            throw ValidationError("volume dims must be >= 1");
        if (!(sx > 0.0) || !(sy > 0.0) || !(sz > 0.0))
            throw ValidationError("volume spacing must be > 0");
    }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(z) * nx * ny + static_cast<std::size_t>(y) * nx + x;
    }
    float& at(int x, int y, int z) { return data[index(x, y, z)]; }
    const float& at(int x, int y, int z) const { return data[index(x, y, z)]; }
    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && x < nx && y >= 0 && y < ny && z >= 0 && z < nz;
    }
};

// One sagittal plane of a volume: pixels(x,y) over an ny-row by nx-column grid.
struct SagittalSlice {
    int z_index = 0;
    ImageF pixels;
};

// Per-voxel {0,1} labels over a volume grid (depth = nz) or a slice grid (depth = 1).
struct BinaryMask {
    int width = 0, height = 0, depth = 1;
    std::vector<std::uint8_t> labels;

    BinaryMask() = default;
    BinaryMask(int w, int h, int d = 1)
        : width(w), height(h), depth(d), labels(static_cast<std::size_t>(w) * h * d, 0) {}

    static BinaryMask from_slice(const Mask2D& m) {
        BinaryMask b(m.width, m.height, 1);
        b.labels.assign(m.data.begin(), m.data.end());
        return b;
    }
    Mask2D slice(int z = 0) const {
        Mask2D m(width, height);
        const std::size_t off = static_cast<std::size_t>(z) * width * height;
        std::copy(labels.begin() + off, labels.begin() + off + m.data.size(), m.data.begin());
        return m;
    }
    void set_slice(int z, const Mask2D& m) {
        const std::size_t off = static_cast<std::size_t>(z) * width * height;
        std::copy(m.data.begin(), m.data.end(), labels.begin() + off);
    }
    std::size_t index(int x, int y, int z = 0) const {
        return static_cast<std::size_t>(z) * width * height + static_cast<std::size_t>(y) * width + x;
    }
    std::uint8_t at(int x, int y, int z = 0) const { return labels[index(x, y, z)]; }
    std::uint8_t& at(int x, int y, int z = 0) { return labels[index(x, y, z)]; }
    bool same_dims(const BinaryMask& o) const {
        return width == o.width && height == o.height && depth == o.depth;
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : labels) n += v;
        return n;
    }
};

enum class GroupTag : std::uint8_t { I = 1, II = 2, III = 3 };

inline char group_char(GroupTag g) {
    switch (g) {
        case GroupTag::I: return '1';
        case GroupTag::II: return '2';
        default: return '3';
    }
}

// Slice partition along z. Half-open blocks: [0,k1)=I, [k1,k2)=II, [k2,k3)=III,
// [k3,k4)=II, [k4,nz)=I.
struct GroupPartition {
    int k1 = 0, k2 = 0, k3 = 0, k4 = 0;
    std::vector<GroupTag> labels;

    void validate(int nz) const {
        if (!(0 <= k1 && k1 <= k2 && k2 <= k3 && k3 <= k4 && k4 <= nz))
            throw ValidationError("group partition indices must be monotone within [0, nz]");
        if (static_cast<int>(labels.size()) != nz)
            throw ValidationError("group partition labels must cover every slice");
        for (int z = 0; z < nz; ++z) {
            GroupTag want = GroupTag::I;
            if (z >= k1 && z < k2) want = GroupTag::II;
            if (z >= k2 && z < k3) want = GroupTag::III;
            if (z >= k3 && z < k4) want = GroupTag::II;
            if (labels[static_cast<std::size_t>(z)] != want)
                throw ValidationError("group labels do not follow the I,II,III,II,I order");
        }
    }

    static GroupPartition from_boundaries(int k1, int k2, int k3, int k4, int nz) {
        GroupPartition p;
        p.k1 = k1;
        p.k2 = k2;
        p.k3 = k3;
        p.k4 = k4;
        p.labels.resize(static_cast<std::size_t>(nz), GroupTag::I);
        for (int z = k1; z < k2; ++z) p.labels[static_cast<std::size_t>(z)] = GroupTag::II;
        for (int z = k2; z < k3; ++z) p.labels[static_cast<std::size_t>(z)] = GroupTag::III;
        for (int z = k3; z < k4; ++z) p.labels[static_cast<std::size_t>(z)] = GroupTag::II;
        p.validate(nz);
        return p;
    }
};

// Parse a per-slice label sequence into boundary indices; throws unless the
// runs follow the I,II,III,II,I order with no group skipped (a direct I..III
// transition is a violation).
inline GroupPartition partition_from_labels(const std::vector<GroupTag>& labels) {
    const int nz = static_cast<int>(labels.size());
    if (nz == 0) throw ValidationError("empty label sequence");
    std::vector<std::pair<int, int>> runs;  // (group, end index exclusive)
    for (int z = 0; z < nz; ++z) {
        const int g = static_cast<int>(labels[static_cast<std::size_t>(z)]);
        if (!runs.empty() && runs.back().first == g)
            runs.back().second = z + 1;
        else
            runs.emplace_back(g, z + 1);
    }
    for (std::size_t r = 1; r < runs.size(); ++r) {
        const int d = runs[r].first - runs[r - 1].first;
        if (d != 1 && d != -1)
            throw ValidationError("slice labels skip a group (order must be I,II,III,II,I)");
    }
    // align runs to the template 1,2,3,2,1
    static const int kTemplate[5] = {1, 2, 3, 2, 1};
    int boundaries[5] = {0, 0, 0, 0, 0};  // end of each template slot
    int t = 0;
    int prev_end = 0;
    for (const auto& [g, end] : runs) {
        while (t < 5 && kTemplate[t] != g) {
            boundaries[t] = prev_end;
            ++t;
        }
        if (t >= 5) throw ValidationError("slice labels violate the I,II,III,II,I group order");
        boundaries[t] = end;
        prev_end = end;
        ++t;
        if (t < 5) boundaries[t] = end;  // provisional for possibly-empty next slots
    }
    for (; t < 5; ++t) boundaries[t] = prev_end;
    return GroupPartition::from_boundaries(boundaries[0], boundaries[1], boundaries[2],
                                           boundaries[3], nz);
}

// Synthetic head: ellipsoidal brain, shell skull, noisy background.
struct PhantomSpec {
    int nx = 64, ny = 64, nz = 48;
    double center_x = 32.0, center_y = 32.0, center_z = 24.0;
    double semi_x = 19.0, semi_y = 22.0, semi_z = 17.0;
    double shell_thickness = 3.0;
    double noise_sigma = 0.03;
    std::uint64_t seed = 0;

    void validate() const {
        if (nx < 1 || ny < 1 || nz < 1) throw ValidationError("phantom dims must be >= 1");
        if (noise_sigma < 0.0) throw ValidationError("phantom noise_sigma must be >= 0");
        if (semi_x <= 0.0 || semi_y <= 0.0 || semi_z <= 0.0)
            throw ValidationError("phantom semi-axes must be > 0");
        if (center_x - semi_x < 0.0 || center_x + semi_x > nx - 1 || center_y - semi_y < 0.0 ||
            center_y + semi_y > ny - 1 || center_z - semi_z < 0.0 || center_z + semi_z > nz - 1)
            throw ValidationError("phantom ellipsoid exceeds volume dims");
    }
};

// ---- operations ----

inline SagittalSlice extract_sagittal_slice(const Volume& v, int z) {
    if (z < 0 || z >= v.nz) throw ValidationError("slice index out of range");
    SagittalSlice s;
    s.z_index = z;
    s.pixels = ImageF(v.nx, v.ny);
    for (int y = 0; y < v.ny; ++y)
        for (int x = 0; x < v.nx; ++x) s.pixels.at(x, y) = v.at(x, y, z);
    return s;
}

// Percentile with linear interpolation between order statistics.
inline double percentile_sorted(const std::vector<float>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double f = pos - static_cast<double>(lo);
    return (1.0 - f) * sorted[lo] + f * sorted[hi];
}

// Robust [p1,p99] rescale to [0,1]; constant slices map to all-zero.
inline SagittalSlice normalize_intensity(const SagittalSlice& s) {
    std::vector<float> sorted(s.pixels.data);
    std::sort(sorted.begin(), sorted.end());
    const double p1 = percentile_sorted(sorted, 1.0);
    const double p99 = percentile_sorted(sorted, 99.0);
    SagittalSlice out;
    out.z_index = s.z_index;
    out.pixels = ImageF(s.pixels.width, s.pixels.height);
    if (!(p99 > p1)) return out;  // all zeros
    const double scale = 1.0 / (p99 - p1);
    for (std::size_t i = 0; i < s.pixels.data.size(); ++i) {
        const double v = (s.pixels.data[i] - p1) * scale;
        out.pixels.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

struct Phantom {
    Volume volume;
    BinaryMask mask;
};

inline Phantom generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    Phantom ph;
    ph.volume = Volume(spec.nx, spec.ny, spec.nz);
    ph.mask = BinaryMask(spec.nx, spec.ny, spec.nz);
    Rng rng(spec.seed);
    const double ox = spec.semi_x + spec.shell_thickness;
    const double oy = spec.semi_y + spec.shell_thickness;
    const double oz = spec.semi_z + spec.shell_thickness;
    for (int z = 0; z < spec.nz; ++z)
        for (int y = 0; y < spec.ny; ++y)
            for (int x = 0; x < spec.nx; ++x) {
                const double dx = (x - spec.center_x) / spec.semi_x;
                const double dy = (y - spec.center_y) / spec.semi_y;
                const double dz = (z - spec.center_z) / spec.semi_z;
                const double r_brain = dx * dx + dy * dy + dz * dz;
                const double ex = (x - spec.center_x) / ox;
                const double ey = (y - spec.center_y) / oy;
                const double ez = (z - spec.center_z) / oz;
                const double r_outer = ex * ex + ey * ey + ez * ez;
                float base = 0.1f;
                if (r_brain <= 1.0) {
                    base = 0.8f;
                    ph.mask.at(x, y, z) = 1;
                } else if (r_outer <= 1.0) {
                    base = 0.5f;
                }
                float noise = 0.0f;
                if (spec.noise_sigma > 0.0)
                    noise = static_cast<float>(rng.normal(0.0, spec.noise_sigma));
                ph.volume.at(x, y, z) = base + noise;
            }
    return ph;
}

}  // namespace brainext
