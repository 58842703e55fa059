#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "brainext/core.hpp"
#include "brainext/image.hpp"

using namespace brainext;

namespace {

// independent percentile oracle: sort + linear interpolation
double percentile_oracle(std::vector<float> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * (v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return (1.0 - (pos - lo)) * v[lo] + (pos - lo) * v[hi];
}

}  // namespace

TEST_CASE("extract_sagittal_slice returns constant planes", "[core]") {
    Volume v(3, 3, 3);
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) v.at(x, y, z) = static_cast<float>(z);
    const SagittalSlice s = extract_sagittal_slice(v, 1);
    REQUIRE(s.pixels.width == 3);
    REQUIRE(s.pixels.height == 3);
    for (float p : s.pixels.data) REQUIRE(p == 1.0f);
    REQUIRE_THROWS_AS(extract_sagittal_slice(v, 3), ValidationError);
    REQUIRE_THROWS_AS(extract_sagittal_slice(v, -1), ValidationError);
}

TEST_CASE("slices reassemble the volume exactly", "[core]") {
    PhantomSpec spec;
    spec.nx = 20;
    spec.ny = 18;
    spec.nz = 16;
    spec.center_x = 10;
    spec.center_y = 9;
    spec.center_z = 8;
    spec.semi_x = 6;
    spec.semi_y = 5;
    spec.semi_z = 5;
    spec.noise_sigma = 0.05;
    spec.seed = 7;
    const Phantom ph = generate_phantom(spec);
    Volume rebuilt(spec.nx, spec.ny, spec.nz);
    for (int z = 0; z < spec.nz; ++z) {
        const SagittalSlice s = extract_sagittal_slice(ph.volume, z);
        for (int y = 0; y < spec.ny; ++y)
            for (int x = 0; x < spec.nx; ++x) rebuilt.at(x, y, z) = s.pixels.at(x, y);
    }
    REQUIRE(rebuilt.data == ph.volume.data);
}

TEST_CASE("center phantom slice matches the analytic ellipse", "[core]") {
    PhantomSpec spec;
    spec.noise_sigma = 0.0;
    spec.seed = 0;
    const Phantom ph = generate_phantom(spec);
    const int zc = static_cast<int>(spec.center_z);
    const SagittalSlice s = extract_sagittal_slice(ph.volume, zc);
    for (int y = 0; y < spec.ny; ++y)
        for (int x = 0; x < spec.nx; ++x) {
            const double dx = (x - spec.center_x) / spec.semi_x;
            const double dy = (y - spec.center_y) / spec.semi_y;
            const double dz = (zc - spec.center_z) / spec.semi_z;
            const bool inside = dx * dx + dy * dy + dz * dz <= 1.0;
            if (inside)
                REQUIRE(s.pixels.at(x, y) == 0.8f);
            else
                REQUIRE(s.pixels.at(x, y) != 0.8f);
        }
}

TEST_CASE("normalize_intensity degenerate and monotone cases", "[core]") {
    SagittalSlice s;
    s.pixels = ImageF(8, 8, 7.0f);
    const SagittalSlice out = normalize_intensity(s);
    for (float p : out.pixels.data) REQUIRE(p == 0.0f);

    SagittalSlice ramp;
    ramp.pixels = ImageF(16, 16);
    for (int i = 0; i < 256; ++i) ramp.pixels.data[static_cast<std::size_t>(i)] = static_cast<float>(i);
    const SagittalSlice nr = normalize_intensity(ramp);
    REQUIRE(*std::min_element(nr.pixels.data.begin(), nr.pixels.data.end()) == 0.0f);
    REQUIRE(*std::max_element(nr.pixels.data.begin(), nr.pixels.data.end()) == 1.0f);
    for (std::size_t i = 1; i < nr.pixels.data.size(); ++i)
        REQUIRE(nr.pixels.data[i] >= nr.pixels.data[i - 1]);
}

TEST_CASE("normalize_intensity clamps outliers, preserves bulk spread", "[core]") {
    SagittalSlice s;
    s.pixels = ImageF(20, 20);
    Rng rng(3);
    for (auto& p : s.pixels.data) p = static_cast<float>(rng.uniform(0.0, 100.0));
    s.pixels.data[57] = 10000.0f;
    const SagittalSlice out = normalize_intensity(s);
    REQUIRE(out.pixels.data[57] == 1.0f);

    const double p1 = percentile_oracle(s.pixels.data, 1.0);
    const double p99 = percentile_oracle(s.pixels.data, 99.0);
    for (std::size_t i = 0; i < out.pixels.data.size(); ++i) {
        const double expect = std::clamp((s.pixels.data[i] - p1) / (p99 - p1), 0.0, 1.0);
        REQUIRE(std::fabs(out.pixels.data[i] - expect) < 1e-6);
    }
    // bulk spread: values well inside [p1,p99] stay strictly ordered
    REQUIRE(p99 < 200.0);  // outlier did not capture the 99th percentile
}

TEST_CASE("normalize_intensity is idempotent after the first pass", "[core]") {
    Rng rng(11);
    // 101 pixels make the 1%/99% percentile positions land exactly on order
    // statistics, so the normalized slice has p1 = 0 and p99 = 1 exactly.
    SagittalSlice s;
    s.pixels = ImageF(101, 1);
    for (auto& p : s.pixels.data) p = static_cast<float>(rng.normal(50.0, 20.0));
    const SagittalSlice once = normalize_intensity(s);
    std::vector<float> sorted(once.pixels.data);
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(std::fabs(percentile_sorted(sorted, 1.0) - 0.0) < 1e-9);
    REQUIRE(std::fabs(percentile_sorted(sorted, 99.0) - 1.0) < 1e-9);
    const SagittalSlice twice = normalize_intensity(once);
    for (std::size_t i = 0; i < once.pixels.data.size(); ++i)
        REQUIRE(std::fabs(twice.pixels.data[i] - once.pixels.data[i]) <= 1e-9);
}

TEST_CASE("phantom determinism and intensity levels", "[core]") {
    PhantomSpec spec;
    spec.noise_sigma = 0.0;
    spec.seed = 5;
    const Phantom a = generate_phantom(spec);
    std::vector<float> uniq(a.volume.data);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    REQUIRE(uniq.size() == 3);

    spec.noise_sigma = 0.05;
    const Phantom b1 = generate_phantom(spec);
    const Phantom b2 = generate_phantom(spec);
    REQUIRE(b1.volume.data == b2.volume.data);
    REQUIRE(b1.mask.labels == b2.mask.labels);
}

TEST_CASE("phantom mask volume approximates the analytic ellipsoid", "[core]") {
    PhantomSpec spec;
    spec.noise_sigma = 0.0;
    const Phantom ph = generate_phantom(spec);
    const double analytic = 4.0 / 3.0 * M_PI * spec.semi_x * spec.semi_y * spec.semi_z;
    const double counted = static_cast<double>(ph.mask.count());
    REQUIRE(std::fabs(counted - analytic) / analytic < 0.05);
}

TEST_CASE("phantom rejects ellipsoids that leave the volume", "[core]") {
    PhantomSpec spec;
    spec.semi_x = 40.0;  // exceeds nx = 64 around center 32
    REQUIRE_THROWS_AS(generate_phantom(spec), ValidationError);
}

TEST_CASE("group partition order is validated", "[core]") {
    std::vector<GroupTag> good;
    for (int i = 0; i < 4; ++i) good.push_back(GroupTag::I);
    for (int i = 0; i < 3; ++i) good.push_back(GroupTag::II);
    for (int i = 0; i < 5; ++i) good.push_back(GroupTag::III);
    for (int i = 0; i < 3; ++i) good.push_back(GroupTag::II);
    for (int i = 0; i < 4; ++i) good.push_back(GroupTag::I);
    const GroupPartition p = partition_from_labels(good);
    REQUIRE(p.k1 == 4);
    REQUIRE(p.k2 == 7);
    REQUIRE(p.k3 == 12);
    REQUIRE(p.k4 == 15);
    p.validate(static_cast<int>(good.size()));

    std::vector<GroupTag> bad{GroupTag::I, GroupTag::III, GroupTag::II};
    REQUIRE_THROWS_AS(partition_from_labels(bad), ValidationError);
}

TEST_CASE("binary image helpers behave on simple shapes", "[core]") {
    Mask2D square(12, 12, 0);
    for (int y = 2; y < 10; ++y)
        for (int x = 2; x < 10; ++x) square.at(x, y) = 1;
    const Mask2D eroded = erode_disk(square, 2.0);
    REQUIRE(eroded.at(5, 5) == 1);
    REQUIRE(eroded.at(2, 2) == 0);

    Mask2D holed = square;
    holed.at(5, 5) = 0;
    const Mask2D filled = fill_small_holes(holed, 10);
    REQUIRE(filled.at(5, 5) == 1);

    const ComponentMap cm = label_components(square, 8);
    REQUIRE(cm.components.size() == 1);
    REQUIRE(cm.components[0].area == 64);
    REQUIRE(cm.components[0].centroid_x == Catch::Approx(5.5));
}
