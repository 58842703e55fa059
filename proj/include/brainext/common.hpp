#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace brainext {

// Error taxonomy mirrored by CLI exit codes: validation -> 1, io -> 2, numeric -> 3.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class StateError : public ValidationError {
public:
    explicit StateError(const std::string& msg) : ValidationError(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG: mt19937_64 engine (output sequence fixed by the standard)
// with our own distribution transforms, so identical seeds give identical
// streams on every platform and build.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0,1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double log_uniform(double lo, double hi) {
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

    // Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform01() * static_cast<double>(n)) % n;
    }

    // Standard normal via Box-Muller; the spare is part of the stream state.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream, e.g. one per subject.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        // splitmix64 finalizer over seed+stream
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Index-parallel loop; each index writes only its own outputs, so results do
// not depend on the job count.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace brainext
