#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "brainext/asmof.hpp"
#include "brainext/cnn.hpp"
#include "brainext/common.hpp"
#include "brainext/core.hpp"
#include "brainext/crf.hpp"
#include "brainext/grouping.hpp"
#include "brainext/groupone.hpp"
#include "brainext/metrics.hpp"

#include <json.hpp>

namespace brainext {

// ---- single-file volumetric format (348-byte header, "n+1" magic) ----

enum class VolumeDtype : std::int16_t { U8 = 2, I16 = 4, F32 = 16 };

namespace ingest_detail {

constexpr std::size_t kHeaderSize = 348;
constexpr float kDataOffset = 352.0f;

inline void put_i16(std::uint8_t* h, std::size_t off, std::int16_t v) {
    h[off] = static_cast<std::uint8_t>(v & 0xff);
    h[off + 1] = static_cast<std::uint8_t>((v >> 8) & 0xff);
}
inline void put_i32(std::uint8_t* h, std::size_t off, std::int32_t v) {
    for (int i = 0; i < 4; ++i) h[off + i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
}
inline void put_f32(std::uint8_t* h, std::size_t off, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) h[off + i] = static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff);
}
inline std::int16_t get_i16(const std::uint8_t* h, std::size_t off, bool swap) {
    std::uint16_t v = static_cast<std::uint16_t>(h[off]) |
                      (static_cast<std::uint16_t>(h[off + 1]) << 8);
    if (swap) v = static_cast<std::uint16_t>((v >> 8) | (v << 8));
    return static_cast<std::int16_t>(v);
}
inline std::int32_t get_i32(const std::uint8_t* h, std::size_t off, bool swap) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(h[off + i]) << (8 * i);
    if (swap) v = __builtin_bswap32(v);
    return static_cast<std::int32_t>(v);
}
inline float get_f32(const std::uint8_t* h, std::size_t off, bool swap) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(h[off + i]) << (8 * i);
    if (swap) v = __builtin_bswap32(v);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

}  // namespace ingest_detail

inline void write_volume(const std::string& path, const Volume& v,
                         VolumeDtype dtype = VolumeDtype::F32) {
    using namespace ingest_detail;
    v.validate_dims();
    std::uint8_t header[kHeaderSize] = {0};
    put_i32(header, 0, static_cast<std::int32_t>(kHeaderSize));
    put_i16(header, 40, 3);  // rank
    put_i16(header, 42, static_cast<std::int16_t>(v.nx));
    put_i16(header, 44, static_cast<std::int16_t>(v.ny));
    put_i16(header, 46, static_cast<std::int16_t>(v.nz));
    for (std::size_t d = 4; d < 8; ++d) put_i16(header, 40 + 2 * d, 1);
    put_i16(header, 70, static_cast<std::int16_t>(dtype));
    const int bitpix = dtype == VolumeDtype::U8 ? 8 : dtype == VolumeDtype::I16 ? 16 : 32;
    put_i16(header, 72, static_cast<std::int16_t>(bitpix));
    put_f32(header, 76, 1.0f);  // pixdim[0]
    put_f32(header, 80, static_cast<float>(v.sx));
    put_f32(header, 84, static_cast<float>(v.sy));
    put_f32(header, 88, static_cast<float>(v.sz));
    put_f32(header, 108, kDataOffset);
    header[344] = 'n';
    header[345] = '+';
    header[346] = '1';
    header[347] = '\0';

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(header), kHeaderSize);
    const char pad[4] = {0, 0, 0, 0};
    out.write(pad, 4);

    const std::size_t n = v.data.size();
    if (dtype == VolumeDtype::F32) {
        std::vector<std::uint8_t> buf(4 * n);
        for (std::size_t i = 0; i < n; ++i) put_f32(buf.data(), 4 * i, v.data[i]);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    } else if (dtype == VolumeDtype::I16) {
        std::vector<std::uint8_t> buf(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const double c = std::clamp(std::llround(static_cast<double>(v.data[i])),
                                        static_cast<long long>(-32768),
                                        static_cast<long long>(32767));
            put_i16(buf.data(), 2 * i, static_cast<std::int16_t>(c));
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    } else {
        std::vector<std::uint8_t> buf(n);
        for (std::size_t i = 0; i < n; ++i)
            buf[i] = static_cast<std::uint8_t>(
                std::clamp(std::llround(static_cast<double>(v.data[i])),
                           static_cast<long long>(0), static_cast<long long>(255)));
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw IoError("write failed: " + path);
}

inline Volume read_volume(const std::string& path) {
    using namespace ingest_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::uint8_t header[kHeaderSize];
    in.read(reinterpret_cast<char*>(header), kHeaderSize);
    if (in.gcount() != static_cast<std::streamsize>(kHeaderSize))
        throw IoError("truncated header: " + path);

    bool swap = false;
    if (get_i32(header, 0, false) != static_cast<std::int32_t>(kHeaderSize)) {
        if (get_i32(header, 0, true) == static_cast<std::int32_t>(kHeaderSize)) {
            swap = true;
        } else {
            throw IoError("bad header size field (not a supported volume file): " + path);
        }
    }
    if (!(header[344] == 'n' && header[345] == '+' && header[346] == '1' && header[347] == '\0'))
        throw IoError("bad magic (expected n+1): " + path);

    const int rank = get_i16(header, 40, swap);
    if (rank < 3) throw IoError("volume rank must be >= 3: " + path);
    Volume v;
    v.nx = get_i16(header, 42, swap);
    v.ny = get_i16(header, 44, swap);
    v.nz = get_i16(header, 46, swap);
    const std::int16_t dtype_code = get_i16(header, 70, swap);
    v.sx = get_f32(header, 80, swap);
    v.sy = get_f32(header, 84, swap);
    v.sz = get_f32(header, 88, swap);
    if (v.sx <= 0.0) v.sx = 1.0;
    if (v.sy <= 0.0) v.sy = 1.0;
    if (v.sz <= 0.0) v.sz = 1.0;
    try {
        v.validate_dims();
    } catch (const ValidationError& e) {
        throw IoError(std::string(e.what()) + ": " + path);
    }
    const float off_f = get_f32(header, 108, swap);
    const std::size_t offset = static_cast<std::size_t>(off_f);
    if (off_f < static_cast<float>(kDataOffset))
        throw IoError("data offset below the 352-byte minimum: " + path);

    std::size_t elem = 0;
    switch (dtype_code) {
        case 2: elem = 1; break;
        case 4: elem = 2; break;
        case 16: elem = 4; break;
        default:
            throw IoError("unsupported datatype code " + std::to_string(dtype_code) + ": " + path);
    }

    in.seekg(0, std::ios::end);
    const std::size_t file_size = static_cast<std::size_t>(in.tellg());
    const std::size_t n = static_cast<std::size_t>(v.nx) * v.ny * v.nz;
    if (file_size < offset + n * elem)
        throw IoError("payload shorter than dims require: " + path);
    in.seekg(static_cast<std::streamoff>(offset));
    std::vector<std::uint8_t> buf(n * elem);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw IoError("payload read failed: " + path);

    v.data.resize(n);
    if (dtype_code == 2) {
        for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<float>(buf[i]);
    } else if (dtype_code == 4) {
        for (std::size_t i = 0; i < n; ++i)
            v.data[i] = static_cast<float>(get_i16(buf.data(), 2 * i, swap));
    } else {
        for (std::size_t i = 0; i < n; ++i) v.data[i] = get_f32(buf.data(), 4 * i, swap);
    }
    return v;
}

// Masks are stored as uint8 volumes with {0,255} on disk <-> {0,1} in memory.
inline void write_mask(const std::string& path, const BinaryMask& m) {
    if (m.width < 1 || m.height < 1 || m.depth < 1)
        throw ValidationError("write_mask: dims must be >= 1");
    Volume v(m.width, m.height, m.depth);
    for (std::size_t i = 0; i < m.labels.size(); ++i) v.data[i] = m.labels[i] ? 255.0f : 0.0f;
    write_volume(path, v, VolumeDtype::U8);
}

inline BinaryMask read_mask(const std::string& path) {
    const Volume v = read_volume(path);
    BinaryMask m(v.nx, v.ny, v.nz);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        if (v.data[i] == 255.0f)
            m.labels[i] = 1;
        else if (v.data[i] == 0.0f)
            m.labels[i] = 0;
        else
            throw IoError("mask voxels must be 0 or 255: " + path);
    }
    return m;
}

// ---- model bundle ----

inline constexpr const char* kBundleVersion = "brainext.bundle.v1";

struct ModelBundle {
    std::string version = kBundleVersion;
    LinearSvm m12, m23;
    GroupRates rates;
    GroupingParams grouping;
    AsmParams asm_params;
    std::vector<std::pair<GroupTag, ShapeModel>> shape_models;
    std::vector<std::pair<GroupTag, AppearanceModel>> appearance_models;
    CnnModel cnn{CnnSpec{}};
    int band_distance = 5;
    CrfParams crf;
    GpModel gp;
    double alpha_shift = 0.0;
    double start_frac = 0.0, end_frac = 1.0;
    GroupOneParams groupone;

    const ShapeModel& shape_model(GroupTag g) const {
        for (const auto& [tag, m] : shape_models)
            if (tag == g) return m;
        throw StateError("bundle has no shape model for the requested group");
    }
    const AppearanceModel& appearance_model(GroupTag g) const {
        for (const auto& [tag, m] : appearance_models)
            if (tag == g) return m;
        throw StateError("bundle has no appearance model for the requested group");
    }
};

namespace ingest_detail {

class BinWriter {
public:
    explicit BinWriter(std::ostream& out) : out_(out) {}
    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void vec_f64(const std::vector<double>& v) {
        u32(static_cast<std::uint32_t>(v.size()));
        for (double d : v) f64(d);
    }
    void vec_i32(const std::vector<int>& v) {
        u32(static_cast<std::uint32_t>(v.size()));
        for (int d : v) i32(d);
    }
    void vec_u8(const std::vector<std::uint8_t>& v) {
        u32(static_cast<std::uint32_t>(v.size()));
        out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
    }

private:
    std::ostream& out_;
};

class BinReader {
public:
    explicit BinReader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
    std::uint8_t u8() {
        const int c = in_.get();
        if (c < 0) fail();
        return static_cast<std::uint8_t>(c);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = checked_count(u32());
        std::string s(n, '\0');
        in_.read(s.data(), n);
        if (in_.gcount() != static_cast<std::streamsize>(n)) fail();
        return s;
    }
    std::vector<double> vec_f64() {
        const std::uint32_t n = checked_count(u32());
        std::vector<double> v(n);
        for (auto& d : v) d = f64();
        return v;
    }
    std::vector<int> vec_i32() {
        const std::uint32_t n = checked_count(u32());
        std::vector<int> v(n);
        for (auto& d : v) d = i32();
        return v;
    }
    std::vector<std::uint8_t> vec_u8() {
        const std::uint32_t n = checked_count(u32());
        std::vector<std::uint8_t> v(n);
        in_.read(reinterpret_cast<char*>(v.data()), n);
        if (in_.gcount() != static_cast<std::streamsize>(n)) fail();
        return v;
    }

private:
    std::uint32_t checked_count(std::uint32_t n) {
        if (n > (1u << 30)) fail();  // corrupted length field
        return n;
    }
    [[noreturn]] void fail() { throw IoError("bundle file corrupted or truncated: " + path_); }
    std::istream& in_;
    std::string path_;
};

inline void write_svm(BinWriter& w, const LinearSvm& s) {
    w.vec_f64(s.w);
    w.f64(s.b);
    w.u8(s.trained ? 1 : 0);
}
inline LinearSvm read_svm(BinReader& r) {
    LinearSvm s;
    s.w = r.vec_f64();
    s.b = r.f64();
    s.trained = r.u8() != 0;
    return s;
}

inline void write_shape_model(BinWriter& w, const ShapeModel& m) {
    w.vec_f64(m.mean);
    w.vec_f64(m.eigenvalues);
    w.u32(static_cast<std::uint32_t>(m.eigenvectors.rows));
    w.u32(static_cast<std::uint32_t>(m.eigenvectors.cols));
    w.vec_f64(m.eigenvectors.data);
    w.f64(m.f_v);
    w.f64(m.q);
}
inline ShapeModel read_shape_model(BinReader& r) {
    ShapeModel m;
    m.mean = r.vec_f64();
    m.eigenvalues = r.vec_f64();
    const std::uint32_t rows = r.u32(), cols = r.u32();
    m.eigenvectors = Mat(rows, cols);
    m.eigenvectors.data = r.vec_f64();
    if (m.eigenvectors.data.size() != static_cast<std::size_t>(rows) * cols)
        throw IoError("bundle shape model has inconsistent eigenvector matrix");
    m.f_v = r.f64();
    m.q = r.f64();
    return m;
}

inline void write_appearance(BinWriter& w, const AppearanceModel& m) {
    w.i32(m.n_landmarks);
    w.i32(m.n_grid);
    w.i32(m.profile_k);
    w.i32(m.k_nn);
    w.u32(static_cast<std::uint32_t>(m.per_level.size()));
    for (const auto& level : m.per_level) {
        w.u32(static_cast<std::uint32_t>(level.size()));
        for (const auto& lm : level) {
            w.vec_i32(lm.selected);
            w.vec_f64(lm.feat_mean);
            w.vec_f64(lm.feat_std);
            w.vec_f64(lm.train);
            w.vec_u8(lm.labels);
        }
    }
}
inline AppearanceModel read_appearance(BinReader& r) {
    AppearanceModel m;
    m.n_landmarks = r.i32();
    m.n_grid = r.i32();
    m.profile_k = r.i32();
    m.k_nn = r.i32();
    m.per_level.resize(r.u32());
    for (auto& level : m.per_level) {
        level.resize(r.u32());
        for (auto& lm : level) {
            lm.selected = r.vec_i32();
            lm.feat_mean = r.vec_f64();
            lm.feat_std = r.vec_f64();
            lm.train = r.vec_f64();
            lm.labels = r.vec_u8();
        }
    }
    return m;
}

}  // namespace ingest_detail

inline void save_bundle(const std::string& path, const ModelBundle& b) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    ingest_detail::BinWriter w(out);
    out.write("BXBD", 4);
    w.str(b.version);
    ingest_detail::write_svm(w, b.m12);
    ingest_detail::write_svm(w, b.m23);
    w.f64(b.rates.r1);
    w.f64(b.rates.r2);
    w.f64(b.rates.r3);
    w.f64(b.rates.r4);
    w.f64(b.grouping.subrect_k);
    w.i32(b.asm_params.n_landmarks);
    w.i32(b.asm_params.n_s);
    w.i32(b.asm_params.profile_k);
    w.i32(b.asm_params.l_max);
    w.i32(b.asm_params.n_grid);
    w.i32(b.asm_params.n_max);
    w.i32(b.asm_params.k_nn);
    w.i32(b.asm_params.n_keep);
    w.i32(b.asm_params.knn_max_train);
    w.f64(b.asm_params.f_v);
    w.f64(b.asm_params.q);
    w.u32(static_cast<std::uint32_t>(b.shape_models.size()));
    for (const auto& [tag, m] : b.shape_models) {
        w.u8(static_cast<std::uint8_t>(tag));
        ingest_detail::write_shape_model(w, m);
    }
    w.u32(static_cast<std::uint32_t>(b.appearance_models.size()));
    for (const auto& [tag, m] : b.appearance_models) {
        w.u8(static_cast<std::uint8_t>(tag));
        ingest_detail::write_appearance(w, m);
    }
    // cnn
    w.i32(b.cnn.spec.patch);
    w.i32(b.cnn.spec.streams);
    w.vec_i32(b.cnn.spec.conv_depths);
    w.i32(b.cnn.spec.proj_dim);
    w.u8(b.cnn.spec.pad_unit ? 1 : 0);
    w.vec_i32(b.cnn.spec.fc_widths);
    w.f64(b.cnn.spec.dropout_rate);
    w.vec_f64(b.cnn.params);
    w.i32(b.band_distance);
    // crf
    w.f64(b.crf.w1);
    w.f64(b.crf.w2);
    w.f64(b.crf.sigma_alpha);
    w.f64(b.crf.sigma_beta);
    w.f64(b.crf.sigma_gamma);
    w.i32(b.crf.n_iterations);
    // gp
    w.vec_f64(b.gp.x);
    w.vec_f64(b.gp.y);
    w.f64(b.gp.y_mean);
    w.f64(b.gp.ell);
    w.f64(b.gp.sf2);
    w.f64(b.gp.sn2);
    w.u8(b.gp.fitted ? 1 : 0);
    w.f64(b.alpha_shift);
    w.f64(b.start_frac);
    w.f64(b.end_frac);
    w.f64(b.groupone.alpha_area);
    w.f64(b.groupone.beta_dist);
    w.i32(b.groupone.denoise_min_area);
    if (!out) throw IoError("write failed: " + path);
}

inline ModelBundle load_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "BXBD", 4) != 0)
        throw IoError("not a model bundle: " + path);
    ingest_detail::BinReader r(in, path);
    ModelBundle b;
    b.version = r.str();
    if (b.version != kBundleVersion)
        throw IoError("bundle version mismatch: have '" + b.version + "', expected '" +
                      kBundleVersion + "': " + path);
    b.m12 = ingest_detail::read_svm(r);
    b.m23 = ingest_detail::read_svm(r);
    b.rates.r1 = r.f64();
    b.rates.r2 = r.f64();
    b.rates.r3 = r.f64();
    b.rates.r4 = r.f64();
    b.grouping.subrect_k = r.f64();
    b.asm_params.n_landmarks = r.i32();
    b.asm_params.n_s = r.i32();
    b.asm_params.profile_k = r.i32();
    b.asm_params.l_max = r.i32();
    b.asm_params.n_grid = r.i32();
    b.asm_params.n_max = r.i32();
    b.asm_params.k_nn = r.i32();
    b.asm_params.n_keep = r.i32();
    b.asm_params.knn_max_train = r.i32();
    b.asm_params.f_v = r.f64();
    b.asm_params.q = r.f64();
    const std::uint32_t n_shapes = r.u32();
    for (std::uint32_t i = 0; i < n_shapes; ++i) {
        const GroupTag tag = static_cast<GroupTag>(r.u8());
        b.shape_models.emplace_back(tag, ingest_detail::read_shape_model(r));
    }
    const std::uint32_t n_apps = r.u32();
    for (std::uint32_t i = 0; i < n_apps; ++i) {
        const GroupTag tag = static_cast<GroupTag>(r.u8());
        b.appearance_models.emplace_back(tag, ingest_detail::read_appearance(r));
    }
    CnnSpec spec;
    spec.patch = r.i32();
    spec.streams = r.i32();
    spec.conv_depths = r.vec_i32();
    spec.proj_dim = r.i32();
    spec.pad_unit = r.u8() != 0;
    spec.fc_widths = r.vec_i32();
    spec.dropout_rate = r.f64();
    b.cnn = CnnModel(spec);
    std::vector<double> params = r.vec_f64();
    if (params.size() != b.cnn.params.size())
        throw IoError("bundle cnn parameter count inconsistent with its architecture: " + path);
    b.cnn.params = std::move(params);
    b.band_distance = r.i32();
    b.crf.w1 = r.f64();
    b.crf.w2 = r.f64();
    b.crf.sigma_alpha = r.f64();
    b.crf.sigma_beta = r.f64();
    b.crf.sigma_gamma = r.f64();
    b.crf.n_iterations = r.i32();
    b.gp.x = r.vec_f64();
    b.gp.y = r.vec_f64();
    b.gp.y_mean = r.f64();
    b.gp.ell = r.f64();
    b.gp.sf2 = r.f64();
    b.gp.sn2 = r.f64();
    const bool gp_fitted = r.u8() != 0;
    if (gp_fitted) {
        // rebuild the Cholesky cache deterministically from the stored points
        const std::size_t n = b.gp.x.size();
        if (b.gp.y.size() != n) throw IoError("bundle gp points inconsistent: " + path);
        Mat k(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) k.at(i, j) = b.gp.kernel(b.gp.x[i], b.gp.x[j]);
            k.at(i, i) += b.gp.sn2;
        }
        b.gp.chol = cholesky(k);
        b.gp.alpha = cholesky_solve(b.gp.chol, b.gp.y);
        b.gp.fitted = true;
    }
    b.alpha_shift = r.f64();
    b.start_frac = r.f64();
    b.end_frac = r.f64();
    b.groupone.alpha_area = r.f64();
    b.groupone.beta_dist = r.f64();
    b.groupone.denoise_min_area = r.i32();
    return b;
}

// ---- reports ----

struct ReportRow {
    std::string subject;
    std::string metric;
    std::string plane;  // "2d" or "3d"
    double value = 0.0;
};

inline void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "subject,metric,plane,value\n";
    for (const auto& r : rows) {
        std::ostringstream v;
        v.precision(10);
        v << r.value;
        out << r.subject << ',' << r.metric << ',' << r.plane << ',' << v.str() << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

inline void write_report_json(const std::string& path, const std::vector<ReportRow>& rows) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
        j.push_back({{"subject", r.subject},
                     {"metric", r.metric},
                     {"plane", r.plane},
                     {"value", r.value}});
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline void write_boxplot_json(const std::string& path, const std::vector<BoxplotData>& boxes) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& b : boxes)
        j.push_back({{"metric", b.metric},
                     {"q1", b.q1},
                     {"median", b.median},
                     {"q3", b.q3},
                     {"whisker_lo", b.whisker_lo},
                     {"whisker_hi", b.whisker_hi},
                     {"outliers", b.outliers}});
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline void write_loss_history_csv(const std::string& path, const std::vector<EpochStats>& hist) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "epoch,loss,train_acc\n";
    for (const auto& e : hist) out << e.epoch << ',' << e.loss << ',' << e.train_accuracy << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline void write_crf_tune_log_csv(const std::string& path,
                                   const std::vector<CrfTuneTrial>& trials) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "trial,w1,sigma_alpha,sigma_beta,mean_dice\n";
    for (const auto& t : trials)
        out << t.trial << ',' << t.w1 << ',' << t.sigma_alpha << ',' << t.sigma_beta << ','
            << t.mean_dice << '\n';
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace brainext
