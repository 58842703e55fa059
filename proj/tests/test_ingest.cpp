#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "brainext/ingest.hpp"

using namespace brainext;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("brainext_ingest_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void swap16(std::vector<std::uint8_t>& b, std::size_t off) { std::swap(b[off], b[off + 1]); }
void swap32(std::vector<std::uint8_t>& b, std::size_t off) {
    std::swap(b[off], b[off + 3]);
    std::swap(b[off + 1], b[off + 2]);
}

ModelBundle tiny_bundle() {
    ModelBundle b;
    b.m12.w = {0.5, -1.25, 3.0};
    b.m12.b = 0.125;
    b.m12.trained = true;
    b.m23.w = {1.0, 2.0, -0.5};
    b.m23.b = -2.0;
    b.m23.trained = true;
    b.rates = GroupRates{0.2, 0.4, 0.6, 0.8};
    for (int i = 0; i < 3; ++i) {
        std::vector<LandmarkShape> shapes;
        Rng rng(static_cast<std::uint64_t>(100 + i));
        for (int s = 0; s < 4; ++s) {
            LandmarkShape sh(16);
            for (auto& v : sh) v = rng.uniform(0.0, 32.0);
            shapes.push_back(sh);
        }
        b.shape_models.emplace_back(static_cast<GroupTag>(1 + i),
                                    build_shape_model(shapes, 1.0, 3.0));
    }
    AppearanceModel app;
    app.n_landmarks = 2;
    app.per_level.resize(1);
    app.per_level[0].resize(2);
    for (auto& lm : app.per_level[0]) {
        lm.selected = {0, 3};
        lm.feat_mean = {0.1, 0.2};
        lm.feat_std = {1.0, 2.0};
        lm.train = {0.0, 1.0, 1.0, 0.0};
        lm.labels = {1, 0};
    }
    b.appearance_models.emplace_back(GroupTag::II, app);
    CnnSpec spec;
    spec.conv_depths = {2};
    spec.proj_dim = 0;
    spec.pad_unit = false;
    spec.fc_widths = {4, 2};
    b.cnn = CnnModel(spec);
    init_weights(b.cnn, 9);
    b.gp = gp_fit_fixed({1.0, 50.0, 100.0}, {40.0, 45.0, 41.0}, 10.0, 4.0, 0.01);
    b.alpha_shift = 1.5;
    b.start_frac = 0.1;
    b.end_frac = 0.9;
    return b;
}

}  // namespace

TEST_CASE("volume round trip across all supported dtypes", "[ingest]") {
    TempDir tmp;
    Volume v(2, 2, 2, 0.9, 1.5, 0.9);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i);

    for (VolumeDtype dt : {VolumeDtype::U8, VolumeDtype::I16, VolumeDtype::F32}) {
        const std::string path = tmp.file("v.nii");
        write_volume(path, v, dt);
        const Volume r = read_volume(path);
        REQUIRE(r.nx == 2);
        REQUIRE(r.ny == 2);
        REQUIRE(r.nz == 2);
        REQUIRE(r.sx == Catch::Approx(0.9));
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            if (dt == VolumeDtype::F32)
                REQUIRE(std::fabs(r.data[i] - v.data[i]) <= 1e-6);
            else
                REQUIRE(r.data[i] == v.data[i]);
        }
    }
}

TEST_CASE("int16 little-endian payload reads as raw scalars", "[ingest]") {
    TempDir tmp;
    Volume v(2, 1, 1);
    v.data = {256.0f, -3.0f};
    const std::string path = tmp.file("i16.nii");
    write_volume(path, v, VolumeDtype::I16);
    auto bytes = read_bytes(path);
    // payload starts at 352; 256 is 0x0100 little-endian
    REQUIRE(bytes[352] == 0x00);
    REQUIRE(bytes[353] == 0x01);
    const Volume r = read_volume(path);
    REQUIRE(r.data[0] == 256.0f);
    REQUIRE(r.data[1] == -3.0f);
}

TEST_CASE("truncated payload raises a length error", "[ingest]") {
    TempDir tmp;
    Volume v(2, 2, 2);
    const std::string path = tmp.file("trunc.nii");
    write_volume(path, v, VolumeDtype::U8);
    auto bytes = read_bytes(path);
    bytes.pop_back();  // 7 of 8 payload bytes remain
    write_bytes(path, bytes);
    REQUIRE_THROWS_AS(read_volume(path), IoError);
}

TEST_CASE("bad magic and unsupported dtype are rejected", "[ingest]") {
    TempDir tmp;
    Volume v(2, 2, 2);
    const std::string path = tmp.file("bad.nii");
    write_volume(path, v, VolumeDtype::U8);
    auto bytes = read_bytes(path);
    auto corrupted = bytes;
    corrupted[344] = 'x';
    write_bytes(path, corrupted);
    REQUIRE_THROWS_AS(read_volume(path), IoError);

    corrupted = bytes;
    corrupted[70] = 8;  // not one of {2,4,16}
    corrupted[71] = 0;
    write_bytes(path, corrupted);
    REQUIRE_THROWS_AS(read_volume(path), IoError);

    corrupted = bytes;
    corrupted[42] = 0;  // nx = 0
    corrupted[43] = 0;
    write_bytes(path, corrupted);
    REQUIRE_THROWS_AS(read_volume(path), IoError);

    corrupted = bytes;
    ingest_detail::put_f32(corrupted.data(), 108, 350.0f);  // below the 352 minimum
    write_bytes(path, corrupted);
    REQUIRE_THROWS_AS(read_volume(path), IoError);
}

TEST_CASE("byte-swapped files are detected from the header-size field", "[ingest]") {
    TempDir tmp;
    Volume v(3, 2, 2);
    Rng rng(5);
    for (auto& d : v.data) d = static_cast<float>(rng.uniform_int(1000));
    const std::string path = tmp.file("swapped.nii");
    write_volume(path, v, VolumeDtype::I16);
    auto bytes = read_bytes(path);
    swap32(bytes, 0);                                       // sizeof_hdr
    for (int d = 0; d < 8; ++d) swap16(bytes, 40 + 2 * d);  // dims
    swap16(bytes, 70);                                      // datatype
    swap16(bytes, 72);                                      // bitpix
    for (int p = 0; p < 8; ++p) swap32(bytes, 76 + 4 * p);  // pixdim
    swap32(bytes, 108);                                     // vox_offset
    for (std::size_t i = 352; i + 1 < bytes.size(); i += 2) swap16(bytes, i);
    write_bytes(path, bytes);
    const Volume r = read_volume(path);
    REQUIRE(r.nx == 3);
    REQUIRE(r.data == v.data);
}

TEST_CASE("mask io maps 255 to 1 and rejects other values", "[ingest]") {
    TempDir tmp;
    BinaryMask m(4, 3, 2);
    Rng rng(41);
    for (auto& v : m.labels) v = rng.uniform01() < 0.5 ? 1 : 0;
    const std::string path = tmp.file("mask.nii");
    write_mask(path, m);
    const BinaryMask r = read_mask(path);
    REQUIRE(r.labels == m.labels);

    auto bytes = read_bytes(path);
    REQUIRE(bytes.size() == 352 + m.labels.size());
    bool saw255 = false;
    for (std::size_t i = 352; i < bytes.size(); ++i) {
        REQUIRE((bytes[i] == 0 || bytes[i] == 255));
        saw255 = saw255 || bytes[i] == 255;
    }
    REQUIRE(saw255);

    bytes[352] = 7;
    write_bytes(path, bytes);
    REQUIRE_THROWS_AS(read_mask(path), IoError);
}

TEST_CASE("bundle round trip is bit identical", "[ingest]") {
    TempDir tmp;
    const ModelBundle b = tiny_bundle();
    const std::string p1 = tmp.file("a.bundle");
    const std::string p2 = tmp.file("b.bundle");
    save_bundle(p1, b);
    const ModelBundle r = load_bundle(p1);
    save_bundle(p2, r);
    REQUIRE(read_bytes(p1) == read_bytes(p2));

    REQUIRE(r.shape_models.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(r.shape_models[i].second.eigenvalues == b.shape_models[i].second.eigenvalues);
        REQUIRE(r.shape_models[i].second.mean == b.shape_models[i].second.mean);
    }
    REQUIRE(r.cnn.params == b.cnn.params);
    REQUIRE(r.m12.w == b.m12.w);
    REQUIRE(r.gp.alpha == b.gp.alpha);
    REQUIRE(r.alpha_shift == b.alpha_shift);
}

TEST_CASE("bundle version and corruption checks", "[ingest]") {
    TempDir tmp;
    const ModelBundle b = tiny_bundle();
    const std::string path = tmp.file("v.bundle");
    save_bundle(path, b);
    auto bytes = read_bytes(path);

    // version string starts after magic + u32 length; flip one character
    auto patched = bytes;
    patched[8] = 'X';
    write_bytes(path, patched);
    REQUIRE_THROWS_AS(load_bundle(path), IoError);

    // hard truncation corrupts a length field deep inside
    patched = bytes;
    patched.resize(bytes.size() / 2);
    write_bytes(path, patched);
    REQUIRE_THROWS_AS(load_bundle(path), IoError);
}

TEST_CASE("report writers emit csv and json", "[ingest]") {
    TempDir tmp;
    std::vector<ReportRow> rows{{"sub00", "dice", "3d", 0.97}, {"sub01", "dice", "3d", 0.96}};
    const std::string csv = tmp.file("report.csv");
    const std::string json = tmp.file("report.json");
    write_report_csv(csv, rows);
    write_report_json(json, rows);
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    REQUIRE(header == "subject,metric,plane,value");
    std::ifstream jin(json);
    const auto parsed = nlohmann::json::parse(jin);
    REQUIRE(parsed.size() == 2);
    REQUIRE(parsed[0]["subject"] == "sub00");
}
