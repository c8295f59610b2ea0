#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>

#include "edof/image.hpp"

using namespace edof;

#define CHECK_ERRC(expr, errc)                                                                     \
    do {                                                                                           \
        try {                                                                                      \
            expr;                                                                                  \
            FAIL_CHECK("expected " #errc ", nothing thrown");                                      \
        } catch (const Error& e) {                                                                 \
            CHECK(e.code() == errc);                                                               \
        }                                                                                          \
    } while (0)

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "edof_test_image";
    std::filesystem::create_directories(dir);
    return dir;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("load_pgm reads 8-bit samples byte for byte") {
    const auto p = temp_dir() / "a8.pgm";
    write_bytes(p, std::string("P5\n2 2\n255\n") + '\x00' + '\xff' + '\x80' + '\x40');
    const RawImage raw = load_pgm(p);
    CHECK(raw.width == 2);
    CHECK(raw.height == 2);
    CHECK(raw.maxval == 255);
    CHECK(raw.samples == std::vector<uint16_t>{0, 255, 128, 64});
}

TEST_CASE("load_pgm reads 16-bit samples most significant byte first") {
    const auto p = temp_dir() / "a16.pgm";
    write_bytes(p, std::string("P5\n1 1\n65535\n") + '\x01' + '\x00');
    const RawImage raw = load_pgm(p);
    CHECK(raw.samples == std::vector<uint16_t>{256});
}

TEST_CASE("load_pgm handles header comments") {
    const auto p = temp_dir() / "c.pgm";
    write_bytes(p, std::string("P5\n# camera frame\n2 #w\n1\n255\n") + '\x05' + '\x06');
    const RawImage raw = load_pgm(p);
    CHECK(raw.width == 2);
    CHECK(raw.height == 1);
    CHECK(raw.samples == std::vector<uint16_t>{5, 6});
}

TEST_CASE("load_pgm rejects bad inputs with distinct codes") {
    const auto dir = temp_dir();
    write_bytes(dir / "p2.pgm", "P2\n2 2\n255\n0 1 2 3\n");
    CHECK_ERRC(load_pgm(dir / "p2.pgm"), Errc::unsupported_format);

    write_bytes(dir / "garbled.pgm", "P5\nxx 2\n255\n");
    CHECK_ERRC(load_pgm(dir / "garbled.pgm"), Errc::malformed_header);

    write_bytes(dir / "short.pgm", std::string("P5\n2 2\n255\n") + '\x00' + '\x01');
    CHECK_ERRC(load_pgm(dir / "short.pgm"), Errc::truncated_payload);

    write_bytes(dir / "maxval.pgm", std::string("P5\n1 1\n1023\n") + '\x00' + '\x00');
    CHECK_ERRC(load_pgm(dir / "maxval.pgm"), Errc::unsupported_maxval);

    CHECK_ERRC(load_pgm(dir / "nope.pgm"), Errc::missing_file);
}

TEST_CASE("to_unit divides by maxval") {
    RawImage raw;
    raw.height = 1;
    raw.width = 3;
    raw.maxval = 255;
    raw.samples = {255, 0, 128};
    const Image img = to_unit(raw, 0.065);
    CHECK(img.pixels[0] == 1.0);
    CHECK(img.pixels[1] == 0.0);
    CHECK(img.pixels[2] == doctest::Approx(128.0 / 255.0).epsilon(1e-12));

    raw.maxval = 65535;
    raw.samples = {32768, 0, 65535};
    const Image img16 = to_unit(raw, 0.065);
    CHECK(img16.pixels[0] == doctest::Approx(32768.0 / 65535.0).epsilon(1e-12));
    CHECK(img16.pixels[0] == doctest::Approx(0.50000763).epsilon(1e-7));
}

TEST_CASE("save_pgm quantizes round-half-up") {
    const auto p = temp_dir() / "q.pgm";
    Image img = make_image(1, 3, 0.065);
    img.pixels = {1.0, 0.5, 0.0};
    save_pgm(img, 8, p);
    const RawImage raw = load_pgm(p);
    CHECK(raw.samples == std::vector<uint16_t>{255, 128, 0}); // round(127.5) -> 128
}

TEST_CASE("save/load round trip reproduces quantized values exactly") {
    const auto dir = temp_dir();
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int depth : {8, 16}) {
        const int maxval = depth == 8 ? 255 : 65535;
        Image img = make_image(9, 13, 0.1);
        for (double& v : img.pixels)
            v = unit(rng);
        const auto p = dir / ("rt" + std::to_string(depth) + ".pgm");
        save_pgm(img, depth, p);
        const Image back = to_unit(load_pgm(p), img.pixel_pitch);
        for (size_t i = 0; i < img.pixels.size(); ++i) {
            const double q = std::floor(img.pixels[i] * maxval + 0.5) / maxval;
            CHECK(back.pixels[i] == q);
        }
        // idempotence: a quantized image survives a second trip untouched
        save_pgm(back, depth, p);
        const Image again = to_unit(load_pgm(p), img.pixel_pitch);
        CHECK(again.pixels == back.pixels);
    }
}

TEST_CASE("manifest round trip and stack loading") {
    const auto dir = temp_dir() / "stack14";
    std::filesystem::create_directories(dir);

    StackManifest m;
    m.z_step_um = 0.5;
    m.pixel_pitch_um = 0.065;
    for (int i = 0; i < 14; ++i) {
        Image plane = make_image(8, 8, 0.065, i / 14.0);
        char name[32];
        std::snprintf(name, sizeof name, "plane_%02d.pgm", i);
        save_pgm(plane, 8, dir / name);
        m.plane_paths.push_back(dir / name);
    }
    write_manifest(m, dir / "stack.manifest");

    const StackManifest read = read_manifest(dir / "stack.manifest");
    CHECK(read.z_step_um == 0.5);
    CHECK(read.pixel_pitch_um == 0.065);
    REQUIRE(read.plane_paths.size() == 14);

    const ZStack stack = load_stack(read);
    CHECK(stack.planes.size() == 14);
    CHECK(stack.z_step == 0.5);
    CHECK(stack.planes.front().pixel_pitch == 0.065);
}

TEST_CASE("load_stack of a single plane") {
    const auto dir = temp_dir() / "stack1";
    std::filesystem::create_directories(dir);
    save_pgm(make_image(4, 4, 0.1, 0.25), 8, dir / "only.pgm");
    StackManifest m;
    m.z_step_um = 1.0;
    m.pixel_pitch_um = 0.1;
    m.plane_paths = {dir / "only.pgm"};
    const ZStack stack = load_stack(m);
    CHECK(stack.planes.size() == 1);
}

TEST_CASE("load_stack rejects mixed dimensions") {
    const auto dir = temp_dir() / "mixed";
    std::filesystem::create_directories(dir);
    save_pgm(make_image(8, 8, 0.1), 8, dir / "a.pgm");
    save_pgm(make_image(4, 4, 0.1), 8, dir / "b.pgm");
    StackManifest m;
    m.z_step_um = 0.5;
    m.pixel_pitch_um = 0.1;
    m.plane_paths = {dir / "a.pgm", dir / "b.pgm"};
    CHECK_ERRC(load_stack(m), Errc::dimension_mismatch);
}

TEST_CASE("make_stack rejects any heterogeneous plane set") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> dim(4, 12);
    std::uniform_int_distribution<int> which(0, 2);
    for (int trial = 0; trial < 50; ++trial) {
        const int h = dim(rng), w = dim(rng);
        std::vector<Image> planes;
        for (int i = 0; i < 4; ++i)
            planes.push_back(make_image(h, w, 0.1));
        // perturb one plane in one of height/width/pitch
        const size_t victim = static_cast<size_t>(rng() % planes.size());
        switch (which(rng)) {
        case 0: planes[victim] = make_image(h + 1, w, 0.1); break;
        case 1: planes[victim] = make_image(h, w + 1, 0.1); break;
        default: planes[victim] = make_image(h, w, 0.2); break;
        }
        CHECK_ERRC(make_stack(std::move(planes), 0.5), Errc::dimension_mismatch);
    }
}

TEST_CASE("manifest parse errors") {
    const auto dir = temp_dir();
    {
        std::ofstream out(dir / "bad.manifest");
        out << "z_step_um=0.5\nnonsense line\n";
    }
    CHECK_ERRC(read_manifest(dir / "bad.manifest"), Errc::malformed_manifest);
    {
        std::ofstream out(dir / "noplanes.manifest");
        out << "z_step_um=0.5\npixel_pitch_um=0.1\n";
    }
    CHECK_ERRC(read_manifest(dir / "noplanes.manifest"), Errc::malformed_manifest);
}
