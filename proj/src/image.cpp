#include "edof/image.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace edof {

const char* errc_name(Errc c) {
    switch (c) {
    case Errc::malformed_header: return "malformed-header";
    case Errc::truncated_payload: return "truncated-payload";
    case Errc::unsupported_maxval: return "unsupported-maxval";
    case Errc::unsupported_format: return "unsupported-format";
    case Errc::malformed_manifest: return "malformed-manifest";
    case Errc::missing_file: return "missing-file";
    case Errc::unwritable_path: return "unwritable-path";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::image_too_small: return "image-too-small";
    case Errc::level_overflow: return "level-overflow";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::degenerate_histogram: return "degenerate-histogram";
    case Errc::bad_weights_magic: return "bad-weights-magic";
    case Errc::bad_weights_version: return "bad-weights-version";
    case Errc::truncated_weights: return "truncated-weights";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::empty_input: return "empty-input";
    }
    return "unknown";
}

Image make_image(int height, int width, double pixel_pitch, double fill) {
    Image img;
    img.height = height;
    img.width = width;
    img.pixel_pitch = pixel_pitch;
    img.pixels.assign(static_cast<size_t>(height) * width, fill);
    return img;
}

ZStack make_stack(std::vector<Image> planes, double z_step) {
    if (planes.empty())
        fail(Errc::empty_input, "stack needs at least one plane");
    const Image& first = planes.front();
    for (size_t i = 1; i < planes.size(); ++i) {
        const Image& p = planes[i];
        if (p.height != first.height || p.width != first.width)
            fail(Errc::dimension_mismatch,
                 "plane " + std::to_string(i) + " is " + std::to_string(p.width) + "x" +
                     std::to_string(p.height) + ", expected " + std::to_string(first.width) +
                     "x" + std::to_string(first.height));
        if (p.pixel_pitch != first.pixel_pitch)
            fail(Errc::dimension_mismatch,
                 "plane " + std::to_string(i) + " pixel pitch differs");
    }
    ZStack s;
    s.planes = std::move(planes);
    s.z_step = z_step;
    return s;
}

namespace {

// Reads one PGM header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
        } else if (!std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#')
                tok.push_back(static_cast<char>(in.get()));
            return tok;
        }
    }
    return tok;
}

int parse_header_int(std::istream& in, const char* what) {
    std::string tok = next_token(in);
    if (tok.empty())
        fail(Errc::malformed_header, std::string("missing ") + what);
    for (char ch : tok)
        if (!std::isdigit(static_cast<unsigned char>(ch)))
            fail(Errc::malformed_header, std::string("non-numeric ") + what + " '" + tok + "'");
    long v = std::strtol(tok.c_str(), nullptr, 10);
    if (v <= 0 || v > 1 << 20)
        fail(Errc::malformed_header, std::string(what) + " out of range: " + tok);
    return static_cast<int>(v);
}

} // namespace

RawImage load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(Errc::missing_file, path.string());

    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in || m0 != 'P')
        fail(Errc::malformed_header, "not a PNM file: " + path.string());
    if (m1 != '5')
        fail(Errc::unsupported_format,
             std::string("P") + m1 + " not supported, expected binary PGM (P5)");

    RawImage raw;
    raw.width = parse_header_int(in, "width");
    raw.height = parse_header_int(in, "height");

    std::string maxtok = next_token(in);
    if (maxtok.empty())
        fail(Errc::malformed_header, "missing maxval");
    long maxval = std::strtol(maxtok.c_str(), nullptr, 10);
    if (maxval != 255 && maxval != 65535)
        fail(Errc::unsupported_maxval, "maxval " + maxtok + ", expected 255 or 65535");
    raw.maxval = static_cast<int>(maxval);

    // exactly one whitespace byte separates the header from the payload
    const int sep = in.get();
    if (sep == EOF || !std::isspace(sep))
        fail(Errc::malformed_header, "missing whitespace before payload");

    const size_t n = static_cast<size_t>(raw.width) * raw.height;
    const size_t bytes_per = raw.maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(n * bytes_per);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size())
        fail(Errc::truncated_payload,
             path.string() + ": got " + std::to_string(in.gcount()) + " of " +
                 std::to_string(buf.size()) + " payload bytes");

    raw.samples.resize(n);
    if (bytes_per == 1) {
        for (size_t i = 0; i < n; ++i)
            raw.samples[i] = buf[i];
    } else {
        for (size_t i = 0; i < n; ++i) // most significant byte first
            raw.samples[i] = static_cast<uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    }
    return raw;
}

void save_pgm(const Image& image, int bit_depth, const std::filesystem::path& path) {
    if (bit_depth != 8 && bit_depth != 16)
        fail(Errc::invalid_argument, "bit depth must be 8 or 16");
    const int maxval = bit_depth == 8 ? 255 : 65535;

    std::ofstream out(path, std::ios::binary);
    if (!out)
        fail(Errc::unwritable_path, path.string());

    out << "P5\n" << image.width << " " << image.height << "\n" << maxval << "\n";

    const size_t n = image.size();
    std::vector<unsigned char> buf(n * (bit_depth == 8 ? 1 : 2));
    for (size_t i = 0; i < n; ++i) {
        // round half up
        long q = std::lround(std::floor(image.pixels[i] * maxval + 0.5));
        if (q < 0) q = 0;
        if (q > maxval) q = maxval;
        if (bit_depth == 8) {
            buf[i] = static_cast<unsigned char>(q);
        } else {
            buf[2 * i] = static_cast<unsigned char>(q >> 8);
            buf[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
        }
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out)
        fail(Errc::unwritable_path, path.string());
}

Image to_unit(const RawImage& raw, double pixel_pitch) {
    Image img = make_image(raw.height, raw.width, pixel_pitch);
    const double maxval = raw.maxval;
    for (size_t i = 0; i < raw.samples.size(); ++i)
        img.pixels[i] = raw.samples[i] / maxval;
    return img;
}

StackManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        fail(Errc::missing_file, path.string());

    StackManifest m;
    const std::filesystem::path base = path.parent_path();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#')
            continue;
        size_t e = line.find_last_not_of(" \t\r");
        std::string s = line.substr(b, e - b + 1);
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            fail(Errc::malformed_manifest,
                 path.string() + ":" + std::to_string(lineno) + ": expected key=value");
        std::string key = s.substr(0, eq);
        std::string val = s.substr(eq + 1);
        if (key == "z_step_um") {
            m.z_step_um = std::stod(val);
        } else if (key == "pixel_pitch_um") {
            m.pixel_pitch_um = std::stod(val);
        } else if (key == "plane") {
            m.plane_paths.push_back(base / val);
        } else {
            fail(Errc::malformed_manifest,
                 path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    if (m.plane_paths.empty())
        fail(Errc::malformed_manifest, path.string() + ": no plane entries");
    if (m.z_step_um <= 0 || m.pixel_pitch_um <= 0)
        fail(Errc::malformed_manifest, path.string() + ": z_step_um and pixel_pitch_um must be > 0");
    return m;
}

void write_manifest(const StackManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        fail(Errc::unwritable_path, path.string());
    out << "z_step_um=" << manifest.z_step_um << "\n";
    out << "pixel_pitch_um=" << manifest.pixel_pitch_um << "\n";
    const std::filesystem::path base = path.parent_path();
    for (const auto& p : manifest.plane_paths) {
        std::filesystem::path rel = p.lexically_proximate(base);
        out << "plane=" << rel.generic_string() << "\n";
    }
    if (!out)
        fail(Errc::unwritable_path, path.string());
}

ZStack load_stack(const StackManifest& manifest) {
    std::vector<Image> planes;
    planes.reserve(manifest.plane_paths.size());
    for (const auto& p : manifest.plane_paths)
        planes.push_back(to_unit(load_pgm(p), manifest.pixel_pitch_um));
    return make_stack(std::move(planes), manifest.z_step_um);
}

} // namespace edof
