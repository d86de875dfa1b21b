#include "mga/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "mga/error.hpp"

namespace mga {

namespace {

unsigned char quantize(double v) {
    const double scaled = std::clamp(v, 0.0, 1.0) * 255.0;
    return static_cast<unsigned char>(std::lround(scaled));
}

void check_planes(const Tensor& t, int planes, const char* what) {
    if (t.ndim() != 3 || t.dim(0) != planes)
        throw ValidationError(std::string(what) + " expects a [" + std::to_string(planes) +
                              ",H,W] tensor");
}

// Reads one whitespace-delimited header token, skipping '#' comment lines.
std::string next_token(std::istream& is, const std::string& path) {
    std::string tok;
    int c = is.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = is.get();
        c = is.get();
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = is.get();
    }
    if (tok.empty()) throw FormatError(path + ": truncated header");
    return tok;
}

int header_int(std::istream& is, const std::string& path) {
    const std::string tok = next_token(is, path);
    try {
        const int v = std::stoi(tok);
        if (v <= 0) throw FormatError(path + ": non-positive header field " + tok);
        return v;
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception&) {
        throw FormatError(path + ": bad header field '" + tok + "'");
    }
}

void write_netpbm(const std::string& path, const char* magic, const Tensor& img, int planes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    const int h = img.dim(1), w = img.dim(2);
    os << magic << "\n" << w << " " << h << "\n255\n";
    const auto v = img.data();
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * planes);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j)
            for (int p = 0; p < planes; ++p)
                row[static_cast<std::size_t>(j) * planes + p] =
                    quantize(v[p * hw + static_cast<std::size_t>(i) * w + j]);
        os.write(reinterpret_cast<const char*>(row.data()),
                 static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("failed while writing " + path);
}

Tensor read_netpbm(const std::string& path, const char* magic, int planes) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path + " for reading");
    if (next_token(is, path) != magic)
        throw FormatError(path + ": not a binary " + magic + " file");
    const int w = header_int(is, path);
    const int h = header_int(is, path);
    const int maxval = header_int(is, path);
    if (maxval != 255) throw FormatError(path + ": unsupported maxval " + std::to_string(maxval));
    // the single whitespace byte after maxval was already consumed by the tokenizer
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<unsigned char> raw(hw * planes);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw FormatError(path + ": truncated pixel data");
    std::vector<double> v(hw * planes);
    for (std::size_t i = 0; i < hw; ++i)
        for (int p = 0; p < planes; ++p)
            v[p * hw + i] = static_cast<double>(raw[i * planes + p]) / 255.0;
    return Tensor::from_data({planes, h, w}, std::move(v));
}

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path + ": truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& rgb) {
    check_planes(rgb, 3, "write_ppm");
    write_netpbm(path, "P6", rgb, 3);
}

Tensor read_ppm(const std::string& path) { return read_netpbm(path, "P6", 3); }

void write_pgm(const std::string& path, const Tensor& gray) {
    check_planes(gray, 1, "write_pgm");
    write_netpbm(path, "P5", gray, 1);
}

Tensor read_pgm(const std::string& path) { return read_netpbm(path, "P5", 1); }

void write_flo2(const std::string& path, const Tensor& flow) {
    check_planes(flow, 2, "write_flo2");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    const int h = flow.dim(1), w = flow.dim(2);
    os.write("FLO2", 4);
    put_u32(os, static_cast<std::uint32_t>(h));
    put_u32(os, static_cast<std::uint32_t>(w));
    const auto v = flow.data();
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < hw; ++i)
        for (int p = 0; p < 2; ++p) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v[p * hw + i]));
            put_u32(os, bits);
        }
    if (!os) throw IoError("failed while writing " + path);
}

Tensor read_flo2(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path + " for reading");
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "FLO2")
        throw FormatError(path + ": not a FLO2 file");
    const int h = static_cast<int>(get_u32(is, path));
    const int w = static_cast<int>(get_u32(is, path));
    if (h <= 0 || w <= 0) throw FormatError(path + ": bad flow extents");
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> v(hw * 2);
    for (std::size_t i = 0; i < hw; ++i)
        for (int p = 0; p < 2; ++p) {
            unsigned char b[4];
            if (!is.read(reinterpret_cast<char*>(b), 4))
                throw FormatError(path + ": truncated flow data");
            std::uint32_t bits = 0;
            for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(b[k]) << (8 * k);
            v[p * hw + i] = static_cast<double>(std::bit_cast<float>(bits));
        }
    return Tensor::from_data({2, h, w}, std::move(v));
}

}  // namespace mga
