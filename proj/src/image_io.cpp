#include "cto/image_io.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "cto/error.hpp"

namespace cto {

namespace {

void write_bytes(const std::string& path, const std::string& header,
                 const std::vector<std::uint8_t>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw DataError("short write to '" + path + "'");
}

struct Parser {
    std::string bytes;
    size_t pos = 0;
    std::string path;

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError(path + ": " + what + " at byte offset " + std::to_string(pos));
    }

    void skip_ws() {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    }

    int read_int(const std::string& field) {
        skip_ws();
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
            fail("expected integer for " + field);
        long v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1 << 30) fail(field + " out of range");
            ++pos;
        }
        return static_cast<int>(v);
    }
};

} // namespace

void write_ppm(const std::string& path, const ImageU8& img) {
    if (img.channels != 3) throw DataError("write_ppm: image must have 3 channels");
    std::ostringstream h;
    h << "P6\n" << img.w << " " << img.h << "\n255\n";
    write_bytes(path, h.str(), img.v);
}

void write_pgm(const std::string& path, const ImageU8& img, int maxval) {
    if (img.channels != 1) throw DataError("write_pgm: image must have 1 channel");
    std::ostringstream h;
    h << "P5\n" << img.w << " " << img.h << "\n" << maxval << "\n";
    write_bytes(path, h.str(), img.v);
}

ImageU8 read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    Parser p{ss.str(), 0, path};

    if (p.bytes.size() < 2) p.fail("truncated header");
    const char magic0 = p.bytes[0], magic1 = p.bytes[1];
    if (magic0 != 'P' || (magic1 != '5' && magic1 != '6')) p.fail("unsupported magic");
    p.pos = 2;

    ImageU8 img;
    img.channels = magic1 == '6' ? 3 : 1;
    img.w = p.read_int("width");
    img.h = p.read_int("height");
    const int maxval = p.read_int("maxval");
    if (maxval <= 0 || maxval > 255) p.fail("maxval must be in [1,255]");
    if (p.pos >= p.bytes.size() || !std::isspace(static_cast<unsigned char>(p.bytes[p.pos])))
        p.fail("expected single whitespace before raster");
    ++p.pos;

    const size_t expected =
        static_cast<size_t>(img.w) * static_cast<size_t>(img.h) * static_cast<size_t>(img.channels);
    if (p.bytes.size() - p.pos < expected) {
        p.pos = p.bytes.size();
        p.fail("raster truncated, expected " + std::to_string(expected) + " bytes");
    }
    img.v.assign(p.bytes.begin() + static_cast<std::ptrdiff_t>(p.pos),
                 p.bytes.begin() + static_cast<std::ptrdiff_t>(p.pos + expected));
    return img;
}

} // namespace cto
