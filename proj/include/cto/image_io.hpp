#pragma once

// Binary PPM (P6) / PGM (P5) reading and writing.
//
// Writer grammar (fixed, so corpus bytes are reproducible):
//   "P6\n<width> <height>\n255\n" + interleaved RGB rows     (PPM)
//   "P5\n<width> <height>\n<maxval>\n" + rows                (PGM)
// The reader accepts any standard header whitespace (no comments) and
// reports malformed input with the byte offset of the failure.

#include <cstdint>
#include <string>
#include <vector>

namespace cto {

struct ImageU8 {
    int w = 0, h = 0, channels = 1; // 1 = gray, 3 = RGB, interleaved
    std::vector<std::uint8_t> v;

    std::uint8_t at(int r, int c, int ch = 0) const {
        return v[(static_cast<size_t>(r) * w + c) * channels + ch];
    }
    std::uint8_t& at(int r, int c, int ch = 0) {
        return v[(static_cast<size_t>(r) * w + c) * channels + ch];
    }
};

void write_ppm(const std::string& path, const ImageU8& img);
void write_pgm(const std::string& path, const ImageU8& img, int maxval = 255);

// Parses either P5 or P6 depending on the file's magic.
ImageU8 read_pnm(const std::string& path);

} // namespace cto
