#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tpseg {

// 8-bit interleaved image; channels is 1 (PGM, P5) or 3 (PPM, P6).
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels; // row-major, interleaved

    std::size_t size() const { return pixels.size(); }
};

// Binary PPM (P6) / PGM (P5), maxval 255 only. Readers throw FormatError
// with the byte offset of the first malformed token.
ImageU8 read_ppm(const std::string& path);
ImageU8 read_pgm(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& image);
void write_pgm(const std::string& path, const ImageU8& image);

} // namespace tpseg
