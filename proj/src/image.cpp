#include "tpseg/image.hpp"

#include <fstream>

#include "tpseg/errors.hpp"

namespace tpseg {

namespace {

struct ByteScanner {
    const std::vector<char>& buf;
    std::size_t pos = 0;
    const std::string& path;

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(path + ": " + what + " at byte offset " + std::to_string(pos));
    }

    void skip_space_and_comments() {
        while (pos < buf.size()) {
            char c = buf[pos];
            if (c == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    int read_uint() {
        skip_space_and_comments();
        if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9')
            fail("expected unsigned integer");
        long v = 0;
        while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
            v = v * 10 + (buf[pos] - '0');
            if (v > 1000000) fail("integer out of range");
            ++pos;
        }
        return static_cast<int>(v);
    }
};

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open for reading");
    return std::vector<char>(std::istreambuf_iterator<char>(in),
                             std::istreambuf_iterator<char>());
}

ImageU8 read_pnm(const std::string& path, char expected_kind, int channels) {
    std::vector<char> buf = slurp(path);
    ByteScanner sc{buf, 0, path};
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != expected_kind) {
        sc.pos = 0;
        sc.fail(std::string("expected magic P") + expected_kind);
    }
    sc.pos = 2;
    ImageU8 img;
    img.channels = channels;
    img.width = sc.read_uint();
    img.height = sc.read_uint();
    int maxval = sc.read_uint();
    if (img.width <= 0 || img.height <= 0) sc.fail("non-positive dimensions");
    if (maxval != 255) sc.fail("unsupported maxval (want 255)");
    // exactly one whitespace byte separates header and raster
    if (sc.pos >= buf.size() ||
        !(buf[sc.pos] == '\n' || buf[sc.pos] == ' ' || buf[sc.pos] == '\t' || buf[sc.pos] == '\r'))
        sc.fail("expected whitespace before raster");
    ++sc.pos;
    std::size_t need = static_cast<std::size_t>(img.width) * img.height * channels;
    if (buf.size() - sc.pos < need) {
        sc.pos = buf.size();
        sc.fail("truncated raster, need " + std::to_string(need) + " bytes");
    }
    img.pixels.assign(buf.begin() + static_cast<long>(sc.pos),
                      buf.begin() + static_cast<long>(sc.pos + need));
    return img;
}

void write_pnm(const std::string& path, const ImageU8& image, char kind, int channels) {
    if (image.channels != channels)
        throw ValidationError(path + ": image has " + std::to_string(image.channels) +
                              " channels, format needs " + std::to_string(channels));
    if (image.pixels.size() !=
        static_cast<std::size_t>(image.width) * image.height * channels)
        throw ValidationError(path + ": pixel buffer does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out << 'P' << kind << '\n' << image.width << ' ' << image.height << '\n' << "255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw FormatError(path + ": short write");
}

} // namespace

ImageU8 read_ppm(const std::string& path) { return read_pnm(path, '6', 3); }
ImageU8 read_pgm(const std::string& path) { return read_pnm(path, '5', 1); }
void write_ppm(const std::string& path, const ImageU8& image) { write_pnm(path, image, '6', 3); }
void write_pgm(const std::string& path, const ImageU8& image) { write_pnm(path, image, '5', 1); }

} // namespace tpseg
