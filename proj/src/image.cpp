// SPDX-License-Identifier: Apache-2.0
#include "modem/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "modem/checkpoint.hpp"

namespace modem::image {

namespace {

unsigned char level(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string encode(const char *magic, std::size_t channels, std::size_t h, std::size_t w, const Tensor &x) {
    std::string out = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    const std::size_t n = h * w;
    out.reserve(out.size() + channels * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < channels; ++c) out.push_back(static_cast<char>(level(x[c * n + i])));
    return out;
}

class Header {
  public:
    explicit Header(const std::string &b) : bytes_(b) {}

    std::size_t number() {
        skip();
        std::size_t v = 0, digits = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            v = v * 10 + static_cast<std::size_t>(bytes_[pos_++] - '0');
            if (++digits > 9) throw ImageError("image header number too large");
        }
        if (digits == 0) throw ImageError("malformed image header");
        return v;
    }
    std::size_t pos() const { return pos_; }
    void advance() { ++pos_; }

  private:
    void skip() {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
                ++pos_;
            } else {
                break;
            }
        }
    }
    const std::string &bytes_;
    std::size_t pos_ = 2;
};

}  // namespace

std::string encode_ppm(const Tensor &rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("PPM needs [3 x H x W], got " + shape_str(rgb.shape()));
    return encode("P6", 3, rgb.dim(1), rgb.dim(2), rgb);
}

std::string encode_pgm(const Tensor &gray) {
    if (gray.rank() == 2) return encode("P5", 1, gray.dim(0), gray.dim(1), gray);
    if (gray.rank() != 3 || gray.dim(0) != 1)
        throw ShapeError("PGM needs [H x W] or [1 x H x W], got " + shape_str(gray.shape()));
    return encode("P5", 1, gray.dim(1), gray.dim(2), gray);
}

Tensor decode_pnm(const std::string &bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
        throw ImageError("not a binary PPM/PGM image");
    const std::size_t channels = bytes[1] == '6' ? 3 : 1;
    Header hdr(bytes);
    const std::size_t w = hdr.number(), h = hdr.number(), maxval = hdr.number();
    if (w == 0 || h == 0) throw ImageError("image has zero extent");
    if (maxval != 255) throw ImageError("only 8-bit images (maxval 255) are supported, got " + std::to_string(maxval));
    if (hdr.pos() >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[hdr.pos()])))
        throw ImageError("malformed image header");
    hdr.advance();
    const std::size_t n = h * w;
    if (bytes.size() - hdr.pos() < channels * n)
        throw ImageError("image data truncated: expected " + std::to_string(channels * n) + " bytes");
    Tensor out({channels, h, w});
    const auto *p = reinterpret_cast<const unsigned char *>(bytes.data() + hdr.pos());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < channels; ++c) out[c * n + i] = p[i * channels + c] / 255.0;
    return out;
}

Tensor read_image(const std::filesystem::path &path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const std::exception &e) {
        throw ImageError("cannot read image " + path.string() + ": " + e.what());
    }
    try {
        return decode_pnm(bytes);
    } catch (const ImageError &e) {
        throw ImageError(path.string() + ": " + e.what());
    }
}

void write_ppm(const std::filesystem::path &path, const Tensor &rgb) { write_file_atomic(path, encode_ppm(rgb)); }

void write_pgm(const std::filesystem::path &path, const Tensor &gray) { write_file_atomic(path, encode_pgm(gray)); }

Tensor quantize(const Tensor &x) {
    Tensor out = x;
    for (double &v : out.storage()) v = level(v) / 255.0;
    return out;
}

Tensor clamp01(const Tensor &x) {
    Tensor out = x;
    for (double &v : out.storage()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

}  // namespace modem::image
