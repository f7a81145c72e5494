#include "ragnet/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "ragnet/error.hpp"
#include "ragnet/fileio.hpp"

namespace ragnet {

void validate(const Image& img) {
    if (img.width <= 0 || img.height <= 0) {
        throw ArgumentError("image " + std::to_string(img.id) + ": empty (" + std::to_string(img.width) + "x" +
                            std::to_string(img.height) + ")");
    }
    if (img.channels != 1 && img.channels != 3) {
        throw ArgumentError("image " + std::to_string(img.id) + ": unsupported channel count " +
                            std::to_string(img.channels));
    }
    if (img.data.size() != img.pixel_count() * static_cast<std::size_t>(img.channels)) {
        throw ArgumentError("image " + std::to_string(img.id) + ": data length " + std::to_string(img.data.size()) +
                            " != width*height*channels");
    }
    for (float v : img.data) {
        if (!(v >= 0.0f && v <= 1.0f)) throw ArgumentError("image " + std::to_string(img.id) + ": intensity outside [0,1]");
    }
}

namespace {

class PnmTokenizer {
public:
    PnmTokenizer(const std::vector<std::uint8_t>& b, std::string what) : b_(b), what_(std::move(what)) {}

    unsigned next_uint() {
        skip_space_and_comments();
        if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) {
            throw FormatError(what_ + ": expected integer at byte offset " + std::to_string(pos_));
        }
        unsigned long v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + (b_[pos_++] - '0');
            if (v > (1u << 24)) throw FormatError(what_ + ": integer too large at byte offset " + std::to_string(pos_));
        }
        return static_cast<unsigned>(v);
    }

    // Exactly one whitespace byte separates the header from binary payload.
    std::size_t binary_start() {
        if (pos_ >= b_.size()) throw LengthError(what_ + ": missing payload");
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else if (std::isspace(b_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<std::uint8_t>& b_;
    std::string what_;
    std::size_t pos_ = 2;
};

void append_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& payload) {
    auto be32 = [&](std::uint32_t v) {
        out.push_back(static_cast<std::uint8_t>(v >> 24));
        out.push_back(static_cast<std::uint8_t>(v >> 16));
        out.push_back(static_cast<std::uint8_t>(v >> 8));
        out.push_back(static_cast<std::uint8_t>(v));
    };
    be32(static_cast<std::uint32_t>(payload.size()));
    const std::size_t type_pos = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc = crc32(0L, out.data() + type_pos, static_cast<uInt>(4 + payload.size()));
    be32(static_cast<std::uint32_t>(crc));
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    const std::string what = path.string();
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '2' && bytes[1] != '3' && bytes[1] != '5' && bytes[1] != '6')) {
        throw FormatError(what + ": not a P2/P3/P5/P6 PNM file (bad magic at byte offset 0)");
    }
    const char kind = static_cast<char>(bytes[1]);
    PnmTokenizer tok(bytes, what);
    Image img;
    img.width = static_cast<int>(tok.next_uint());
    img.height = static_cast<int>(tok.next_uint());
    const unsigned maxval = tok.next_uint();
    if (maxval == 0 || maxval > 255) throw FormatError(what + ": unsupported maxval " + std::to_string(maxval));
    img.channels = (kind == '3' || kind == '6') ? 3 : 1;
    const std::size_t n = img.pixel_count() * img.channels;
    img.data.resize(n);
    if (kind == '5' || kind == '6') {
        const std::size_t start = tok.binary_start();
        if (bytes.size() < start + n) {
            throw LengthError(what + ": payload truncated at byte offset " + std::to_string(bytes.size()) + ", need " +
                              std::to_string(start + n));
        }
        for (std::size_t i = 0; i < n; ++i) img.data[i] = static_cast<float>(bytes[start + i]) / static_cast<float>(maxval);
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned v = tok.next_uint();
            if (v > maxval) throw FormatError(what + ": sample exceeds maxval");
            img.data[i] = static_cast<float>(v) / static_cast<float>(maxval);
        }
    }
    validate(img);
    return img;
}

Rgb8Image to_rgb8(const Image& img) {
    Rgb8Image out;
    out.width = img.width;
    out.height = img.height;
    out.rgb.resize(img.pixel_count() * 3);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        for (int c = 0; c < 3; ++c) {
            const float v = img.data[p * img.channels + (img.channels == 3 ? c : 0)];
            out.rgb[p * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
    }
    return out;
}

std::vector<std::uint8_t> encode_png(const Rgb8Image& img) {
    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    auto be32 = [&](std::uint32_t v) {
        ihdr.push_back(static_cast<std::uint8_t>(v >> 24));
        ihdr.push_back(static_cast<std::uint8_t>(v >> 16));
        ihdr.push_back(static_cast<std::uint8_t>(v >> 8));
        ihdr.push_back(static_cast<std::uint8_t>(v));
    };
    be32(static_cast<std::uint32_t>(img.width));
    be32(static_cast<std::uint32_t>(img.height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit, truecolor, deflate, no filter, no interlace
    append_chunk(out, "IHDR", ihdr);

    std::vector<std::uint8_t> raw;
    const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
    raw.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), img.rgb.begin() + y * stride, img.rgb.begin() + (y + 1) * stride);
    }
    uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_len);
    if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw IoError("png: deflate failed");
    }
    packed.resize(packed_len);
    append_chunk(out, "IDAT", packed);
    append_chunk(out, "IEND", {});
    return out;
}

std::vector<std::uint8_t> encode_ppm(const Rgb8Image& img) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.rgb.begin(), img.rgb.end());
    return out;
}

}  // namespace ragnet
