#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ragnet {

// Row-major, channel-interleaved raster with intensities in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;  // 1 (grayscale) or 3 (RGB)
    std::vector<float> data;
    std::int64_t id = 0;

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    float at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// Throws ArgumentError when dims, channel count or value range are invalid.
void validate(const Image& img);

// Binary PGM (P5) / PPM (P6) with maxval <= 255, plus their ASCII twins P2/P3.
Image read_pnm(const std::filesystem::path& path);

// 8-bit RGB raster used for overlays.
struct Rgb8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // width*height*3
};

Rgb8Image to_rgb8(const Image& img);
std::vector<std::uint8_t> encode_png(const Rgb8Image& img);
std::vector<std::uint8_t> encode_ppm(const Rgb8Image& img);

}  // namespace ragnet
