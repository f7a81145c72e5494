#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "ragnet/image.hpp"

namespace ragnet {

// Per-pixel superpixel labels; ids are contiguous in [0, n_segments) and each
// id is a single 4-connected component.
struct Segmentation {
    int width = 0;
    int height = 0;
    std::vector<std::int32_t> labels;  // row-major
    int n_segments = 0;
    int target_k = 0;

    std::int32_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

struct SlicConfig {
    int target_k = 75;
    int max_iters = 10;
    // Components smaller than this fraction of the mean segment area
    // (H*W / target_k) are merged into a neighbour.
    double min_segment_ratio = 0.25;
    // Per-cluster adaptive colour normalisation (SLICO).
    bool slico = true;
    double initial_compactness = 10.0;

    void validate() const;
};

// Optional diagnostics filled by slic_segment.
struct SlicTrace {
    int n_seeds = 0;
    double step = 0.0;
    // Per-cluster colour normaliser after the last iteration (SLICO), or the
    // fixed compactness for plain SLIC.
    std::vector<double> cluster_compactness;
};

// sRGB in [0,1] to CIELAB (D65). Grayscale uses L = 100*v, a = b = 0.
std::array<double, 3> srgb_to_lab(double r, double g, double b);
std::vector<std::array<double, 3>> image_to_lab(const Image& img);

Segmentation slic_segment(const Image& img, const SlicConfig& cfg, SlicTrace* trace = nullptr);

// Assigns one id per 4-connected component in raster order. A component
// smaller than min_size takes the id of the component adjacent to its first
// (raster-order) pixel that was visited earlier; the component containing the
// origin has no such neighbour and is always kept.
Segmentation relabel_connected(std::span<const std::int32_t> raw_labels, int width, int height, int min_size);

struct SegmentStats {
    int n_segments = 0;
    int channels = 0;
    std::vector<double> mean;        // n_segments x channels
    std::vector<double> centroid_x;  // pixel units, from column index
    std::vector<double> centroid_y;  // pixel units, from row index
    std::vector<std::int64_t> count;
};

SegmentStats segment_stats(const Image& img, const Segmentation& seg);

// Throws ArgumentError if the map is not a valid Segmentation (range, gaps,
// connectivity).
void check_segmentation(const Segmentation& seg);

// "SEG1" label-map container, one record per image.
std::vector<std::uint8_t> encode_segmentations(std::span<const Segmentation> segs);
std::vector<Segmentation> decode_segmentations(std::span<const std::uint8_t> bytes);

}  // namespace ragnet
