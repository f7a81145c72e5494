#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ragnet/image.hpp"

namespace ragnet {

enum class Split { Train, Test };

std::string to_string(Split s);

struct LabeledDataset {
    std::vector<Image> images;
    std::vector<int> labels;
    std::string name;
    Split split = Split::Train;

    std::size_t size() const { return images.size(); }
};

inline constexpr int kNumClasses = 10;

// Reads a whole file, transparently inflating gzip (magic 0x1f 0x8b).
std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path);

// MNIST / FashionMNIST IDX pair: images magic 2051 (n, rows, cols), labels
// magic 2049 (n). Pixel bytes are scaled by 1/255.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

// In-memory variants used by load_idx and by tests.
LabeledDataset parse_idx(std::span<const std::uint8_t> images_bytes,
                         std::span<const std::uint8_t> labels_bytes);

// Serializes back to uncompressed IDX. Intensities are mapped to bytes with
// round(255 * v), which inverts the loader exactly.
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_idx(const LabeledDataset& ds);

// CIFAR-10 binary batches: 3073-byte records (label, 1024 R, 1024 G, 1024 B).
LabeledDataset load_cifar10(std::span<const std::filesystem::path> batch_paths);
LabeledDataset parse_cifar10(std::span<const std::uint8_t> bytes, std::int64_t first_id = 0);

// Seeded shuffle; the first ceil(fraction * n) shuffled items form the first part.
std::pair<LabeledDataset, LabeledDataset> split_train_validation(const LabeledDataset& ds,
                                                                 double fraction,
                                                                 std::uint64_t seed);

// Index form of the same split, shared with the trainer.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n,
                                                                            double fraction,
                                                                            std::uint64_t seed);

// Standard file layout under a dataset root ("mnist", "fashion", "cifar10").
LabeledDataset load_named_dataset(const std::string& name, const std::filesystem::path& root,
                                  Split split);

}  // namespace ragnet
