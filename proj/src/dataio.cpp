#include "ragnet/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ragnet/error.hpp"
#include "ragnet/fileio.hpp"
#include "ragnet/random.hpp"

namespace ragnet {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 2051;
constexpr std::uint32_t kIdxLabelsMagic = 2049;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPlane = kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarPlane;

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> in, const std::string& what) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw FormatError(what + ": zlib init failed");
    std::vector<std::uint8_t> out;
    std::vector<std::uint8_t> chunk(1 << 16);
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    while (true) {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw FormatError(what + ": corrupt gzip stream at compressed byte offset " +
                              std::to_string(zs.total_in));
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
        if (rc == Z_STREAM_END) {
            // Concatenated members are legal gzip.
            if (zs.avail_in == 0) break;
            inflateReset(&zs);
            continue;
        }
        if (zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw LengthError(what + ": truncated gzip stream");
        }
    }
    inflateEnd(&zs);
    return out;
}

std::filesystem::path first_existing(const std::filesystem::path& root, std::initializer_list<std::string> names) {
    for (const auto& n : names) {
        for (const auto& candidate : {root / n, root / (n + ".gz")}) {
            if (std::filesystem::exists(candidate)) return candidate;
        }
    }
    throw IoError("none of the expected dataset files found under " + root.string() + " (looked for " +
                  *names.begin() + "[.gz])");
}

}  // namespace

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes, path.string());
    return bytes;
}

LabeledDataset parse_idx(std::span<const std::uint8_t> images_bytes, std::span<const std::uint8_t> labels_bytes) {
    if (images_bytes.size() < 16) throw LengthError("IDX images: header needs 16 bytes, have " + std::to_string(images_bytes.size()));
    if (labels_bytes.size() < 8) throw LengthError("IDX labels: header needs 8 bytes, have " + std::to_string(labels_bytes.size()));

    const auto img_magic = read_be32(images_bytes, 0);
    if (img_magic != kIdxImagesMagic) {
        throw FormatError("IDX images: expected magic " + std::to_string(kIdxImagesMagic) + ", found " +
                          std::to_string(img_magic));
    }
    const auto lbl_magic = read_be32(labels_bytes, 0);
    if (lbl_magic != kIdxLabelsMagic) {
        throw FormatError("IDX labels: expected magic " + std::to_string(kIdxLabelsMagic) + ", found " +
                          std::to_string(lbl_magic));
    }

    const std::size_t n = read_be32(images_bytes, 4);
    const std::size_t rows = read_be32(images_bytes, 8);
    const std::size_t cols = read_be32(images_bytes, 12);
    const std::size_t n_labels = read_be32(labels_bytes, 4);
    if (n != n_labels) {
        throw ConsistencyError("IDX: image count " + std::to_string(n) + " does not match label count " +
                               std::to_string(n_labels));
    }
    const std::size_t px = rows * cols;
    if (images_bytes.size() - 16 < n * px) {
        throw LengthError("IDX images: payload has " + std::to_string(images_bytes.size() - 16) +
                          " bytes, header declares " + std::to_string(n * px));
    }
    if (labels_bytes.size() - 8 < n) {
        throw LengthError("IDX labels: payload has " + std::to_string(labels_bytes.size() - 8) +
                          " bytes, header declares " + std::to_string(n));
    }

    LabeledDataset ds;
    ds.images.resize(n);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Image& img = ds.images[i];
        img.width = static_cast<int>(cols);
        img.height = static_cast<int>(rows);
        img.channels = 1;
        img.id = static_cast<std::int64_t>(i);
        img.data.resize(px);
        const auto* src = images_bytes.data() + 16 + i * px;
        for (std::size_t p = 0; p < px; ++p) img.data[p] = static_cast<float>(src[p]) / 255.0f;
        const int label = labels_bytes[8 + i];
        if (label >= kNumClasses) {
            throw ConsistencyError("IDX labels: label " + std::to_string(label) + " at index " + std::to_string(i) +
                                   " is outside [0, 10)");
        }
        ds.labels[i] = label;
    }
    return ds;
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = read_maybe_gzip(images_path);
    const auto lbl = read_maybe_gzip(labels_path);
    try {
        auto ds = parse_idx(img, lbl);
        ds.name = images_path.stem().string();
        return ds;
    } catch (const FormatError& e) {
        // Re-throw with paths attached, keeping the concrete type.
        const std::string ctx = std::string(e.what()) + " [" + images_path.string() + ", " + labels_path.string() + "]";
        if (dynamic_cast<const LengthError*>(&e)) throw LengthError(ctx);
        if (dynamic_cast<const ConsistencyError*>(&e)) throw ConsistencyError(ctx);
        throw FormatError(ctx);
    }
}

std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_idx(const LabeledDataset& ds) {
    if (ds.images.size() != ds.labels.size()) throw ArgumentError("encode_idx: images/labels size mismatch");
    std::vector<std::uint8_t> images;
    std::vector<std::uint8_t> labels;
    const int rows = ds.images.empty() ? 0 : ds.images.front().height;
    const int cols = ds.images.empty() ? 0 : ds.images.front().width;
    put_be32(images, kIdxImagesMagic);
    put_be32(images, static_cast<std::uint32_t>(ds.images.size()));
    put_be32(images, static_cast<std::uint32_t>(rows));
    put_be32(images, static_cast<std::uint32_t>(cols));
    put_be32(labels, kIdxLabelsMagic);
    put_be32(labels, static_cast<std::uint32_t>(ds.labels.size()));
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const Image& img = ds.images[i];
        if (img.channels != 1 || img.width != cols || img.height != rows) {
            throw ArgumentError("encode_idx: image " + std::to_string(i) + " is not " + std::to_string(cols) + "x" +
                                std::to_string(rows) + "x1");
        }
        for (float v : img.data) images.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
        labels.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    }
    return {std::move(images), std::move(labels)};
}

LabeledDataset parse_cifar10(std::span<const std::uint8_t> bytes, std::int64_t first_id) {
    if (bytes.empty()) throw FormatError("CIFAR-10: empty batch");
    if (bytes.size() % kCifarRecord != 0) {
        throw FormatError("CIFAR-10: file size " + std::to_string(bytes.size()) + " is not a multiple of " +
                          std::to_string(kCifarRecord));
    }
    const std::size_t n = bytes.size() / kCifarRecord;
    LabeledDataset ds;
    ds.images.resize(n);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto* rec = bytes.data() + i * kCifarRecord;
        if (rec[0] > 9) {
            throw ConsistencyError("CIFAR-10: label byte " + std::to_string(rec[0]) + " at record " + std::to_string(i) +
                                   " (byte offset " + std::to_string(i * kCifarRecord) + ") exceeds 9");
        }
        ds.labels[i] = rec[0];
        Image& img = ds.images[i];
        img.width = img.height = static_cast<int>(kCifarSide);
        img.channels = 3;
        img.id = first_id + static_cast<std::int64_t>(i);
        img.data.resize(3 * kCifarPlane);
        for (std::size_t p = 0; p < kCifarPlane; ++p) {
            for (std::size_t c = 0; c < 3; ++c) {
                img.data[p * 3 + c] = static_cast<float>(rec[1 + c * kCifarPlane + p]) / 255.0f;
            }
        }
    }
    return ds;
}

LabeledDataset load_cifar10(std::span<const std::filesystem::path> batch_paths) {
    LabeledDataset ds;
    ds.name = "cifar10";
    for (const auto& path : batch_paths) {
        const auto bytes = read_maybe_gzip(path);
        LabeledDataset part;
        try {
            part = parse_cifar10(bytes, static_cast<std::int64_t>(ds.images.size()));
        } catch (const ConsistencyError& e) {
            throw ConsistencyError(std::string(e.what()) + " [" + path.string() + "]");
        } catch (const FormatError& e) {
            throw FormatError(std::string(e.what()) + " [" + path.string() + "]");
        }
        std::move(part.images.begin(), part.images.end(), std::back_inserter(ds.images));
        ds.labels.insert(ds.labels.end(), part.labels.begin(), part.labels.end());
    }
    return ds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                            std::uint64_t seed) {
    if (n == 0) throw ArgumentError("split_train_validation: empty dataset");
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ArgumentError("split_train_validation: fraction must be in (0,1), got " + std::to_string(fraction));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span(order));
    const auto n_first = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    std::vector<std::size_t> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_first));
    std::vector<std::size_t> second(order.begin() + static_cast<std::ptrdiff_t>(n_first), order.end());
    return {std::move(first), std::move(second)};
}

std::pair<LabeledDataset, LabeledDataset> split_train_validation(const LabeledDataset& ds, double fraction,
                                                                 std::uint64_t seed) {
    auto [a_idx, b_idx] = split_indices(ds.size(), fraction, seed);
    auto take = [&](const std::vector<std::size_t>& idx) {
        LabeledDataset part;
        part.name = ds.name;
        part.split = ds.split;
        part.images.reserve(idx.size());
        part.labels.reserve(idx.size());
        for (auto i : idx) {
            part.images.push_back(ds.images[i]);
            part.labels.push_back(ds.labels[i]);
        }
        return part;
    };
    return {take(a_idx), take(b_idx)};
}

LabeledDataset load_named_dataset(const std::string& name, const std::filesystem::path& root, Split split) {
    LabeledDataset ds;
    if (name == "mnist" || name == "fashion" || name == "fashionmnist") {
        const std::string prefix = split == Split::Train ? "train" : "t10k";
        const auto images = first_existing(root, {prefix + "-images-idx3-ubyte", prefix + "-images.idx3-ubyte"});
        const auto labels = first_existing(root, {prefix + "-labels-idx1-ubyte", prefix + "-labels.idx1-ubyte"});
        ds = load_idx(images, labels);
    } else if (name == "cifar10") {
        auto base = root;
        if (std::filesystem::exists(root / "cifar-10-batches-bin")) base = root / "cifar-10-batches-bin";
        std::vector<std::filesystem::path> paths;
        if (split == Split::Train) {
            for (int b = 1; b <= 5; ++b) paths.push_back(first_existing(base, {"data_batch_" + std::to_string(b) + ".bin"}));
        } else {
            paths.push_back(first_existing(base, {"test_batch.bin"}));
        }
        ds = load_cifar10(paths);
    } else {
        throw ArgumentError("unknown dataset '" + name + "' (expected mnist, fashion or cifar10)");
    }
    ds.name = name;
    ds.split = split;
    return ds;
}

}  // namespace ragnet
