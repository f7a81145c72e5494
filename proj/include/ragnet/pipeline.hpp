#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ragnet/config.hpp"
#include "ragnet/dataio.hpp"
#include "ragnet/gat.hpp"
#include "ragnet/graph.hpp"
#include "ragnet/segmentation.hpp"
#include "ragnet/trainer.hpp"

namespace ragnet {

enum class Precision { F32, F64 };

Precision parse_precision(const std::string& s);
std::string to_string(Precision p);

struct DatasetSpec {
    std::string name;  // mnist, fashion, cifar10
    std::string root;  // empty: RAGNET_DATA_DIR
    std::int64_t train_subset = 0;  // first N training images; 0 = all
    std::int64_t test_subset = 0;
};

struct PipelineConfig {
    DatasetSpec dataset;
    SlicConfig slic;
    GatModelConfig model;
    bool model_feature_dim_set = false;
    TrainConfig train;
    std::string output_dir;
    Precision precision = Precision::F32;
    int jobs = 1;

    // Reads [dataset], [slic], [model], [train] and top-level keys; unknown
    // keys are rejected.
    static PipelineConfig from_file(const ConfigFile& file);
    void validate() const;
};

// Dataset root: explicit root, else $RAGNET_DATA_DIR/<name> when it exists,
// else $RAGNET_DATA_DIR. Throws ArgumentError when neither is available.
std::filesystem::path resolve_data_root(const DatasetSpec& spec);

LabeledDataset load_dataset(const DatasetSpec& spec, Split split);

// Runs fn(i) for i in [0, n) on `jobs` threads. The first exception thrown by
// any task is rethrown after all workers stop.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

std::vector<Segmentation> segment_images(std::span<const Image> images, const SlicConfig& cfg, int jobs = 1);

// One graph per image; labels may be empty (unlabeled graphs).
std::vector<RagGraph> build_graphs(std::span<const Image> images, std::span<const Segmentation> segs,
                                   std::span<const int> labels, RagOptions opts = {}, int jobs = 1);

}  // namespace ragnet
