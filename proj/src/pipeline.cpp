#include "ragnet/pipeline.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "ragnet/error.hpp"

namespace ragnet {

Precision parse_precision(const std::string& s) {
    if (s == "f32" || s == "float") return Precision::F32;
    if (s == "f64" || s == "double") return Precision::F64;
    throw ArgumentError("precision must be f32 or f64, got '" + s + "'");
}

std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

namespace {

template <typename To, typename From>
To narrow(const std::string& key, From v) {
    if (v < static_cast<From>(std::numeric_limits<To>::min()) || v > static_cast<From>(std::numeric_limits<To>::max())) {
        throw ArgumentError("config key '" + key + "' out of range");
    }
    return static_cast<To>(v);
}

std::vector<int> int_list(const ConfigFile& f, const std::string& key, std::vector<int> fallback) {
    const auto v = f.get_int_list(key);
    if (!v) return fallback;
    std::vector<int> out;
    for (auto x : *v) out.push_back(narrow<int>(key, x));
    return out;
}

}  // namespace

PipelineConfig PipelineConfig::from_file(const ConfigFile& f) {
    f.reject_unknown({"output", "precision", "jobs", "seed",
                      "dataset.name", "dataset.root", "dataset.train_subset", "dataset.test_subset",
                      "slic.target_k", "slic.max_iters", "slic.min_segment_ratio", "slic.slico",
                      "slic.compactness",
                      "model.heads", "model.layer_sizes", "model.mlp_sizes", "model.feature_dim",
                      "model.attention_eps", "model.self_loops",
                      "train.epochs", "train.batch_size", "train.lr", "train.beta1", "train.beta2",
                      "train.val_fraction", "train.seed", "train.stall_epochs", "train.stall_threshold",
                      "train.max_restarts"});
    PipelineConfig c;
    if (auto v = f.get_string("output")) c.output_dir = *v;
    if (auto v = f.get_string("precision")) c.precision = parse_precision(*v);
    if (auto v = f.get_int("jobs")) c.jobs = narrow<int>("jobs", *v);
    if (auto v = f.get_int("seed")) c.train.seed = static_cast<std::uint64_t>(*v);

    if (auto v = f.get_string("dataset.name")) c.dataset.name = *v;
    if (auto v = f.get_string("dataset.root")) c.dataset.root = *v;
    if (auto v = f.get_int("dataset.train_subset")) c.dataset.train_subset = *v;
    if (auto v = f.get_int("dataset.test_subset")) c.dataset.test_subset = *v;

    if (auto v = f.get_int("slic.target_k")) c.slic.target_k = narrow<int>("slic.target_k", *v);
    if (auto v = f.get_int("slic.max_iters")) c.slic.max_iters = narrow<int>("slic.max_iters", *v);
    if (auto v = f.get_double("slic.min_segment_ratio")) c.slic.min_segment_ratio = *v;
    if (auto v = f.get_bool("slic.slico")) c.slic.slico = *v;
    if (auto v = f.get_double("slic.compactness")) c.slic.initial_compactness = *v;

    if (auto v = f.get_int("model.heads")) c.model.heads = narrow<int>("model.heads", *v);
    c.model.layer_sizes = int_list(f, "model.layer_sizes", c.model.layer_sizes);
    c.model.mlp_sizes = int_list(f, "model.mlp_sizes", c.model.mlp_sizes);
    if (auto v = f.get_int("model.feature_dim")) {
        c.model.feature_dim = narrow<int>("model.feature_dim", *v);
        c.model_feature_dim_set = true;
    }
    if (auto v = f.get_double("model.attention_eps")) c.model.attention_eps = *v;
    if (auto v = f.get_bool("model.self_loops")) c.model.self_loops = *v;

    if (auto v = f.get_int("train.epochs")) c.train.epochs = narrow<int>("train.epochs", *v);
    if (auto v = f.get_int("train.batch_size")) c.train.batch_size = narrow<int>("train.batch_size", *v);
    if (auto v = f.get_double("train.lr")) c.train.lr = *v;
    if (auto v = f.get_double("train.beta1")) c.train.beta1 = *v;
    if (auto v = f.get_double("train.beta2")) c.train.beta2 = *v;
    if (auto v = f.get_double("train.val_fraction")) c.train.val_fraction = *v;
    if (auto v = f.get_int("train.seed")) c.train.seed = static_cast<std::uint64_t>(*v);
    if (auto v = f.get_int("train.stall_epochs")) c.train.stall_epochs = narrow<int>("train.stall_epochs", *v);
    if (auto v = f.get_double("train.stall_threshold")) c.train.stall_threshold = *v;
    if (auto v = f.get_int("train.max_restarts")) c.train.max_restarts = narrow<int>("train.max_restarts", *v);
    return c;
}

void PipelineConfig::validate() const {
    slic.validate();
    model.validate();
    train.validate();
    if (jobs < 1) throw ArgumentError("jobs must be >= 1");
    if (dataset.train_subset < 0 || dataset.test_subset < 0) throw ArgumentError("dataset subsets must be >= 0");
}

std::filesystem::path resolve_data_root(const DatasetSpec& spec) {
    if (!spec.root.empty()) return spec.root;
    const char* env = std::getenv("RAGNET_DATA_DIR");
    if (env == nullptr || *env == '\0') {
        throw ArgumentError("no dataset root: pass --data-dir or set RAGNET_DATA_DIR");
    }
    const std::filesystem::path base(env);
    if (!spec.name.empty() && std::filesystem::is_directory(base / spec.name)) return base / spec.name;
    return base;
}

LabeledDataset load_dataset(const DatasetSpec& spec, Split split) {
    auto ds = load_named_dataset(spec.name, resolve_data_root(spec), split);
    const auto limit = split == Split::Train ? spec.train_subset : spec.test_subset;
    if (limit > 0 && static_cast<std::size_t>(limit) < ds.size()) {
        ds.images.resize(static_cast<std::size_t>(limit));
        ds.labels.resize(static_cast<std::size_t>(limit));
    }
    return ds;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs < 1) throw ArgumentError("parallel_for: jobs must be >= 1");
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (!stop.load()) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    stop = true;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::vector<Segmentation> segment_images(std::span<const Image> images, const SlicConfig& cfg, int jobs) {
    cfg.validate();
    std::vector<Segmentation> out(images.size());
    parallel_for(images.size(), jobs, [&](std::size_t i) { out[i] = slic_segment(images[i], cfg); });
    return out;
}

std::vector<RagGraph> build_graphs(std::span<const Image> images, std::span<const Segmentation> segs,
                                   std::span<const int> labels, RagOptions opts, int jobs) {
    if (segs.size() != images.size()) {
        throw ConsistencyError(std::to_string(segs.size()) + " label maps for " + std::to_string(images.size()) +
                               " images");
    }
    if (!labels.empty() && labels.size() != images.size()) {
        throw ArgumentError(std::to_string(labels.size()) + " labels for " + std::to_string(images.size()) + " images");
    }
    std::vector<RagGraph> out(images.size());
    parallel_for(images.size(), jobs, [&](std::size_t i) {
        const auto& img = images[i];
        const auto& seg = segs[i];
        if (seg.width != img.width || seg.height != img.height) {
            throw ConsistencyError("label map " + std::to_string(i) + " is " + std::to_string(seg.width) + "x" +
                                   std::to_string(seg.height) + ", image is " + std::to_string(img.width) + "x" +
                                   std::to_string(img.height));
        }
        out[i] = build_rag(seg, segment_stats(img, seg), opts);
        if (!labels.empty()) out[i].label = labels[i];
    });
    return out;
}

}  // namespace ragnet
