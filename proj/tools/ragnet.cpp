// ragnet: segment | build-graphs | train | eval
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "ragnet/error.hpp"
#include "ragnet/fileio.hpp"
#include "ragnet/kernels.hpp"
#include "ragnet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ragnet;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::optional<std::string> dataset;
    std::optional<std::string> data_dir;
    std::optional<std::int64_t> subset;
    std::optional<std::int64_t> test_subset;
    std::optional<std::string> out;
};

void add_common(CLI::App* app, CommonFlags& f) {
    app->add_option("--config", f.config, "Config file (key = value, [sections])");
    app->add_option("--seed", f.seed, "Random seed");
    app->add_option("--jobs", f.jobs, "Worker threads")->check(CLI::PositiveNumber);
    app->add_option("--dataset", f.dataset, "mnist, fashion or cifar10");
    app->add_option("--data-dir", f.data_dir, "Dataset root (default: $RAGNET_DATA_DIR)");
    app->add_option("--subset", f.subset, "Use only the first N training images")->check(CLI::NonNegativeNumber);
    app->add_option("--test-subset", f.test_subset, "Use only the first N test images")->check(CLI::NonNegativeNumber);
    app->add_option("--out", f.out, "Output directory");
}

PipelineConfig resolve(const CommonFlags& f) {
    PipelineConfig c;
    if (!f.config.empty()) c = PipelineConfig::from_file(ConfigFile::load(f.config));
    if (f.seed) c.train.seed = *f.seed;
    if (f.jobs) c.jobs = *f.jobs;
    if (f.dataset) c.dataset.name = *f.dataset;
    if (f.data_dir) c.dataset.root = *f.data_dir;
    if (f.subset) c.dataset.train_subset = *f.subset;
    if (f.test_subset) c.dataset.test_subset = *f.test_subset;
    if (f.out) c.output_dir = *f.out;
    return c;
}

fs::path output_dir(const PipelineConfig& c) {
    if (c.output_dir.empty()) throw ArgumentError("no output directory: pass --out or set 'output' in the config");
    std::error_code ec;
    fs::create_directories(c.output_dir, ec);
    if (ec) throw IoError("cannot create " + c.output_dir + ": " + ec.message());
    return c.output_dir;
}

std::vector<Split> splits_for(const std::string& s) {
    if (s == "train") return {Split::Train};
    if (s == "test") return {Split::Test};
    if (s == "all") return {Split::Train, Split::Test};
    throw ArgumentError("--split must be train, test or all");
}

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw IoError(what + " not found: " + p.string());
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// ---- segment ----------------------------------------------------------------

struct SegmentFlags {
    std::optional<std::string> image;
    std::string split = "all";
    std::optional<int> target_k;
    std::optional<int> max_iters;
    std::optional<double> compactness;
    bool plain_slic = false;
    int overlays = 0;
    int scale = 1;
    bool draw_graph = false;
};

void write_overlay(const fs::path& path, const Image& img, const Segmentation& seg, bool draw_graph, int scale) {
    std::optional<RagGraph> g;
    if (draw_graph) g = build_rag(seg, segment_stats(img, seg));
    write_file_atomic(path, encode_png(render_overlay(img, seg, g ? &*g : nullptr, scale)));
}

int run_segment(const CommonFlags& cf, const SegmentFlags& sf) {
    auto cfg = resolve(cf);
    if (sf.target_k) cfg.slic.target_k = *sf.target_k;
    if (sf.max_iters) cfg.slic.max_iters = *sf.max_iters;
    if (sf.compactness) cfg.slic.initial_compactness = *sf.compactness;
    if (sf.plain_slic) cfg.slic.slico = false;
    cfg.validate();
    if (sf.scale < 1) throw ArgumentError("--overlay-scale must be >= 1");
    const auto out = output_dir(cfg);

    if (sf.image) {
        require_file(*sf.image, "image");
        const Image img = read_pnm(*sf.image);
        const auto seg = slic_segment(img, cfg.slic);
        const std::string stem = fs::path(*sf.image).stem().string();
        write_file_atomic(out / (stem + ".seg"), encode_segmentations(std::span(&seg, 1)));
        write_overlay(out / (stem + ".png"), img, seg, sf.draw_graph, sf.scale);
        std::cout << stem << ": " << seg.n_segments << " segments (target " << cfg.slic.target_k << ")\n";
        return 0;
    }
    if (cfg.dataset.name.empty()) throw ArgumentError("segment: pass --image or --dataset");
    for (Split split : splits_for(sf.split)) {
        const auto ds = load_dataset(cfg.dataset, split);
        const auto segs = segment_images(ds.images, cfg.slic, cfg.jobs);
        write_file_atomic(out / (to_string(split) + ".seg"), encode_segmentations(segs));
        int lo = segs.empty() ? 0 : segs[0].n_segments, hi = lo;
        double total = 0;
        for (const auto& s : segs) {
            lo = std::min(lo, s.n_segments);
            hi = std::max(hi, s.n_segments);
            total += s.n_segments;
        }
        const int n_overlays = std::min<int>(sf.overlays, static_cast<int>(segs.size()));
        if (n_overlays > 0) fs::create_directories(out / "overlays");
        for (int i = 0; i < n_overlays; ++i) {
            write_overlay(out / "overlays" / (to_string(split) + "-" + std::to_string(i) + ".png"), ds.images[i],
                          segs[i], sf.draw_graph, sf.scale);
        }
        std::cout << to_string(split) << ": " << segs.size() << " label maps, segments min " << lo << " mean "
                  << (segs.empty() ? 0.0 : total / static_cast<double>(segs.size())) << " max " << hi << "\n";
    }
    return 0;
}

// ---- build-graphs -----------------------------------------------------------

struct BuildFlags {
    std::optional<std::string> image;
    std::optional<std::string> segments;
    std::string split = "all";
    std::string format = "rag1";
    bool no_self_loops = false;
};

int run_build(const CommonFlags& cf, const BuildFlags& bf) {
    auto cfg = resolve(cf);
    if (bf.no_self_loops) cfg.model.self_loops = false;
    cfg.validate();
    if (bf.format != "rag1" && bf.format != "json") throw ArgumentError("--format must be rag1 or json");
    const std::string ext = bf.format == "json" ? ".json" : ".rag";
    const RagOptions opts{cfg.model.self_loops};
    const auto out = output_dir(cfg);

    if (bf.image) {
        if (!bf.segments) throw ArgumentError("build-graphs --image needs --segments FILE");
        require_file(*bf.image, "image");
        require_file(*bf.segments, "label maps");
        const Image img = read_pnm(*bf.image);
        const auto segs = decode_segmentations(read_file(*bf.segments));
        if (segs.size() != 1) throw ConsistencyError("expected one label map in " + *bf.segments);
        const auto graphs = build_graphs(std::span(&img, 1), segs, {}, opts, 1);
        const auto path = out / (fs::path(*bf.image).stem().string() + ext);
        export_graphs(graphs, path);
        std::cout << path.string() << ": " << graphs[0].n_nodes << " nodes, " << graphs[0].edges.size()
                  << " edges, feature dim " << graphs[0].feature_dim << "\n";
        return 0;
    }
    if (cfg.dataset.name.empty()) throw ArgumentError("build-graphs: pass --image or --dataset");
    const fs::path seg_dir = bf.segments ? fs::path(*bf.segments) : out;
    for (Split split : splits_for(bf.split)) {
        const auto seg_path = seg_dir / (to_string(split) + ".seg");
        require_file(seg_path, "label maps");
        const auto segs = decode_segmentations(read_file(seg_path));
        const auto ds = load_dataset(cfg.dataset, split);
        if (segs.size() != ds.size()) {
            throw ConsistencyError(seg_path.string() + " holds " + std::to_string(segs.size()) + " label maps, dataset has " +
                                   std::to_string(ds.size()) + " images (same --subset as segment?)");
        }
        const auto graphs = build_graphs(ds.images, segs, ds.labels, opts, cfg.jobs);
        const auto path = out / (to_string(split) + ext);
        export_graphs(graphs, path);
        std::cout << path.string() << ": " << graphs.size() << " graphs, feature dim "
                  << (graphs.empty() ? 0 : graphs[0].feature_dim) << "\n";
    }
    return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainFlags {
    std::optional<std::string> graphs;
    std::optional<std::string> test_graphs;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<double> lr;
    std::optional<int> heads;
    std::optional<int> feature_dim;
    std::optional<std::string> precision;
    bool params_only = false;
    bool quiet = false;
};

fs::path graph_file(const std::string& arg, const std::string& split) {
    fs::path p(arg);
    if (fs::is_directory(p)) {
        for (const char* ext : {".rag", ".json"}) {
            if (fs::exists(p / (split + ext))) return p / (split + ext);
        }
        throw IoError("no " + split + ".rag or " + split + ".json in " + p.string());
    }
    require_file(p, "graph file");
    return p;
}

template <typename T>
void train_typed(const PipelineConfig& cfg, const std::vector<RagGraph>& train_graphs,
                 const std::vector<RagGraph>* test_graphs, const fs::path& out, bool quiet) {
    TrainHooks hooks;
    if (!quiet) {
        hooks.on_epoch = [](const EpochRecord& e) {
            std::printf("epoch %3d  loss %.4f  train %.4f  val %.4f  %.1fs\n", e.epoch, e.loss, e.train_accuracy,
                        e.val_accuracy, e.seconds);
            std::fflush(stdout);
        };
        hooks.on_restart = [](int attempt, const AttemptRecord& a) {
            std::printf("restart %d: validation accuracy %.4f after %d epochs\n", attempt, a.last_val_accuracy,
                        a.epochs_run);
        };
    }
    auto result = train<T>(cfg.model, train_graphs, cfg.train, hooks);
    auto& report = result.report;
    if (test_graphs && !report.failed) report.test_accuracy = evaluate(result.best_model, *test_graphs).accuracy;
    write_file_atomic(out / "report.json", report.to_json());
    write_file_atomic(out / "train_log.csv", report.log_csv());
    if (report.failed) throw TrainingFailure(report.failure);
    save_checkpoint(result.best_model, out / "model.ckpt", {report.best_epoch, report.best_val_accuracy});
    std::cout << "best epoch " << report.best_epoch << " validation accuracy " << report.best_val_accuracy;
    if (report.test_accuracy) std::cout << " test accuracy " << *report.test_accuracy;
    std::cout << "\ncheckpoint " << (out / "model.ckpt").string() << "\n";
}

int run_train(const CommonFlags& cf, const TrainFlags& tf) {
    auto cfg = resolve(cf);
    if (tf.epochs) cfg.train.epochs = *tf.epochs;
    if (tf.batch_size) cfg.train.batch_size = *tf.batch_size;
    if (tf.lr) cfg.train.lr = *tf.lr;
    if (tf.heads) cfg.model.heads = *tf.heads;
    if (tf.feature_dim) {
        cfg.model.feature_dim = *tf.feature_dim;
        cfg.model_feature_dim_set = true;
    }
    if (tf.precision) cfg.precision = parse_precision(*tf.precision);
    cfg.validate();
    if (tf.params_only) {
        std::cout << count_parameters(cfg.model) << "\n";
        return 0;
    }
    const std::string source = tf.graphs ? *tf.graphs : cfg.output_dir;
    if (source.empty()) throw ArgumentError("train: pass --graphs FILE|DIR");
    const auto train_path = graph_file(source, "train");
    const auto train_graphs = import_graphs(train_path);
    if (train_graphs.empty()) throw ArgumentError("train: " + train_path.string() + " holds no graphs");
    if (cfg.model_feature_dim_set) {
        if (train_graphs[0].feature_dim != cfg.model.feature_dim) {
            throw ContractError("config feature_dim " + std::to_string(cfg.model.feature_dim) + " but " +
                                train_path.string() + " has feature dim " + std::to_string(train_graphs[0].feature_dim));
        }
    } else {
        cfg.model.feature_dim = train_graphs[0].feature_dim;
    }
    std::optional<std::vector<RagGraph>> test_graphs;
    if (tf.test_graphs) {
        test_graphs = import_graphs(graph_file(*tf.test_graphs, "test"));
    } else if (fs::is_directory(source) && (fs::exists(fs::path(source) / "test.rag") || fs::exists(fs::path(source) / "test.json"))) {
        test_graphs = import_graphs(graph_file(source, "test"));
    }
    const auto out = output_dir(cfg);
    if (!tf.quiet) {
        std::cout << describe(cfg.model) << ", " << count_parameters(cfg.model) << " parameters, " << train_graphs.size()
                  << " graphs, " << to_string(cfg.precision) << ", kernels " << to_string(kernels::active_isa()) << "\n";
    }
    const auto* test_ptr = test_graphs ? &*test_graphs : nullptr;
    if (cfg.precision == Precision::F32) {
        train_typed<float>(cfg, train_graphs, test_ptr, out, tf.quiet);
    } else {
        train_typed<double>(cfg, train_graphs, test_ptr, out, tf.quiet);
    }
    return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalFlags {
    std::string checkpoint;
    std::optional<std::string> graphs;
};

template <typename T>
EvalResult eval_typed(const fs::path& ckpt, const std::vector<RagGraph>& graphs) {
    const auto loaded = load_checkpoint<T>(ckpt);
    return evaluate(loaded.model, graphs);
}

int run_eval(const CommonFlags& cf, const EvalFlags& ef) {
    auto cfg = resolve(cf);
    require_file(ef.checkpoint, "checkpoint");
    const auto [model_cfg, width] = peek_checkpoint(ef.checkpoint);
    const std::string source = ef.graphs ? *ef.graphs : cfg.output_dir;
    if (source.empty()) throw ArgumentError("eval: pass --graphs FILE|DIR");
    const auto path = graph_file(source, "test");
    const auto graphs = import_graphs(path);
    if (graphs.empty()) throw ArgumentError("eval: " + path.string() + " holds no graphs");
    if (graphs[0].feature_dim != model_cfg.feature_dim) {
        throw ContractError("checkpoint expects feature dim " + std::to_string(model_cfg.feature_dim) + " but " +
                            path.string() + " has feature dim " + std::to_string(graphs[0].feature_dim));
    }
    const auto r = width == 4 ? eval_typed<float>(ef.checkpoint, graphs) : eval_typed<double>(ef.checkpoint, graphs);
    std::cout << "accuracy " << r.accuracy << " (" << r.correct << "/" << r.total << ")\n";
    if (!cfg.output_dir.empty()) {
        const auto out = output_dir(cfg);
        nlohmann::ordered_json j;
        j["checkpoint"] = ef.checkpoint;
        j["graphs"] = path.string();
        j["accuracy"] = r.accuracy;
        j["correct"] = r.correct;
        j["total"] = r.total;
        j["confusion"] = r.confusion;
        write_json(out / "eval.json", j);
        write_file_atomic(out / "confusion.csv", r.confusion_csv());
        write_file_atomic(out / "probabilities.csv", r.probabilities_csv());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Superpixel region-adjacency graphs and graph attention classifiers"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "ragnet 1.0");

    CommonFlags cf_seg, cf_build, cf_train, cf_eval;

    SegmentFlags sf;
    auto* seg = app.add_subcommand("segment", "Superpixel label maps and overlays");
    add_common(seg, cf_seg);
    seg->add_option("--image", sf.image, "Single PGM/PPM image");
    seg->add_option("--split", sf.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    seg->add_option("--target-k", sf.target_k, "Target number of superpixels");
    seg->add_option("--max-iters", sf.max_iters, "SLIC iterations");
    seg->add_option("--compactness", sf.compactness, "Compactness (first SLICO round, or fixed for SLIC)");
    seg->add_flag("--plain-slic", sf.plain_slic, "Fixed compactness instead of SLICO");
    seg->add_option("--overlays", sf.overlays, "Write PNG overlays for the first N images of each split");
    seg->add_option("--overlay-scale", sf.scale, "Integer upscaling of overlays");
    seg->add_flag("--draw-graph", sf.draw_graph, "Draw RAG edges on overlays");

    BuildFlags bf;
    auto* build = app.add_subcommand("build-graphs", "Region adjacency graphs from label maps");
    add_common(build, cf_build);
    build->add_option("--image", bf.image, "Single PGM/PPM image");
    build->add_option("--segments", bf.segments, "Label map file (--image) or directory (default: --out)");
    build->add_option("--split", bf.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    build->add_option("--format", bf.format, "rag1 or json")->check(CLI::IsMember({"rag1", "json"}));
    build->add_flag("--no-self-loops", bf.no_self_loops, "Omit self-loops");

    TrainFlags tf;
    auto* tr = app.add_subcommand("train", "Train a GAT classifier");
    add_common(tr, cf_train);
    tr->add_option("--graphs", tf.graphs, "Graph file or directory with train.rag");
    tr->add_option("--test-graphs", tf.test_graphs, "Test graphs evaluated with the best model");
    tr->add_option("--epochs", tf.epochs);
    tr->add_option("--batch-size", tf.batch_size);
    tr->add_option("--lr", tf.lr);
    tr->add_option("--heads", tf.heads);
    tr->add_option("--feature-dim", tf.feature_dim);
    tr->add_option("--precision", tf.precision, "f32 or f64");
    tr->add_flag("--params-only", tf.params_only, "Print the parameter count and exit");
    tr->add_flag("--quiet", tf.quiet, "No per-epoch output");

    EvalFlags ef;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(ev, cf_eval);
    ev->add_option("--checkpoint", ef.checkpoint)->required();
    ev->add_option("--graphs", ef.graphs, "Graph file or directory with test.rag");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (seg->parsed()) return run_segment(cf_seg, sf);
        if (build->parsed()) return run_build(cf_build, bf);
        if (tr->parsed()) return run_train(cf_train, tf);
        if (ev->parsed()) return run_eval(cf_eval, ef);
    } catch (const Error& e) {
        std::cerr << "ragnet: " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "ragnet: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
