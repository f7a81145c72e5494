#include "ragnet/graph.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "ragnet/error.hpp"
#include "ragnet/fileio.hpp"

namespace ragnet {

using nlohmann::json;

void check_graph(const RagGraph& g, bool require_self_loops) {
    if (g.n_nodes < 1) throw ArgumentError("graph: n_nodes must be >= 1");
    if (g.feature_dim < 1) throw ArgumentError("graph: feature_dim must be >= 1");
    if (g.features.size() != static_cast<std::size_t>(g.n_nodes) * g.feature_dim) {
        throw ArgumentError("graph: features hold " + std::to_string(g.features.size()) + " values, expected " +
                            std::to_string(static_cast<std::size_t>(g.n_nodes) * g.feature_dim));
    }
    std::set<Edge> seen;
    for (const auto& e : g.edges) {
        if (e.source < 0 || e.source >= g.n_nodes || e.target < 0 || e.target >= g.n_nodes) {
            throw ArgumentError("graph: edge (" + std::to_string(e.source) + "," + std::to_string(e.target) +
                                ") references a node outside [0, " + std::to_string(g.n_nodes) + ")");
        }
        if (!seen.insert(e).second) {
            throw ArgumentError("graph: duplicate edge (" + std::to_string(e.source) + "," + std::to_string(e.target) + ")");
        }
    }
    for (const auto& e : g.edges) {
        if (e.source != e.target && !seen.count({e.target, e.source})) {
            throw ArgumentError("graph: edge (" + std::to_string(e.source) + "," + std::to_string(e.target) +
                                ") has no reverse");
        }
    }
    if (require_self_loops) {
        for (int n = 0; n < g.n_nodes; ++n) {
            if (!seen.count({n, n})) throw ArgumentError("graph: node " + std::to_string(n) + " lacks a self-loop");
        }
    }
    if (g.label && (*g.label < 0)) throw ArgumentError("graph: negative label");
}

RagGraph build_rag(const Segmentation& seg, const SegmentStats& stats, RagOptions opts) {
    if (stats.n_segments != seg.n_segments || stats.count.size() != static_cast<std::size_t>(seg.n_segments)) {
        throw ArgumentError("build_rag: stats describe " + std::to_string(stats.n_segments) + " segments, segmentation has " +
                            std::to_string(seg.n_segments));
    }
    std::int64_t total = 0;
    for (auto c : stats.count) total += c;
    if (total != static_cast<std::int64_t>(seg.labels.size())) {
        throw ArgumentError("build_rag: stats pixel counts do not sum to the segmentation size");
    }
    if (stats.channels != 1 && stats.channels != 3) throw ArgumentError("build_rag: stats must have 1 or 3 channels");

    RagGraph g;
    g.n_nodes = seg.n_segments;
    g.feature_dim = stats.channels + 2;
    const int w = seg.width, h = seg.height;

    std::vector<Edge> pairs;
    auto mark = [&](std::int32_t a, std::int32_t b) {
        pairs.push_back({a, b});
        pairs.push_back({b, a});
    };
    // Right and down neighbours only; comparisons past the last column/row are skipped.
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto s = seg.at(x, y);
            if (x + 1 < w && seg.at(x + 1, y) != s) mark(s, seg.at(x + 1, y));
            if (y + 1 < h && seg.at(x, y + 1) != s) mark(s, seg.at(x, y + 1));
        }
    }
    if (opts.self_loops) {
        for (int n = 0; n < g.n_nodes; ++n) pairs.push_back({n, n});
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    g.edges = std::move(pairs);

    g.features.resize(static_cast<std::size_t>(g.n_nodes) * g.feature_dim);
    for (int n = 0; n < g.n_nodes; ++n) {
        double* f = g.features.data() + static_cast<std::size_t>(n) * g.feature_dim;
        for (int c = 0; c < stats.channels; ++c) f[c] = stats.mean[static_cast<std::size_t>(n) * stats.channels + c];
        f[stats.channels] = stats.centroid_x[n] / w;
        f[stats.channels + 1] = stats.centroid_y[n] / h;
    }
    return g;
}

RagGraph image_to_graph(const Image& img, const SlicConfig& slic, RagOptions opts) {
    const auto seg = slic_segment(img, slic);
    return build_rag(seg, segment_stats(img, seg), opts);
}

GraphBatch make_batch(std::span<const RagGraph* const> graphs) {
    if (graphs.empty()) throw ArgumentError("make_batch: no graphs");
    GraphBatch b;
    b.n_graphs = static_cast<int>(graphs.size());
    b.feature_dim = graphs[0]->feature_dim;
    b.node_offset.push_back(0);
    b.edge_offset.push_back(0);
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const RagGraph& g = *graphs[gi];
        if (g.feature_dim != b.feature_dim) {
            throw ArgumentError("make_batch: graph " + std::to_string(gi) + " has feature dim " + std::to_string(g.feature_dim) +
                                ", batch has " + std::to_string(b.feature_dim));
        }
        const std::int32_t off = b.n_nodes;
        b.node_features.insert(b.node_features.end(), g.features.begin(), g.features.end());
        for (const auto& e : g.edges) {
            b.edge_source.push_back(e.source + off);
            b.edge_target.push_back(e.target + off);
        }
        b.graph_id.insert(b.graph_id.end(), static_cast<std::size_t>(g.n_nodes), static_cast<std::int32_t>(gi));
        b.n_nodes += g.n_nodes;
        b.node_offset.push_back(b.n_nodes);
        b.edge_offset.push_back(static_cast<std::int32_t>(b.edge_source.size()));
        b.labels.push_back(g.label.value_or(-1));
    }
    return b;
}

GraphBatch make_batch(std::span<const RagGraph> graphs) {
    std::vector<const RagGraph*> ptrs;
    ptrs.reserve(graphs.size());
    for (const auto& g : graphs) ptrs.push_back(&g);
    return make_batch(std::span<const RagGraph* const>(ptrs));
}

std::vector<RagGraph> unbatch(const GraphBatch& b) {
    std::vector<RagGraph> out(static_cast<std::size_t>(b.n_graphs));
    for (int gi = 0; gi < b.n_graphs; ++gi) {
        RagGraph& g = out[gi];
        const auto n0 = b.node_offset[gi], n1 = b.node_offset[gi + 1];
        g.n_nodes = n1 - n0;
        g.feature_dim = b.feature_dim;
        g.features.assign(b.node_features.begin() + static_cast<std::ptrdiff_t>(n0) * b.feature_dim,
                          b.node_features.begin() + static_cast<std::ptrdiff_t>(n1) * b.feature_dim);
        for (auto e = b.edge_offset[gi]; e < b.edge_offset[gi + 1]; ++e) {
            g.edges.push_back({b.edge_source[e] - n0, b.edge_target[e] - n0});
        }
        if (b.labels[gi] >= 0) g.label = b.labels[gi];
    }
    return out;
}

namespace {

json graph_json(const RagGraph& g) {
    json j;
    j["n_nodes"] = g.n_nodes;
    json edges = json::array();
    for (const auto& e : g.edges) edges.push_back({e.source, e.target});
    j["edges"] = std::move(edges);
    json feats = json::array();
    for (int n = 0; n < g.n_nodes; ++n) {
        const auto f = g.node_features(n);
        feats.push_back(std::vector<double>(f.begin(), f.end()));
    }
    j["features"] = std::move(feats);
    j["label"] = g.label ? json(*g.label) : json(nullptr);
    return j;
}

RagGraph graph_from(const json& j, const std::string& where) {
    auto fail = [&](const std::string& msg) -> void { throw FormatError("RAG JSON " + where + ": " + msg); };
    if (!j.is_object()) fail("expected an object");
    for (const char* key : {"n_nodes", "edges", "features"}) {
        if (!j.contains(key)) fail(std::string("missing field '") + key + "'");
    }
    RagGraph g;
    try {
        g.n_nodes = j.at("n_nodes").get<int>();
        for (const auto& e : j.at("edges")) {
            if (!e.is_array() || e.size() != 2) fail("edge entries must be [source, target] pairs");
            g.edges.push_back({e[0].get<std::int32_t>(), e[1].get<std::int32_t>()});
        }
        const auto& feats = j.at("features");
        if (!feats.is_array() || feats.size() != static_cast<std::size_t>(g.n_nodes)) fail("features must have one row per node");
        for (const auto& row : feats) {
            if (!row.is_array()) fail("feature rows must be arrays");
            if (g.feature_dim == 0) g.feature_dim = static_cast<int>(row.size());
            if (row.size() != static_cast<std::size_t>(g.feature_dim)) fail("feature rows differ in length");
            for (const auto& v : row) g.features.push_back(v.get<double>());
        }
        if (j.contains("label") && !j.at("label").is_null()) g.label = j.at("label").get<int>();
    } catch (const json::exception& e) {
        throw FormatError("RAG JSON " + where + ": " + e.what());
    }
    try {
        check_graph(g, false);
    } catch (const ArgumentError& e) {
        throw FormatError("RAG JSON " + where + ": " + e.what());
    }
    return g;
}

json parse_json(std::string_view text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError("RAG JSON: malformed at byte offset " + std::to_string(e.byte) + ": " + e.what());
    }
}

bool has_extension(const std::filesystem::path& p, const char* ext) { return p.extension() == ext; }

}  // namespace

std::string graph_to_json(const RagGraph& g) { return graph_json(g).dump(); }

RagGraph graph_from_json(std::string_view text) { return graph_from(parse_json(text), "graph"); }

std::string graphs_to_json(std::span<const RagGraph> graphs) {
    json j;
    j["format"] = "rag-json";
    j["version"] = 1;
    json arr = json::array();
    for (const auto& g : graphs) arr.push_back(graph_json(g));
    j["graphs"] = std::move(arr);
    return j.dump();
}

std::vector<RagGraph> graphs_from_json(std::string_view text) {
    const json j = parse_json(text);
    std::vector<RagGraph> out;
    if (j.is_object() && j.contains("graphs")) {
        if (j.value("format", "") != "rag-json") throw FormatError("RAG JSON: unknown collection format");
        std::size_t i = 0;
        for (const auto& g : j.at("graphs")) out.push_back(graph_from(g, "graph #" + std::to_string(i++)));
    } else {
        out.push_back(graph_from(j, "graph"));
    }
    return out;
}

std::vector<std::uint8_t> encode_graphs(std::span<const RagGraph> graphs) {
    ByteWriter w;
    w.put_magic("RAG1");
    w.put<std::uint32_t>(1);  // version
    w.put<std::uint32_t>(static_cast<std::uint32_t>(graphs.size()));
    for (const auto& g : graphs) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(g.n_nodes));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(g.feature_dim));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(g.edges.size()));
        w.put<std::int32_t>(g.label.value_or(-1));
        for (const auto& e : g.edges) {
            w.put<std::int32_t>(e.source);
            w.put<std::int32_t>(e.target);
        }
        for (double v : g.features) w.put<double>(v);
    }
    return w.take();
}

std::vector<RagGraph> decode_graphs(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "RAG1");
    r.expect_magic("RAG1");
    const auto version = r.get<std::uint32_t>();
    if (version != 1) r.fail("unsupported version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    std::vector<RagGraph> out;
    out.reserve(std::min<std::size_t>(count, r.remaining() / 16));
    for (std::uint32_t i = 0; i < count; ++i) {
        RagGraph g;
        const std::size_t record_start = r.offset();
        g.n_nodes = static_cast<int>(r.get<std::uint32_t>());
        g.feature_dim = static_cast<int>(r.get<std::uint32_t>());
        const auto n_edges = r.get<std::uint32_t>();
        const auto label = r.get<std::int32_t>();
        if (label >= 0) g.label = label;
        r.need(static_cast<std::size_t>(n_edges) * 8);
        g.edges.resize(n_edges);
        for (auto& e : g.edges) {
            e.source = r.get<std::int32_t>();
            e.target = r.get<std::int32_t>();
        }
        const std::size_t n_feat = static_cast<std::size_t>(g.n_nodes) * static_cast<std::size_t>(g.feature_dim);
        r.need(n_feat * 8);
        g.features.resize(n_feat);
        for (auto& v : g.features) v = r.get<double>();
        try {
            check_graph(g, false);
        } catch (const ArgumentError& e) {
            throw FormatError("RAG1: graph #" + std::to_string(i) + " starting at byte offset " +
                              std::to_string(record_start) + ": " + e.what());
        }
        out.push_back(std::move(g));
    }
    if (!r.done()) r.fail("trailing bytes after " + std::to_string(count) + " graphs");
    return out;
}

void export_graphs(std::span<const RagGraph> graphs, const std::filesystem::path& path) {
    if (has_extension(path, ".json")) {
        write_file_atomic(path, graphs_to_json(graphs));
    } else {
        write_file_atomic(path, encode_graphs(graphs));
    }
}

std::vector<RagGraph> import_graphs(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        if (has_extension(path, ".json")) {
            return graphs_from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        }
        return decode_graphs(bytes);
    } catch (const LengthError& e) {
        throw LengthError(std::string(e.what()) + " [" + path.string() + "]");
    } catch (const FormatError& e) {
        throw FormatError(std::string(e.what()) + " [" + path.string() + "]");
    }
}

void export_graph(const RagGraph& g, const std::filesystem::path& path) {
    if (has_extension(path, ".json")) {
        write_file_atomic(path, graph_to_json(g));
    } else {
        export_graphs(std::span(&g, 1), path);
    }
}

RagGraph import_graph(const std::filesystem::path& path) {
    auto graphs = import_graphs(path);
    if (graphs.size() != 1) {
        throw FormatError(path.string() + ": expected exactly one graph, found " + std::to_string(graphs.size()));
    }
    return std::move(graphs.front());
}

Rgb8Image render_overlay(const Image& img, const Segmentation& seg, const RagGraph* graph, int scale) {
    if (scale < 1) throw ArgumentError("render_overlay: scale must be >= 1");
    if (img.width != seg.width || img.height != seg.height) throw ArgumentError("render_overlay: image/segmentation size mismatch");
    const Rgb8Image base = to_rgb8(img);
    Rgb8Image out;
    out.width = img.width * scale;
    out.height = img.height * scale;
    out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    auto put = [&](int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (x < 0 || y < 0 || x >= out.width || y >= out.height) return;
        auto* p = &out.rgb[(static_cast<std::size_t>(y) * out.width + x) * 3];
        p[0] = r;
        p[1] = g;
        p[2] = b;
    };
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            const auto* p = &base.rgb[(static_cast<std::size_t>(y / scale) * img.width + x / scale) * 3];
            put(x, y, p[0], p[1], p[2]);
        }
    }
    // Boundary pixels: label differs from the right or lower neighbour.
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const auto s = seg.at(x, y);
            const bool edge = (x + 1 < img.width && seg.at(x + 1, y) != s) || (y + 1 < img.height && seg.at(x, y + 1) != s);
            if (!edge) continue;
            for (int dy = 0; dy < scale; ++dy) {
                for (int dx = 0; dx < scale; ++dx) put(x * scale + dx, y * scale + dy, 220, 40, 40);
            }
        }
    }
    if (graph) {
        const int d = graph->feature_dim;
        auto centre = [&](int n) {
            const auto f = graph->node_features(n);
            return std::pair<double, double>((f[d - 2] * img.width + 0.5) * scale, (f[d - 1] * img.height + 0.5) * scale);
        };
        for (const auto& e : graph->edges) {
            if (e.source >= e.target) continue;
            auto [x0, y0] = centre(e.source);
            auto [x1, y1] = centre(e.target);
            const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
            for (int i = 0; i <= steps; ++i) {
                const double t = static_cast<double>(i) / steps;
                put(static_cast<int>(x0 + t * (x1 - x0)), static_cast<int>(y0 + t * (y1 - y0)), 250, 210, 30);
            }
        }
        for (int n = 0; n < graph->n_nodes; ++n) {
            auto [cx, cy] = centre(n);
            const int r = std::max(0, scale / 3);
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) put(static_cast<int>(cx) + dx, static_cast<int>(cy) + dy, 40, 200, 60);
            }
        }
    }
    return out;
}

}  // namespace ragnet
