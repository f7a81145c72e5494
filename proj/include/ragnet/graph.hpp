#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ragnet/image.hpp"
#include "ragnet/segmentation.hpp"

namespace ragnet {

struct Edge {
    std::int32_t source = 0;
    std::int32_t target = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
};

// Directed region adjacency graph. Edges are sorted (source, target) and
// duplicate-free; adjacency is symmetric and, by default, every node carries
// a self-loop.
struct RagGraph {
    int n_nodes = 0;
    int feature_dim = 0;
    std::vector<Edge> edges;
    std::vector<double> features;  // n_nodes x feature_dim
    std::optional<int> label;

    std::span<const double> node_features(int n) const {
        return {features.data() + static_cast<std::size_t>(n) * feature_dim, static_cast<std::size_t>(feature_dim)};
    }

    friend bool operator==(const RagGraph&, const RagGraph&) = default;
};

// Throws ArgumentError when any RagGraph invariant is violated.
void check_graph(const RagGraph& g, bool require_self_loops = true);

struct RagOptions {
    bool self_loops = true;
};

// Region adjacency over 4-neighbourhoods. Features: grayscale
// [mean, cx/w, cy/h]; RGB [mean R, mean G, mean B, cx/w, cy/h].
RagGraph build_rag(const Segmentation& seg, const SegmentStats& stats, RagOptions opts = {});

// Segmentation + stats + RAG in one call.
RagGraph image_to_graph(const Image& img, const SlicConfig& slic, RagOptions opts = {});

// Disjoint union of graphs with node ids offset per graph.
struct GraphBatch {
    int n_graphs = 0;
    int n_nodes = 0;
    int feature_dim = 0;
    std::vector<double> node_features;     // n_nodes x feature_dim
    std::vector<std::int32_t> edge_source;  // global node ids
    std::vector<std::int32_t> edge_target;
    std::vector<std::int32_t> graph_id;     // per node
    std::vector<std::int32_t> node_offset;  // n_graphs + 1 entries
    std::vector<std::int32_t> edge_offset;  // n_graphs + 1 entries
    std::vector<int> labels;                // per graph; -1 when unlabeled
};

GraphBatch make_batch(std::span<const RagGraph> graphs);
GraphBatch make_batch(std::span<const RagGraph* const> graphs);
std::vector<RagGraph> unbatch(const GraphBatch& batch);

// JSON: a single graph is {"n_nodes", "edges": [[s,t],...], "features":
// [[...],...], "label"}; a collection is {"format": "rag-json", "version": 1,
// "graphs": [...]}.
std::string graph_to_json(const RagGraph& g);
RagGraph graph_from_json(std::string_view text);
std::string graphs_to_json(std::span<const RagGraph> graphs);
std::vector<RagGraph> graphs_from_json(std::string_view text);

// "RAG1" little-endian binary container of one or more graphs.
std::vector<std::uint8_t> encode_graphs(std::span<const RagGraph> graphs);
std::vector<RagGraph> decode_graphs(std::span<const std::uint8_t> bytes);

void export_graph(const RagGraph& g, const std::filesystem::path& path);
RagGraph import_graph(const std::filesystem::path& path);
// Format chosen by extension: ".json" for JSON, anything else RAG1.
void export_graphs(std::span<const RagGraph> graphs, const std::filesystem::path& path);
std::vector<RagGraph> import_graphs(const std::filesystem::path& path);

// Boundary + graph overlay: segment borders darkened, RAG edges drawn between
// centroids, centroids marked. `scale` upsamples by pixel replication.
Rgb8Image render_overlay(const Image& img, const Segmentation& seg, const RagGraph* graph, int scale = 1);

}  // namespace ragnet
