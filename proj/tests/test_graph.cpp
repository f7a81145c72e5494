#include <doctest.h>

#include <set>

#include "ragnet/error.hpp"
#include "ragnet/fileio.hpp"
#include "ragnet/graph.hpp"
#include "support.hpp"

using namespace ragnet;

namespace {

Segmentation make_seg(int w, int h, std::vector<std::int32_t> labels) {
    return relabel_connected(labels, w, h, 1);
}

Image gray(int w, int h, std::vector<float> v) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = 1;
    img.data = std::move(v);
    return img;
}

std::set<std::pair<int, int>> brute_force_edges(const Segmentation& seg, bool self_loops) {
    std::set<std::pair<int, int>> out;
    for (int y = 0; y < seg.height; ++y) {
        for (int x = 0; x < seg.width; ++x) {
            const int a = seg.at(x, y);
            if (self_loops) out.insert({a, a});
            if (x + 1 < seg.width && seg.at(x + 1, y) != a) {
                out.insert({a, seg.at(x + 1, y)});
                out.insert({seg.at(x + 1, y), a});
            }
            if (y + 1 < seg.height && seg.at(x, y + 1) != a) {
                out.insert({a, seg.at(x, y + 1)});
                out.insert({seg.at(x, y + 1), a});
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("rag: 2x2 image with four single-pixel segments") {
    const auto seg = make_seg(2, 2, {0, 1, 2, 3});
    const auto img = gray(2, 2, {0.0f, 0.25f, 0.5f, 1.0f});
    const auto g = build_rag(seg, segment_stats(img, seg));
    CHECK(g.n_nodes == 4);
    CHECK(g.feature_dim == 3);
    const std::vector<Edge> expect = {{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}, {1, 3},
                                      {2, 0}, {2, 2}, {2, 3}, {3, 1}, {3, 2}, {3, 3}};
    CHECK(g.edges == expect);
    const std::vector<double> features = {0.0, 0.0, 0.0, 0.25, 0.5, 0.0, 0.5, 0.0, 0.5, 1.0, 0.5, 0.5};
    CHECK(g.features == features);
    CHECK_FALSE(g.label.has_value());
    CHECK_NOTHROW(check_graph(g));

    const auto no_loops = build_rag(seg, segment_stats(img, seg), {false});
    CHECK(no_loops.edges.size() == 8);
    CHECK_NOTHROW(check_graph(no_loops, false));
}

TEST_CASE("rag: single segment is one node with a self-loop") {
    const auto seg = make_seg(5, 4, std::vector<std::int32_t>(20, 3));
    Rng rng(1);
    const auto img = testing::random_image(rng, 5, 4, 3);
    const auto g = build_rag(seg, segment_stats(img, seg));
    CHECK(g.n_nodes == 1);
    CHECK(g.feature_dim == 5);
    CHECK(g.edges == std::vector<Edge>{{0, 0}});
    CHECK(g.features[3] == doctest::Approx(2.0 / 5.0));
    CHECK(g.features[4] == doctest::Approx(1.5 / 4.0));
}

TEST_CASE("rag: quadrants connect only along shared sides") {
    std::vector<std::int32_t> labels(100);
    for (int y = 0; y < 10; ++y) {
        for (int x = 0; x < 10; ++x) labels[static_cast<std::size_t>(y * 10 + x)] = (y >= 5) * 2 + (x >= 5);
    }
    const auto seg = make_seg(10, 10, labels);
    const auto g = build_rag(seg, segment_stats(gray(10, 10, std::vector<float>(100, 0.5f)), seg));
    CHECK(g.n_nodes == 4);
    CHECK(g.edges.size() == 12);
    const std::set<Edge> edges(g.edges.begin(), g.edges.end());
    CHECK(edges.count({0, 3}) == 0);
    CHECK(edges.count({1, 2}) == 0);
    CHECK(edges.count({0, 1}) == 1);
}

TEST_CASE("rag: edge sets match brute force on random label maps") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const int w = 1 + static_cast<int>(rng.below(16));
        const int h = 1 + static_cast<int>(rng.below(16));
        const auto k = 1 + rng.below(6);
        std::vector<std::int32_t> raw(static_cast<std::size_t>(w * h));
        for (auto& v : raw) v = static_cast<std::int32_t>(rng.below(k));
        const auto seg = make_seg(w, h, raw);
        const auto img = testing::random_image(rng, w, h, 1);
        const bool loops = trial % 2 == 0;
        const auto g = build_rag(seg, segment_stats(img, seg), {loops});
        std::set<std::pair<int, int>> got;
        for (const auto& e : g.edges) got.insert({e.source, e.target});
        CHECK(got == brute_force_edges(seg, loops));
        CHECK(std::is_sorted(g.edges.begin(), g.edges.end()));
        CHECK(got.size() == g.edges.size());
        CHECK_NOTHROW(check_graph(g, loops));
    }
}

TEST_CASE("rag: image_to_graph on RGB yields feature dim 5 and a symmetric graph") {
    Rng rng(2);
    SlicConfig cfg;
    cfg.target_k = 20;
    const auto g = image_to_graph(testing::blocky_image(rng, 32, 32, 3, 4), cfg);
    CHECK(g.feature_dim == 5);
    const std::set<Edge> edges(g.edges.begin(), g.edges.end());
    for (const auto& e : g.edges) CHECK(edges.count({e.target, e.source}) == 1);
    for (double v : g.features) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("check_graph: detects broken invariants") {
    Rng rng(3);
    auto g = testing::random_graph(rng, 5, 3, 0.4);
    CHECK_NOTHROW(check_graph(g));
    auto asym = g;
    asym.edges.push_back({0, 4});
    asym.edges.erase(std::unique(asym.edges.begin(), asym.edges.end()), asym.edges.end());
    std::sort(asym.edges.begin(), asym.edges.end());
    if (std::count(g.edges.begin(), g.edges.end(), Edge{4, 0}) == 0) CHECK_THROWS_AS(check_graph(asym), ArgumentError);
    auto out_of_range = g;
    out_of_range.edges.push_back({5, 5});
    CHECK_THROWS_AS(check_graph(out_of_range), ArgumentError);
    auto short_features = g;
    short_features.features.pop_back();
    CHECK_THROWS_AS(check_graph(short_features), ArgumentError);
    auto missing_loop = g;
    missing_loop.edges.erase(missing_loop.edges.begin());
    CHECK_THROWS_AS(check_graph(missing_loop), ArgumentError);
}

TEST_CASE("batch: offsets, global ids and round trip") {
    Rng rng(12);
    std::vector<RagGraph> graphs;
    for (int i = 0; i < 5; ++i) graphs.push_back(testing::random_graph(rng, 1 + static_cast<int>(rng.below(9)), 3, 0.3));
    graphs[2].label.reset();
    const auto b = make_batch(graphs);
    CHECK(b.n_graphs == 5);
    CHECK(b.node_offset.front() == 0);
    CHECK(b.node_offset.back() == b.n_nodes);
    CHECK(b.edge_offset.back() == static_cast<int>(b.edge_source.size()));
    CHECK(b.labels[2] == -1);
    for (int gi = 0; gi < 5; ++gi) {
        for (int e = b.edge_offset[gi]; e < b.edge_offset[gi + 1]; ++e) {
            CHECK(b.edge_source[static_cast<std::size_t>(e)] >= b.node_offset[gi]);
            CHECK(b.edge_target[static_cast<std::size_t>(e)] < b.node_offset[gi + 1]);
        }
        for (int n = b.node_offset[gi]; n < b.node_offset[gi + 1]; ++n) CHECK(b.graph_id[static_cast<std::size_t>(n)] == gi);
    }
    CHECK(unbatch(b) == graphs);
}

TEST_CASE("batch: mixed feature dims and empty input") {
    Rng rng(1);
    std::vector<RagGraph> graphs = {testing::random_graph(rng, 3, 3, 0.5), testing::random_graph(rng, 3, 5, 0.5)};
    CHECK_THROWS_AS(make_batch(graphs), ArgumentError);
    CHECK_THROWS_AS(make_batch(std::span<const RagGraph>{}), ArgumentError);
}

TEST_CASE("formats: JSON and RAG1 round trips are bitwise lossless") {
    Rng rng(21);
    std::vector<RagGraph> graphs;
    for (int i = 0; i < 8; ++i) {
        auto g = testing::random_graph(rng, 1 + static_cast<int>(rng.below(12)), i % 2 ? 5 : 3, 0.3, i != 3);
        for (auto& v : g.features) v = rng.uniform01() / 3.0;  // non-terminating binary fractions
        if (i == 5) g.label.reset();
        graphs.push_back(g);
    }
    CHECK(graphs_from_json(graphs_to_json(graphs)) == graphs);
    CHECK(decode_graphs(encode_graphs(graphs)) == graphs);
    CHECK(graph_from_json(graph_to_json(graphs[0])) == graphs[0]);

    testing::TempDir dir("formats");
    export_graphs(graphs, dir / "g.json");
    export_graphs(graphs, dir / "g.rag");
    CHECK(import_graphs(dir / "g.json") == graphs);
    CHECK(import_graphs(dir / "g.rag") == graphs);
    export_graph(graphs[1], dir / "one.rag");
    CHECK(import_graph(dir / "one.rag") == graphs[1]);
    export_graphs(graphs, dir / "again.rag");
    CHECK(read_file(dir / "again.rag") == read_file(dir / "g.rag"));
}

TEST_CASE("formats: corrupt inputs") {
    Rng rng(5);
    const std::vector<RagGraph> graphs = {testing::random_graph(rng, 4, 3, 0.5)};
    auto bytes = encode_graphs(graphs);
    auto bad = bytes;
    bad[1] = 'X';
    CHECK_THROWS_AS(decode_graphs(bad), FormatError);
    CHECK_THROWS_AS(decode_graphs(std::span(bytes).first(bytes.size() - 1)), LengthError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_graphs(trailing), FormatError);
    CHECK_THROWS_AS(graphs_from_json("{\"format\": \"rag-json\", \"version\": 1, \"graphs\": [{]}"), FormatError);
    CHECK_THROWS_AS(graphs_from_json("{\"format\": \"other\", \"version\": 1, \"graphs\": []}"), FormatError);
    CHECK_THROWS_AS(import_graphs("/nonexistent/ragnet.rag"), IoError);
}

TEST_CASE("overlay: same size as the input, scaled on request") {
    Rng rng(8);
    const auto img = testing::blocky_image(rng, 28, 20, 1, 3);
    SlicConfig cfg;
    cfg.target_k = 10;
    const auto seg = slic_segment(img, cfg);
    const auto g = build_rag(seg, segment_stats(img, seg));
    const auto plain = render_overlay(img, seg, nullptr);
    CHECK(plain.width == 28);
    CHECK(plain.height == 20);
    CHECK(plain.rgb.size() == 28u * 20u * 3u);
    const auto big = render_overlay(img, seg, &g, 3);
    CHECK(big.width == 84);
    CHECK(big.height == 60);
    const auto png = encode_png(plain);
    REQUIRE(png.size() > 24);
    CHECK(png[1] == 'P');
    // IHDR width/height, big-endian.
    CHECK(png[19] == 28);
    CHECK(png[23] == 20);
}
