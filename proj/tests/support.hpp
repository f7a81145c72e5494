#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "ragnet/gat.hpp"
#include "ragnet/graph.hpp"
#include "ragnet/image.hpp"
#include "ragnet/random.hpp"

namespace ragnet::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        Rng rng(static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)) ^ static_cast<std::uint64_t>(++counter));
        path_ = std::filesystem::temp_directory_path() /
                ("ragnet-" + tag + "-" + std::to_string(rng.next_u64() % 1000000007ULL));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Image random_image(Rng& rng, int w, int h, int channels) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = channels;
    img.data.resize(static_cast<std::size_t>(w) * h * channels);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform01());
    return img;
}

// Piecewise-constant image: a few random rectangles on a background.
inline Image blocky_image(Rng& rng, int w, int h, int channels, int n_rects) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = channels;
    img.data.assign(static_cast<std::size_t>(w) * h * channels, 0.1f);
    for (int r = 0; r < n_rects; ++r) {
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
        const int x1 = std::min(w, x0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(w))));
        const int y1 = std::min(h, y0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(h))));
        std::vector<float> colour(static_cast<std::size_t>(channels));
        for (auto& c : colour) c = static_cast<float>(rng.uniform01());
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                for (int c = 0; c < channels; ++c) img.at(x, y, c) = colour[static_cast<std::size_t>(c)];
            }
        }
    }
    return img;
}

// Symmetric random graph with sorted unique edges and (optionally) self-loops.
inline RagGraph random_graph(Rng& rng, int n_nodes, int feature_dim, double density, bool self_loops = true) {
    RagGraph g;
    g.n_nodes = n_nodes;
    g.feature_dim = feature_dim;
    for (int s = 0; s < n_nodes; ++s) {
        for (int t = s; t < n_nodes; ++t) {
            if (s == t) {
                if (self_loops) g.edges.push_back({s, s});
            } else if (rng.uniform01() < density) {
                g.edges.push_back({s, t});
                g.edges.push_back({t, s});
            }
        }
    }
    std::sort(g.edges.begin(), g.edges.end());
    g.features.resize(static_cast<std::size_t>(n_nodes) * feature_dim);
    for (auto& v : g.features) v = rng.uniform01();
    g.label = static_cast<int>(rng.below(10));
    return g;
}

// Dense reference for one attention head: adjacency matrix, full logit
// matrix, row-wise masked softmax over sources of each target.
inline std::vector<double> dense_gat_reference(const RagGraph& g, const std::vector<double>& x, std::size_t d_in,
                                               const GatLayerParams<double>& p, double eps) {
    const std::size_t n = static_cast<std::size_t>(g.n_nodes);
    const std::size_t d_out = p.f_weight.cols();
    const auto W = p.f_weight.data();
    const auto b = p.f_bias.data();
    const auto aw = p.a_weight.data();
    const double ab = p.a_bias.data()[0];
    std::vector<char> adj(n * n, 0);
    for (const auto& e : g.edges) adj[static_cast<std::size_t>(e.target) * n + static_cast<std::size_t>(e.source)] = 1;

    std::vector<double> logit(n * n, 0.0), value(n * n * d_out, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t s = 0; s < n; ++s) {
            std::vector<double> h(2 * d_in);
            for (std::size_t k = 0; k < d_in; ++k) {
                h[k] = x[s * d_in + k];
                h[d_in + k] = x[t * d_in + k];
            }
            double a = ab;
            for (std::size_t k = 0; k < 2 * d_in; ++k) a += aw[k] * h[k];
            logit[t * n + s] = a;
            for (std::size_t j = 0; j < d_out; ++j) {
                double y = b[j];
                for (std::size_t k = 0; k < 2 * d_in; ++k) y += h[k] * W[k * d_out + j];
                value[(t * n + s) * d_out + j] = std::max(0.0, y);
            }
        }
    }
    std::vector<double> out(n * d_out, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < n; ++s) {
            if (adj[t * n + s]) m = std::max(m, logit[t * n + s]);
        }
        double z = eps;
        for (std::size_t s = 0; s < n; ++s) {
            if (adj[t * n + s]) z += std::exp(logit[t * n + s] - m);
        }
        for (std::size_t s = 0; s < n; ++s) {
            if (!adj[t * n + s]) continue;
            const double w = std::exp(logit[t * n + s] - m) / z;
            for (std::size_t j = 0; j < d_out; ++j) out[t * d_out + j] += w * value[(t * n + s) * d_out + j];
        }
    }
    return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return a.size() == b.size() ? m : std::numeric_limits<double>::infinity();
}

// Random relabeling of nodes; edges re-sorted, features permuted.
inline RagGraph permute_graph(const RagGraph& g, const std::vector<int>& perm) {
    RagGraph out = g;
    const auto fd = static_cast<std::size_t>(g.feature_dim);
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        out.edges[i] = {perm[static_cast<std::size_t>(g.edges[i].source)], perm[static_cast<std::size_t>(g.edges[i].target)]};
    }
    std::sort(out.edges.begin(), out.edges.end());
    for (int v = 0; v < g.n_nodes; ++v) {
        std::copy_n(g.features.begin() + static_cast<std::ptrdiff_t>(v * fd), fd,
                    out.features.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(perm[static_cast<std::size_t>(v)]) * fd));
    }
    return out;
}

}  // namespace ragnet::testing
