#include "ragnet/gat.hpp"

#include <cmath>
#include <sstream>

#include "ragnet/error.hpp"
#include "ragnet/fileio.hpp"
#include "ragnet/random.hpp"

namespace ragnet {

using nd::Tensor;

void GatModelConfig::validate() const {
    if (heads < 1) throw ArgumentError("model config: heads must be >= 1");
    if (layer_sizes.empty()) throw ArgumentError("model config: layer_sizes must not be empty");
    if (mlp_sizes.empty()) throw ArgumentError("model config: mlp_sizes must not be empty");
    for (int s : layer_sizes) {
        if (s < 1) throw ArgumentError("model config: layer sizes must be positive");
    }
    for (int s : mlp_sizes) {
        if (s < 1) throw ArgumentError("model config: MLP sizes must be positive");
    }
    if (feature_dim < 1) throw ArgumentError("model config: feature_dim must be positive");
    if (!(attention_eps >= 0.0)) throw ArgumentError("model config: attention_eps must be >= 0");
}

std::string describe(const GatModelConfig& cfg) {
    std::ostringstream os;
    os << cfg.heads << "-head GAT [";
    for (std::size_t i = 0; i < cfg.layer_sizes.size(); ++i) os << (i ? "," : "") << cfg.layer_sizes[i];
    os << "] MLP [";
    for (std::size_t i = 0; i < cfg.mlp_sizes.size(); ++i) os << (i ? "," : "") << cfg.mlp_sizes[i];
    os << "] features " << cfg.feature_dim;
    return os.str();
}

std::int64_t count_parameters(const GatModelConfig& cfg) {
    cfg.validate();
    std::int64_t total = 0;
    std::int64_t d_in = cfg.feature_dim;
    for (int d_out : cfg.layer_sizes) {
        total += cfg.heads * ((2 * d_in * d_out + d_out) + (2 * d_in + 1));
        d_in = static_cast<std::int64_t>(cfg.heads) * d_out;
    }
    for (int width : cfg.mlp_sizes) {
        total += d_in * width + width;
        d_in = width;
    }
    return total;
}

GraphTopology GraphTopology::from_batch(const GraphBatch& batch) {
    GraphTopology t;
    t.source = nd::make_index(batch.edge_source);
    t.target = nd::make_index(batch.edge_target);
    t.graph_id = nd::make_index(batch.graph_id);
    t.n_nodes = static_cast<std::size_t>(batch.n_nodes);
    t.n_graphs = static_cast<std::size_t>(batch.n_graphs);
    return t;
}

template <typename T>
Tensor<T> batch_features(const GraphBatch& batch) {
    std::vector<T> values(batch.node_features.begin(), batch.node_features.end());
    return Tensor<T>::from({static_cast<std::size_t>(batch.n_nodes), static_cast<std::size_t>(batch.feature_dim)},
                           std::move(values));
}

template <typename T>
Tensor<T> gat_layer_forward(const GraphTopology& topo, const Tensor<T>& x, const GatLayerParams<T>& p, T eps,
                            const GatLayerOptions& opts, LayerTrace<T>* trace) {
    const std::size_t d = x.cols();
    if (x.rows() != topo.n_nodes) {
        throw ArgumentError("gat_layer: features have " + std::to_string(x.rows()) + " rows for " +
                            std::to_string(topo.n_nodes) + " nodes");
    }
    if (p.f_weight.rows() != 2 * d || p.a_weight.rows() != 2 * d || p.a_weight.cols() != 1 ||
        p.f_bias.numel() != p.f_weight.cols() || p.a_bias.numel() != 1) {
        throw ArgumentError("gat_layer: parameters expect input dim " + std::to_string(p.f_weight.rows() / 2) +
                            ", features have " + std::to_string(d));
    }
    const std::size_t n = topo.n_nodes;
    if (eps == T{0}) {
        std::vector<char> has_in(n, 0);
        for (auto t : *topo.target) has_in[static_cast<std::size_t>(t)] = 1;
        for (std::size_t i = 0; i < n; ++i) {
            if (!has_in[i]) {
                throw ContractError("gat_layer: node " + std::to_string(i) +
                                    " has no incoming edge and eps = 0 (attention normaliser would divide by zero)");
            }
        }
    }

    Tensor<T> y;
    Tensor<T> logits;
    if (opts.transform == EdgeTransform::ProjectThenGather) {
        // W^T (x_s || x_t) = W_src^T x_s + W_tgt^T x_t: project nodes once, then gather per edge.
        const auto w_src = nd::slice_rows(p.f_weight, 0, d);
        const auto w_tgt = nd::slice_rows(p.f_weight, d, 2 * d);
        const auto a_src = nd::slice_rows(p.a_weight, 0, d);
        const auto a_tgt = nd::slice_rows(p.a_weight, d, 2 * d);
        const auto pre = nd::add(nd::gather_rows(nd::matmul(x, w_src), topo.source),
                                 nd::gather_rows(nd::matmul(x, w_tgt), topo.target));
        y = nd::relu(nd::add_row(pre, p.f_bias));
        logits = nd::add_row(nd::add(nd::gather_rows(nd::matmul(x, a_src), topo.source),
                                     nd::gather_rows(nd::matmul(x, a_tgt), topo.target)),
                             p.a_bias);
    } else {
        const Tensor<T> halves[] = {nd::gather_rows(x, topo.source), nd::gather_rows(x, topo.target)};
        const auto h = nd::concat_cols<T>(halves);
        y = nd::relu(nd::add_row(nd::matmul(h, p.f_weight), p.f_bias));
        logits = nd::add_row(nd::matmul(h, p.a_weight), p.a_bias);
    }
    if (opts.logit_offset != 0.0) logits = nd::add_scalar(logits, static_cast<T>(opts.logit_offset));

    // The shift cancels in the normalisation, so it carries no gradient.
    const std::size_t n_edges = topo.source->size();
    Tensor<T> base;
    if (opts.shift == LogitShift::PerTargetMax || n_edges == 0) {
        base = nd::gather_rows(nd::detach(nd::segment_max(logits, topo.target, n)), topo.target);
    } else {
        base = nd::broadcast_scalar(nd::detach(nd::max_all(logits)), n_edges);
    }
    const auto alpha_exp = nd::exp(nd::sub(logits, base));
    const auto alpha_sum = nd::add_scalar(nd::segment_sum(alpha_exp, topo.target, n), eps);
    const auto out = nd::div_col(nd::segment_sum(nd::mul_col(y, alpha_exp), topo.target, n), alpha_sum);

    if (trace) {
        trace->attention.resize(n_edges);
        const auto ex = alpha_exp.data();
        const auto sums = alpha_sum.data();
        for (std::size_t e = 0; e < n_edges; ++e) {
            trace->attention[e] = ex[e] / sums[static_cast<std::size_t>((*topo.target)[e])];
        }
    }
    return out;
}

template <typename T>
Tensor<T> multi_head_forward(const GraphTopology& topo, const Tensor<T>& x, std::span<const GatLayerParams<T>> heads,
                             T eps, const GatLayerOptions& opts) {
    if (heads.empty()) throw ArgumentError("multi_head: no heads");
    for (const auto& h : heads) {
        if (h.f_weight.shape() != heads[0].f_weight.shape() || h.a_weight.shape() != heads[0].a_weight.shape()) {
            throw ArgumentError("multi_head: heads have different shapes " + nd::shape_str(heads[0].f_weight.shape()) +
                                " vs " + nd::shape_str(h.f_weight.shape()));
        }
    }
    if (heads.size() == 1) return gat_layer_forward(topo, x, heads[0], eps, opts);
    std::vector<Tensor<T>> outs;
    outs.reserve(heads.size());
    for (const auto& h : heads) outs.push_back(gat_layer_forward(topo, x, h, eps, opts));
    return nd::concat_cols<T>(outs);
}

namespace {

template <typename T>
Tensor<T> glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> w(fan_in * fan_out);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
    return Tensor<T>::from({fan_in, fan_out}, std::move(w), true);
}

template <typename T>
Tensor<T> zeros_param(std::size_t rows, std::size_t cols) {
    return Tensor<T>::zeros({rows, cols}, true);
}

template <typename T>
Tensor<T> copy_param(const Tensor<T>& t) {
    return Tensor<T>::from(t.shape(), std::vector<T>(t.data().begin(), t.data().end()), true);
}

}  // namespace

template <typename T>
GatModel<T> GatModel<T>::init(const GatModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    GatModel m;
    m.cfg_ = cfg;
    Rng rng(seed);
    std::size_t d_in = static_cast<std::size_t>(cfg.feature_dim);
    for (int width : cfg.layer_sizes) {
        const auto d_out = static_cast<std::size_t>(width);
        std::vector<GatLayerParams<T>> heads;
        for (int h = 0; h < cfg.heads; ++h) {
            GatLayerParams<T> p;
            p.f_weight = glorot<T>(2 * d_in, d_out, rng);
            p.f_bias = zeros_param<T>(1, d_out);
            p.a_weight = glorot<T>(2 * d_in, 1, rng);
            p.a_bias = zeros_param<T>(1, 1);
            heads.push_back(std::move(p));
        }
        m.layers_.push_back(std::move(heads));
        d_in = static_cast<std::size_t>(cfg.heads) * d_out;
    }
    for (int width : cfg.mlp_sizes) {
        const auto d_out = static_cast<std::size_t>(width);
        m.mlp_.push_back({glorot<T>(d_in, d_out, rng), zeros_param<T>(1, d_out)});
        d_in = d_out;
    }
    return m;
}

template <typename T>
Tensor<T> GatModel<T>::forward(const GraphBatch& batch, const GatLayerOptions& opts) const {
    if (batch.n_graphs == 0 || batch.n_nodes == 0) throw ArgumentError("model forward: empty batch");
    if (batch.feature_dim != cfg_.feature_dim) {
        throw ContractError("model forward: batch feature dim " + std::to_string(batch.feature_dim) +
                            " does not match model feature dim " + std::to_string(cfg_.feature_dim));
    }
    return forward(GraphTopology::from_batch(batch), batch_features<T>(batch), opts);
}

template <typename T>
Tensor<T> GatModel<T>::forward(const GraphTopology& topo, const Tensor<T>& features, const GatLayerOptions& opts) const {
    if (topo.n_graphs == 0 || topo.n_nodes == 0) throw ArgumentError("model forward: empty batch");
    if (features.cols() != static_cast<std::size_t>(cfg_.feature_dim)) {
        throw ContractError("model forward: feature dim " + std::to_string(features.cols()) +
                            " does not match model feature dim " + std::to_string(cfg_.feature_dim));
    }
    const T eps = static_cast<T>(cfg_.attention_eps);
    Tensor<T> h = features;
    for (const auto& heads : layers_) h = multi_head_forward<T>(topo, h, heads, eps, opts);
    h = nd::segment_sum(h, topo.graph_id, topo.n_graphs);
    for (std::size_t i = 0; i < mlp_.size(); ++i) {
        h = nd::add_row(nd::matmul(h, mlp_[i].weight), mlp_[i].bias);
        h = i + 1 < mlp_.size() ? nd::relu(h) : nd::softmax_rows(h);
    }
    return h;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> GatModel<T>::named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        for (std::size_t h = 0; h < layers_[l].size(); ++h) {
            const std::string prefix = "gat." + std::to_string(l) + "." + std::to_string(h) + ".";
            const auto& p = layers_[l][h];
            out.emplace_back(prefix + "f_weight", p.f_weight);
            out.emplace_back(prefix + "f_bias", p.f_bias);
            out.emplace_back(prefix + "a_weight", p.a_weight);
            out.emplace_back(prefix + "a_bias", p.a_bias);
        }
    }
    for (std::size_t i = 0; i < mlp_.size(); ++i) {
        out.emplace_back("mlp." + std::to_string(i) + ".weight", mlp_[i].weight);
        out.emplace_back("mlp." + std::to_string(i) + ".bias", mlp_[i].bias);
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> GatModel<T>::parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

template <typename T>
std::int64_t GatModel<T>::parameter_count() const {
    std::int64_t total = 0;
    for (const auto& t : parameters()) total += static_cast<std::int64_t>(t.numel());
    return total;
}

template <typename T>
GatModel<T> GatModel<T>::clone() const {
    GatModel m;
    m.cfg_ = cfg_;
    for (const auto& heads : layers_) {
        std::vector<GatLayerParams<T>> copy;
        for (const auto& p : heads) {
            copy.push_back({copy_param(p.f_weight), copy_param(p.f_bias), copy_param(p.a_weight), copy_param(p.a_bias)});
        }
        m.layers_.push_back(std::move(copy));
    }
    for (const auto& l : mlp_) m.mlp_.push_back({copy_param(l.weight), copy_param(l.bias)});
    return m;
}

template <typename T>
void GatModel<T>::copy_values_from(const GatModel& other) {
    if (!(other.cfg_ == cfg_)) throw ContractError("copy_values_from: model configs differ");
    auto dst = parameters();
    const auto src = other.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        std::copy(src[i].data().begin(), src[i].data().end(), dst[i].mutable_data().begin());
    }
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr std::string_view kCkptMagic = "GATCKPT1";
constexpr std::uint32_t kCkptVersion = 1;

void write_config(ByteWriter& w, const GatModelConfig& c) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.heads));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.layer_sizes.size()));
    for (int s : c.layer_sizes) w.put<std::uint32_t>(static_cast<std::uint32_t>(s));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.mlp_sizes.size()));
    for (int s : c.mlp_sizes) w.put<std::uint32_t>(static_cast<std::uint32_t>(s));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.feature_dim));
    w.put<double>(c.attention_eps);
    w.put<std::uint8_t>(c.self_loops ? 1 : 0);
}

GatModelConfig read_config(ByteReader& r) {
    GatModelConfig c;
    c.heads = static_cast<int>(r.get<std::uint32_t>());
    const auto n_layers = r.get<std::uint32_t>();
    if (n_layers > 1024) r.fail("implausible layer count");
    c.layer_sizes.clear();
    for (std::uint32_t i = 0; i < n_layers; ++i) c.layer_sizes.push_back(static_cast<int>(r.get<std::uint32_t>()));
    const auto n_mlp = r.get<std::uint32_t>();
    if (n_mlp > 1024) r.fail("implausible MLP depth");
    c.mlp_sizes.clear();
    for (std::uint32_t i = 0; i < n_mlp; ++i) c.mlp_sizes.push_back(static_cast<int>(r.get<std::uint32_t>()));
    c.feature_dim = static_cast<int>(r.get<std::uint32_t>());
    c.attention_eps = r.get<double>();
    c.self_loops = r.get<std::uint8_t>() != 0;
    try {
        c.validate();
    } catch (const ArgumentError& e) {
        r.fail(std::string("invalid config block: ") + e.what());
    }
    return c;
}

template <typename T>
void write_tensor(ByteWriter& w, const std::string& name, const Tensor<T>& t) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    for (T v : t.data()) w.put<T>(v);
}

template <typename T>
void read_tensor_into(ByteReader& r, const std::string& expected_name, Tensor<T>& t) {
    const auto name = r.get_string(4096);
    if (name != expected_name) r.fail("expected tensor '" + expected_name + "', found '" + name + "'");
    const auto ndim = r.get<std::uint32_t>();
    nd::Shape shape;
    for (std::uint32_t i = 0; i < ndim; ++i) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    if (shape != t.shape()) {
        r.fail("tensor '" + name + "' has shape " + nd::shape_str(shape) + ", config implies " + nd::shape_str(t.shape()));
    }
    r.need(t.numel() * sizeof(T));
    for (auto& v : t.mutable_data()) v = r.get<T>();
}

template <typename T>
void write_moments(ByteWriter& w, const std::vector<std::vector<T>>& buffers) {
    for (const auto& b : buffers) {
        w.put<std::uint64_t>(b.size());
        for (T v : b) w.put<T>(v);
    }
}

template <typename T>
std::vector<std::vector<T>> read_moments(ByteReader& r, const std::vector<Tensor<T>>& params) {
    std::vector<std::vector<T>> out;
    for (const auto& p : params) {
        const auto n = r.get<std::uint64_t>();
        if (n != p.numel()) r.fail("optimizer buffer size mismatch");
        r.need(n * sizeof(T));
        std::vector<T> b(n);
        for (auto& v : b) v = r.get<T>();
        out.push_back(std::move(b));
    }
    return out;
}

struct Header {
    GatModelConfig config;
    int scalar_bytes = 0;
};

Header read_header(ByteReader& r) {
    r.expect_magic(kCkptMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kCkptVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
    Header h;
    h.scalar_bytes = r.get<std::uint8_t>();
    if (h.scalar_bytes != 4 && h.scalar_bytes != 8) r.fail("scalar width must be 4 or 8");
    h.config = read_config(r);
    return h;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const GatModel<T>& model, const CheckpointMeta& meta,
                                            const nd::AdamState<T>* adam) {
    ByteWriter w;
    w.put_magic(kCkptMagic);
    w.put<std::uint32_t>(kCkptVersion);
    w.put<std::uint8_t>(sizeof(T));
    write_config(w, model.config());
    w.put<std::int64_t>(meta.epoch);
    w.put<double>(meta.validation_accuracy);
    const auto named = model.named_parameters();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) write_tensor(w, name, t);
    const bool has_adam = adam != nullptr && !adam->m.empty();
    w.put<std::uint8_t>(has_adam ? 1 : 0);
    if (has_adam) {
        w.put<double>(adam->lr);
        w.put<double>(adam->beta1);
        w.put<double>(adam->beta2);
        w.put<double>(adam->eps);
        w.put<std::int64_t>(adam->t);
        write_moments(w, adam->m);
        write_moments(w, adam->v);
    }
    return w.take();
}

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "GATCKPT1");
    const Header h = read_header(r);
    if (h.scalar_bytes != static_cast<int>(sizeof(T))) {
        throw ContractError("checkpoint stores " + std::to_string(h.scalar_bytes * 8) + "-bit weights, requested " +
                            std::to_string(sizeof(T) * 8) + "-bit model");
    }
    LoadedCheckpoint<T> out;
    out.model = GatModel<T>::init(h.config, 0);
    out.meta.epoch = r.get<std::int64_t>();
    out.meta.validation_accuracy = r.get<double>();
    auto named = out.model.named_parameters();
    const auto n_tensors = r.get<std::uint32_t>();
    if (n_tensors != named.size()) {
        r.fail("checkpoint holds " + std::to_string(n_tensors) + " tensors, config implies " + std::to_string(named.size()));
    }
    for (auto& [name, t] : named) read_tensor_into(r, name, t);
    const auto has_adam = r.get<std::uint8_t>();
    if (has_adam) {
        nd::AdamState<T> adam;
        adam.lr = r.get<double>();
        adam.beta1 = r.get<double>();
        adam.beta2 = r.get<double>();
        adam.eps = r.get<double>();
        adam.t = r.get<std::int64_t>();
        const auto params = out.model.parameters();
        adam.m = read_moments<T>(r, params);
        adam.v = read_moments<T>(r, params);
        out.adam = std::move(adam);
    }
    if (!r.done()) r.fail("trailing bytes");
    return out;
}

template <typename T>
void save_checkpoint(const GatModel<T>& model, const std::filesystem::path& path, const CheckpointMeta& meta,
                     const nd::AdamState<T>* adam) {
    write_file_atomic(path, encode_checkpoint(model, meta, adam));
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_checkpoint<T>(bytes);
    } catch (const LengthError& e) {
        throw LengthError(std::string(e.what()) + " [" + path.string() + "]");
    } catch (const FormatError& e) {
        throw FormatError(std::string(e.what()) + " [" + path.string() + "]");
    }
}

template <typename T>
CheckpointMeta load_checkpoint_into(GatModel<T>& model, const std::filesystem::path& path) {
    auto loaded = load_checkpoint<T>(path);
    if (!(loaded.model.config() == model.config())) {
        throw ContractError("checkpoint " + path.string() + " was saved for " + describe(loaded.model.config()) +
                            ", model is " + describe(model.config()));
    }
    model.copy_values_from(loaded.model);
    return loaded.meta;
}

std::pair<GatModelConfig, int> peek_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    ByteReader r(bytes, "GATCKPT1 " + path.string());
    const Header h = read_header(r);
    return {h.config, h.scalar_bytes};
}

#define RAGNET_INSTANTIATE(T)                                                                                        \
    template Tensor<T> batch_features<T>(const GraphBatch&);                                                         \
    template Tensor<T> gat_layer_forward<T>(const GraphTopology&, const Tensor<T>&, const GatLayerParams<T>&, T,      \
                                            const GatLayerOptions&, LayerTrace<T>*);                                 \
    template Tensor<T> multi_head_forward<T>(const GraphTopology&, const Tensor<T>&,                                 \
                                             std::span<const GatLayerParams<T>>, T, const GatLayerOptions&);         \
    template class GatModel<T>;                                                                                      \
    template std::vector<std::uint8_t> encode_checkpoint<T>(const GatModel<T>&, const CheckpointMeta&,                \
                                                            const nd::AdamState<T>*);                                \
    template LoadedCheckpoint<T> decode_checkpoint<T>(std::span<const std::uint8_t>);                                \
    template void save_checkpoint<T>(const GatModel<T>&, const std::filesystem::path&, const CheckpointMeta&,        \
                                     const nd::AdamState<T>*);                                                       \
    template LoadedCheckpoint<T> load_checkpoint<T>(const std::filesystem::path&);                                   \
    template CheckpointMeta load_checkpoint_into<T>(GatModel<T>&, const std::filesystem::path&);

RAGNET_INSTANTIATE(float)
RAGNET_INSTANTIATE(double)

#undef RAGNET_INSTANTIATE

}  // namespace ragnet
