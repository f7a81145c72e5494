#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ragnet/graph.hpp"
#include "ragnet/tensor.hpp"

namespace ragnet {

struct GatModelConfig {
    int heads = 1;
    std::vector<int> layer_sizes = {32, 64, 64};  // per-head output width of each GAT layer
    std::vector<int> mlp_sizes = {32, 10};        // last entry is the class count
    int feature_dim = 3;                          // 3 grayscale, 5 RGB
    double attention_eps = 1e-16;
    bool self_loops = true;

    void validate() const;
    int num_classes() const { return mlp_sizes.back(); }

    friend bool operator==(const GatModelConfig&, const GatModelConfig&) = default;
};

std::string describe(const GatModelConfig& cfg);

// Closed-form parameter tally:
//   sum over layers of heads * ((2 d_in d_out + d_out) + (2 d_in + 1))
//   + MLP weights and biases, with the MLP input = heads * last layer width.
std::int64_t count_parameters(const GatModelConfig& cfg);

// Edge index lists of a batch, shared by every layer of one forward pass.
struct GraphTopology {
    nd::Index source;
    nd::Index target;
    nd::Index graph_id;
    std::size_t n_nodes = 0;
    std::size_t n_graphs = 0;

    static GraphTopology from_batch(const GraphBatch& batch);
};

template <typename T>
struct GatLayerParams {
    nd::Tensor<T> f_weight;  // (2 d_in x d_out), source half first
    nd::Tensor<T> f_bias;    // (1 x d_out)
    nd::Tensor<T> a_weight;  // (2 d_in x 1)
    nd::Tensor<T> a_bias;    // (1 x 1)

    std::size_t in_dim() const { return f_weight.rows() / 2; }
    std::size_t out_dim() const { return f_weight.cols(); }
};

// How the per-edge logits are shifted before exponentiation. Both give the
// same normalised weights.
enum class LogitShift { PerTargetMax, GlobalMax };

// How f(x_s || x_t) is evaluated: project node features with the two halves
// of the weight matrix and gather per edge, or gather-and-concatenate per edge
// first. Identical up to rounding.
enum class EdgeTransform { ProjectThenGather, ConcatThenProject };

struct GatLayerOptions {
    LogitShift shift = LogitShift::PerTargetMax;
    EdgeTransform transform = EdgeTransform::ProjectThenGather;
    // Constant added to every attention logit (shift-invariance testing).
    double logit_offset = 0.0;
};

// Optional per-edge attention weights exp(a_e - base) / alpha_sum(target).
template <typename T>
struct LayerTrace {
    std::vector<T> attention;
};

// One attention head:
//   y(e) = ReLU(W^T (x_s || x_t) + b),  a(e) = w_a^T (x_s || x_t) + b_a
//   o(t) = sum_{e -> t} exp(a(e) - base) y(e) / (sum_{e -> t} exp(a(e) - base) + eps)
template <typename T>
nd::Tensor<T> gat_layer_forward(const GraphTopology& topo, const nd::Tensor<T>& x, const GatLayerParams<T>& params,
                                T eps, const GatLayerOptions& opts = {}, LayerTrace<T>* trace = nullptr);

// Heads evaluated independently and concatenated along features, head order.
template <typename T>
nd::Tensor<T> multi_head_forward(const GraphTopology& topo, const nd::Tensor<T>& x,
                                 std::span<const GatLayerParams<T>> heads, T eps, const GatLayerOptions& opts = {});

template <typename T>
struct MlpLayer {
    nd::Tensor<T> weight;  // (d_in x d_out)
    nd::Tensor<T> bias;    // (1 x d_out)
};

template <typename T>
class GatModel {
public:
    GatModel() = default;

    // Glorot-uniform weights, zero biases.
    static GatModel init(const GatModelConfig& cfg, std::uint64_t seed);

    const GatModelConfig& config() const { return cfg_; }

    // Per-graph class probabilities (n_graphs x num_classes).
    nd::Tensor<T> forward(const GraphBatch& batch, const GatLayerOptions& opts = {}) const;
    nd::Tensor<T> forward(const GraphTopology& topo, const nd::Tensor<T>& features,
                          const GatLayerOptions& opts = {}) const;

    // Stable order: layer, head, (f_weight, f_bias, a_weight, a_bias); then MLP.
    std::vector<std::pair<std::string, nd::Tensor<T>>> named_parameters() const;
    std::vector<nd::Tensor<T>> parameters() const;
    std::int64_t parameter_count() const;

    // Deep copy of parameter values (no shared storage).
    GatModel clone() const;
    // Copies parameter values from a model with identical config.
    void copy_values_from(const GatModel& other);

    std::vector<std::vector<GatLayerParams<T>>>& layers() { return layers_; }
    const std::vector<std::vector<GatLayerParams<T>>>& layers() const { return layers_; }
    std::vector<MlpLayer<T>>& mlp() { return mlp_; }
    const std::vector<MlpLayer<T>>& mlp() const { return mlp_; }

private:
    GatModelConfig cfg_;
    std::vector<std::vector<GatLayerParams<T>>> layers_;
    std::vector<MlpLayer<T>> mlp_;
};

// Node features of a batch as a constant tensor.
template <typename T>
nd::Tensor<T> batch_features(const GraphBatch& batch);

struct CheckpointMeta {
    std::int64_t epoch = -1;
    double validation_accuracy = 0.0;
};

// Optimizer moments stored alongside the weights (same parameter order).
template <typename T>
struct CheckpointOptimizer {
    nd::AdamState<T> adam;
};

// "GATCKPT1": magic, version, scalar width, config block, meta, named tensors
// (name, shape, little-endian payload), optional Adam state.
template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const GatModel<T>& model, const CheckpointMeta& meta,
                                            const nd::AdamState<T>* adam = nullptr);

template <typename T>
struct LoadedCheckpoint {
    GatModel<T> model;
    CheckpointMeta meta;
    std::optional<nd::AdamState<T>> adam;
};

template <typename T>
LoadedCheckpoint<T> decode_checkpoint(std::span<const std::uint8_t> bytes);

template <typename T>
void save_checkpoint(const GatModel<T>& model, const std::filesystem::path& path, const CheckpointMeta& meta = {},
                     const nd::AdamState<T>* adam = nullptr);

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path);

// Loads weights into an existing model; throws ContractError when the stored
// config differs from the model's.
template <typename T>
CheckpointMeta load_checkpoint_into(GatModel<T>& model, const std::filesystem::path& path);

// Reads only the header: config and scalar width (4 or 8 bytes).
std::pair<GatModelConfig, int> peek_checkpoint(const std::filesystem::path& path);

}  // namespace ragnet
