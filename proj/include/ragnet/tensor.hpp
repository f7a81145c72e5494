#pragma once

// Dense tensors with tape-free reverse-mode differentiation. Every op result
// keeps shared pointers to its inputs and a closure that pushes its gradient
// back into them, so the graph is whatever the forward pass built and is
// released when the last handle to the loss goes away.
//
// Only the shapes the model needs are supported: 2-D row-major matrices, with
// column vectors as (n x 1) and scalars as (1 x 1).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ragnet::nd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Shared immutable index list (edge endpoints, group ids).
using Index = std::shared_ptr<const std::vector<std::int32_t>>;
Index make_index(std::vector<std::int32_t> ids);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T{0});
        return grad;
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
    std::size_t cols() const { return node_->shape.size() < 2 ? 1 : node_->shape[1]; }

    std::span<const T> data() const { return node_->data; }
    std::span<T> mutable_data() { return node_->data; }
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& shared() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

enum class GraphMode {
    Release,  // drop intermediate gradients and closures after the pass
    Retain,   // keep the graph so backward can run again
};

// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable tensor that
// requires grad. Leaf gradients accumulate across calls until zero_grad().
template <typename T>
void backward(const Tensor<T>& loss, GraphMode mode = GraphMode::Release);

// C = A * B, A (n x k), B (k x m).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise, identical shapes.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// A (n x m) + b broadcast over rows; b has m elements.
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& b);

// A (n x m) scaled / divided row-wise by a column vector w (n x 1).
template <typename T>
Tensor<T> mul_col(const Tensor<T>& a, const Tensor<T>& w);
template <typename T>
Tensor<T> div_col(const Tensor<T>& a, const Tensor<T>& w);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c);

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);

// Softmax over the last axis of each row.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a);

// Softmax of a column vector (E x 1) within groups: rows sharing group id are
// normalised together.
template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& logits, const Index& groups, std::size_t n_groups);

// out[k, :] = sum of rows i with groups[i] == k, in increasing i.
template <typename T>
Tensor<T> segment_sum(const Tensor<T>& values, const Index& groups, std::size_t n_groups);

// Column-wise max within groups; empty groups yield 0. Gradient goes to the
// first maximal row.
template <typename T>
Tensor<T> segment_max(const Tensor<T>& values, const Index& groups, std::size_t n_groups);

// Max over all elements, as a (1 x 1) tensor.
template <typename T>
Tensor<T> max_all(const Tensor<T>& a);

// out[i, :] = a[idx[i], :]
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const Index& idx);

// Broadcast a (1 x 1) tensor to (n x 1).
template <typename T>
Tensor<T> broadcast_scalar(const Tensor<T>& s, std::size_t n);

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& a);

// Same values, no gradient path.
template <typename T>
Tensor<T> detach(const Tensor<T>& a);

// Mean over rows of -log(max(p[label], 1e-12)); rows of `probs` must be
// probability vectors (sum 1 within 1e-5).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const int> labels);

template <typename T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    void validate() const;
};

// One bias-corrected Adam update. Every parameter must carry a gradient.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state);

}  // namespace ragnet::nd
