#include "ragnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "ragnet/error.hpp"
#include "ragnet/kernels.hpp"

namespace ragnet::nd {

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += " x ";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

Index make_index(std::vector<std::int32_t> ids) {
    return std::make_shared<const std::vector<std::int32_t>>(std::move(ids));
}

namespace {

std::size_t product(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
const kernels::KernelTable<T>& K() {
    return kernels::active<T>();
}

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
    throw ArgumentError(std::string(op) + ": " + detail);
}

template <typename T>
void require_matrix(const char* op, const Tensor<T>& a) {
    if (!a.defined()) shape_error(op, "undefined tensor");
    if (a.shape().size() != 2) shape_error(op, "expected a matrix, got shape " + shape_str(a.shape()));
}

template <typename T>
std::shared_ptr<Node<T>> make_node(Shape shape, const char* op, std::initializer_list<const Tensor<T>*> inputs) {
    auto node = std::make_shared<Node<T>>();
    node->data.assign(product(shape), T{0});
    node->shape = std::move(shape);
    node->op = op;
    for (const auto* in : inputs) {
        if (in->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
        for (const auto* in : inputs) node->parents.push_back(in->shared());
    }
    return node;
}

template <typename T>
bool wants_grad(const std::shared_ptr<Node<T>>& n) {
    return n && n->requires_grad;
}

void check_index(const char* op, const Index& idx, std::size_t bound) {
    if (!idx) shape_error(op, "null index");
    for (auto i : *idx) {
        if (i < 0 || static_cast<std::size_t>(i) >= bound) {
            shape_error(op, "index " + std::to_string(i) + " out of range [0, " + std::to_string(bound) + ")");
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    auto node = std::make_shared<Node<T>>();
    node->data.assign(product(shape), T{0});
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    if (product(shape) != values.size()) {
        throw ArgumentError("Tensor::from: shape " + shape_str(shape) + " needs " + std::to_string(product(shape)) +
                            " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from({1, 1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ArgumentError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->data[0];
}

template <typename T>
void backward(const Tensor<T>& loss, GraphMode mode) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ArgumentError("backward: loss must be a scalar, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("(undefined)")));
    }
    Node<T>* root = loss.node();
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients belong to this pass only; leaves keep accumulating.
    for (Node<T>* node : order) {
        if (!node->parents.empty()) node->grad.clear();
    }
    root->ensure_grad()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
    if (mode == GraphMode::Release) {
        for (Node<T>* node : order) {
            if (!node->parents.empty()) {
                node->backward = nullptr;
                node->parents.clear();
                node->grad.clear();
                node->grad.shrink_to_fit();
            }
        }
    }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k) shape_error("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    auto out = make_node<T>({n, m}, "matmul", {&a, &b});
    K<T>().gemm_nn(n, k, m, a.data().data(), b.data().data(), out->data.data(), false);
    if (out->requires_grad) {
        out->backward = [n, k, m](Node<T>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) K<T>().gemm_nt(n, k, m, self.grad.data(), pb->data.data(), pa->ensure_grad().data(), true);
            if (pb->requires_grad) K<T>().gemm_tn(n, k, m, pa->data.data(), self.grad.data(), pb->ensure_grad().data(), true);
        };
    }
    return Tensor<T>(out);
}

namespace {

template <typename T, typename Fwd, typename BwdA, typename BwdB>
Tensor<T> elementwise2(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
    if (!a.defined() || !b.defined()) shape_error(op, "undefined tensor");
    if (a.shape() != b.shape()) shape_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto out = make_node<T>(a.shape(), op, {&a, &b});
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) out->data[i] = fwd(ad[i], bd[i]);
    if (out->requires_grad) {
        out->backward = [bwd_a, bwd_b](Node<T>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                auto& g = pa->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += bwd_a(self.grad[i], pa->data[i], pb->data[i]);
            }
            if (pb->requires_grad) {
                auto& g = pb->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += bwd_b(self.grad[i], pa->data[i], pb->data[i]);
            }
        };
    }
    return Tensor<T>(out);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise2<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise2<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise2<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix("add_row", a);
    const std::size_t n = a.rows(), m = a.cols();
    if (!b.defined() || b.numel() != m) {
        shape_error("add_row", "bias of shape " + (b.defined() ? shape_str(b.shape()) : std::string("(undefined)")) +
                                   " does not match " + std::to_string(m) + " columns");
    }
    auto out = make_node<T>(a.shape(), "add_row", {&a, &b});
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) out->data[i * m + j] = ad[i * m + j] + bd[j];
    }
    if (out->requires_grad) {
        out->backward = [n, m](Node<T>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                auto& g = pa->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                auto& g = pb->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
                }
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul_col(const Tensor<T>& a, const Tensor<T>& w) {
    require_matrix("mul_col", a);
    const std::size_t n = a.rows(), m = a.cols();
    if (!w.defined() || w.numel() != n) shape_error("mul_col", "column of " + std::to_string(w.defined() ? w.numel() : 0) + " values for " + std::to_string(n) + " rows");
    auto out = make_node<T>(a.shape(), "mul_col", {&a, &w});
    const auto ad = a.data();
    const auto wd = w.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) out->data[i * m + j] = ad[i * m + j] * wd[i];
    }
    if (out->requires_grad) {
        out->backward = [n, m](Node<T>& self) {
            auto& pa = self.parents[0];
            auto& pw = self.parents[1];
            if (pa->requires_grad) {
                auto& g = pa->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    K<T>().axpy(pw->data[i], self.grad.data() + i * m, g.data() + i * m, m);
                }
            }
            if (pw->requires_grad) {
                auto& g = pw->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] += K<T>().dot(self.grad.data() + i * m, pa->data.data() + i * m, m);
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> div_col(const Tensor<T>& a, const Tensor<T>& w) {
    require_matrix("div_col", a);
    const std::size_t n = a.rows(), m = a.cols();
    if (!w.defined() || w.numel() != n) shape_error("div_col", "column of " + std::to_string(w.defined() ? w.numel() : 0) + " values for " + std::to_string(n) + " rows");
    const auto wd = w.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (wd[i] == T{0}) throw ContractError("div_col: division by zero in row " + std::to_string(i));
    }
    auto out = make_node<T>(a.shape(), "div_col", {&a, &w});
    const auto ad = a.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) out->data[i * m + j] = ad[i * m + j] / wd[i];
    }
    if (out->requires_grad) {
        out->backward = [n, m](Node<T>& self) {
            auto& pa = self.parents[0];
            auto& pw = self.parents[1];
            if (pa->requires_grad) {
                auto& g = pa->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    K<T>().axpy(T{1} / pw->data[i], self.grad.data() + i * m, g.data() + i * m, m);
                }
            }
            if (pw->requires_grad) {
                auto& g = pw->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    // d(a/w)/dw = -a/w^2 = -out/w
                    g[i] -= K<T>().dot(self.grad.data() + i * m, self.data.data() + i * m, m) / pw->data[i];
                }
            }
        };
    }
    return Tensor<T>(out);
}

namespace {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> elementwise1(const char* op, const Tensor<T>& a, Fwd fwd, Bwd bwd) {
    if (!a.defined()) shape_error(op, "undefined tensor");
    auto out = make_node<T>(a.shape(), op, {&a});
    const auto ad = a.data();
    for (std::size_t i = 0; i < ad.size(); ++i) out->data[i] = fwd(ad[i]);
    if (out->requires_grad) {
        out->backward = [bwd](Node<T>& self) {
            auto& pa = self.parents[0];
            auto& g = pa->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += bwd(self.grad[i], pa->data[i], self.data[i]);
        };
    }
    return Tensor<T>(out);
}

}  // namespace

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    return elementwise1<T>("add_scalar", a, [c](T x) { return x + c; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    return elementwise1<T>("scale", a, [c](T x) { return x * c; }, [c](T g, T, T) { return g * c; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return elementwise1<T>("exp", a, [](T x) { return std::exp(x); }, [](T g, T, T y) { return g * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    if (!a.defined()) shape_error("relu", "undefined tensor");
    auto out = make_node<T>(a.shape(), "relu", {&a});
    K<T>().relu(a.data().data(), out->data.data(), a.numel());
    if (out->requires_grad) {
        out->backward = [](Node<T>& self) {
            auto& pa = self.parents[0];
            K<T>().relu_backward(pa->data.data(), self.grad.data(), pa->ensure_grad().data(), pa->data.size());
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
    if (parts.empty()) shape_error("concat_cols", "no inputs");
    const std::size_t n = parts[0].rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_matrix("concat_cols", p);
        if (p.rows() != n) shape_error("concat_cols", "row counts differ: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        widths.push_back(p.cols());
        total += p.cols();
    }
    auto out = std::make_shared<Node<T>>();
    out->shape = {n, total};
    out->op = "concat_cols";
    out->data.assign(n * total, T{0});
    for (const auto& p : parts) out->requires_grad = out->requires_grad || p.requires_grad();
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto d = parts[k].data();
        for (std::size_t i = 0; i < n; ++i) std::copy_n(d.data() + i * widths[k], widths[k], out->data.data() + i * total + off);
        off += widths[k];
    }
    if (out->requires_grad) {
        for (const auto& p : parts) out->parents.push_back(p.shared());
        out->backward = [n, total, widths](Node<T>& self) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < self.parents.size(); ++k) {
                auto& p = self.parents[k];
                if (p->requires_grad) {
                    auto& g = p->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + offset + j];
                    }
                }
                offset += widths[k];
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
    require_matrix("slice_rows", a);
    if (begin > end || end > a.rows()) {
        shape_error("slice_rows", "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " + shape_str(a.shape()));
    }
    const std::size_t m = a.cols();
    auto out = make_node<T>({end - begin, m}, "slice_rows", {&a});
    std::copy_n(a.data().data() + begin * m, (end - begin) * m, out->data.data());
    if (out->requires_grad) {
        out->backward = [begin, m](Node<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * m + i] += self.grad[i];
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    require_matrix("softmax_rows", a);
    const std::size_t n = a.rows(), m = a.cols();
    auto out = make_node<T>(a.shape(), "softmax_rows", {&a});
    const auto ad = a.data();
    for (std::size_t i = 0; i < n; ++i) {
        const T* x = ad.data() + i * m;
        T* y = out->data.data() + i * m;
        const T mx = *std::max_element(x, x + m);
        T s = 0;
        for (std::size_t j = 0; j < m; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        for (std::size_t j = 0; j < m; ++j) y[j] /= s;
    }
    if (out->requires_grad) {
        out->backward = [n, m](Node<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const T* y = self.data.data() + i * m;
                const T* dy = self.grad.data() + i * m;
                T inner = 0;
                for (std::size_t j = 0; j < m; ++j) inner += dy[j] * y[j];
                for (std::size_t j = 0; j < m; ++j) g[i * m + j] += y[j] * (dy[j] - inner);
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& logits, const Index& groups, std::size_t n_groups) {
    require_matrix("segment_softmax", logits);
    if (logits.cols() != 1) shape_error("segment_softmax", "expected a column vector, got " + shape_str(logits.shape()));
    const std::size_t e = logits.rows();
    if (!groups || groups->size() != e) shape_error("segment_softmax", "group list length does not match rows");
    check_index("segment_softmax", groups, n_groups);
    const auto& g = *groups;
    const auto x = logits.data();
    std::vector<T> mx(n_groups, -std::numeric_limits<T>::infinity());
    for (std::size_t i = 0; i < e; ++i) mx[g[i]] = std::max(mx[g[i]], x[i]);
    auto out = make_node<T>(logits.shape(), "segment_softmax", {&logits});
    std::vector<T> sum(n_groups, T{0});
    for (std::size_t i = 0; i < e; ++i) {
        out->data[i] = std::exp(x[i] - mx[g[i]]);
        sum[g[i]] += out->data[i];
    }
    for (std::size_t i = 0; i < e; ++i) out->data[i] /= sum[g[i]];
    if (out->requires_grad) {
        out->backward = [groups, n_groups](Node<T>& self) {
            const auto& gi = *groups;
            std::vector<T> inner(n_groups, T{0});
            for (std::size_t i = 0; i < gi.size(); ++i) inner[gi[i]] += self.grad[i] * self.data[i];
            auto& dx = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < gi.size(); ++i) dx[i] += self.data[i] * (self.grad[i] - inner[gi[i]]);
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> segment_sum(const Tensor<T>& values, const Index& groups, std::size_t n_groups) {
    require_matrix("segment_sum", values);
    const std::size_t e = values.rows(), m = values.cols();
    if (!groups || groups->size() != e) {
        shape_error("segment_sum", "group list of length " + std::to_string(groups ? groups->size() : 0) + " for " +
                                       std::to_string(e) + " rows");
    }
    check_index("segment_sum", groups, n_groups);
    auto out = make_node<T>({n_groups, m}, "segment_sum", {&values});
    K<T>().scatter_add_rows(values.data().data(), m, groups->data(), e, out->data.data());
    if (out->requires_grad) {
        out->backward = [groups, m](Node<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            const auto& gi = *groups;
            for (std::size_t i = 0; i < gi.size(); ++i) {
                K<T>().axpy(T{1}, self.grad.data() + static_cast<std::size_t>(gi[i]) * m, g.data() + i * m, m);
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> segment_max(const Tensor<T>& values, const Index& groups, std::size_t n_groups) {
    require_matrix("segment_max", values);
    const std::size_t e = values.rows(), m = values.cols();
    if (!groups || groups->size() != e) shape_error("segment_max", "group list length does not match rows");
    check_index("segment_max", groups, n_groups);
    const auto& g = *groups;
    const auto x = values.data();
    std::vector<std::int64_t> arg(n_groups * m, -1);
    auto out = make_node<T>({n_groups, m}, "segment_max", {&values});
    for (std::size_t i = 0; i < e; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            auto& a = arg[static_cast<std::size_t>(g[i]) * m + j];
            if (a < 0 || x[i * m + j] > x[static_cast<std::size_t>(a)]) a = static_cast<std::int64_t>(i * m + j);
        }
    }
    for (std::size_t k = 0; k < arg.size(); ++k) out->data[k] = arg[k] < 0 ? T{0} : x[static_cast<std::size_t>(arg[k])];
    if (out->requires_grad) {
        out->backward = [arg = std::move(arg)](Node<T>& self) {
            auto& gx = self.parents[0]->ensure_grad();
            for (std::size_t k = 0; k < arg.size(); ++k) {
                if (arg[k] >= 0) gx[static_cast<std::size_t>(arg[k])] += self.grad[k];
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> max_all(const Tensor<T>& a) {
    if (!a.defined() || a.numel() == 0) shape_error("max_all", "empty tensor");
    const auto d = a.data();
    const auto arg = static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
    auto out = make_node<T>({1, 1}, "max_all", {&a});
    out->data[0] = d[arg];
    if (out->requires_grad) {
        out->backward = [arg](Node<T>& self) { self.parents[0]->ensure_grad()[arg] += self.grad[0]; };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const Index& idx) {
    require_matrix("gather_rows", a);
    check_index("gather_rows", idx, a.rows());
    const std::size_t m = a.cols();
    auto out = make_node<T>({idx->size(), m}, "gather_rows", {&a});
    K<T>().gather_rows(a.data().data(), m, idx->data(), idx->size(), out->data.data());
    if (out->requires_grad) {
        out->backward = [idx, m](Node<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            K<T>().scatter_add_rows(self.grad.data(), m, idx->data(), idx->size(), g.data());
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> broadcast_scalar(const Tensor<T>& s, std::size_t n) {
    if (!s.defined() || s.numel() != 1) shape_error("broadcast_scalar", "expected a scalar");
    auto out = make_node<T>({n, 1}, "broadcast_scalar", {&s});
    std::fill(out->data.begin(), out->data.end(), s.data()[0]);
    if (out->requires_grad) {
        out->backward = [](Node<T>& self) {
            T total = 0;
            for (T g : self.grad) total += g;
            self.parents[0]->ensure_grad()[0] += total;
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    if (!a.defined()) shape_error("sum_all", "undefined tensor");
    auto out = make_node<T>({1, 1}, "sum_all", {&a});
    T s = 0;
    for (T v : a.data()) s += v;
    out->data[0] = s;
    if (out->requires_grad) {
        out->backward = [](Node<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (auto& v : g) v += self.grad[0];
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    if (!a.defined() || a.numel() == 0) shape_error("mean_all", "empty tensor");
    return scale(sum_all(a), T{1} / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> detach(const Tensor<T>& a) {
    auto node = std::make_shared<Node<T>>();
    node->shape = a.shape();
    node->data.assign(a.data().begin(), a.data().end());
    node->op = "detach";
    return Tensor<T>(node);
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const int> labels) {
    require_matrix("cross_entropy", probs);
    const std::size_t n = probs.rows(), c = probs.cols();
    if (labels.size() != n) {
        shape_error("cross_entropy", std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
    }
    if (n == 0) shape_error("cross_entropy", "empty batch");
    const auto p = probs.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
            throw ArgumentError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
        }
        T row = 0;
        for (std::size_t j = 0; j < c; ++j) row += p[i * c + j];
        if (std::abs(static_cast<double>(row) - 1.0) > 1e-5) {
            throw ArgumentError("cross_entropy: row " + std::to_string(i) + " sums to " + std::to_string(row) + ", not 1");
        }
    }
    constexpr T floor_p = static_cast<T>(1e-12);
    auto out = make_node<T>({1, 1}, "cross_entropy", {&probs});
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) loss -= std::log(std::max(p[i * c + labels[i]], floor_p));
    out->data[0] = loss / static_cast<T>(n);
    if (out->requires_grad) {
        std::vector<int> lbl(labels.begin(), labels.end());
        out->backward = [lbl = std::move(lbl), n, c, floor_p](Node<T>& self) {
            auto& g = self.parents[0]->ensure_grad();
            const auto& pd = self.parents[0]->data;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = i * c + static_cast<std::size_t>(lbl[i]);
                // The clamp is flat below the floor.
                if (pd[k] > floor_p) g[k] -= self.grad[0] / (static_cast<T>(n) * pd[k]);
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
void AdamState<T>::validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw ArgumentError("adam: betas must lie in [0, 1)");
    }
    if (!(lr > 0.0) || !(eps > 0.0)) throw ArgumentError("adam: lr and eps must be positive");
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
    state.validate();
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), T{0});
            state.v.emplace_back(p.numel(), T{0});
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam: optimizer state tracks a different parameter list");
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].has_grad()) throw ContractError("adam: parameter " + std::to_string(k) + " has no gradient");
        if (state.m[k].size() != params[k].numel()) throw ContractError("adam: moment buffer shape mismatch for parameter " + std::to_string(k));
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    const T lr = static_cast<T>(state.lr), eps = static_cast<T>(state.eps);
    const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k].mutable_data();
        const auto g = params[k].grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (T{1} - b1) * g[i];
            v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
            const T mhat = m[i] * inv_bc1;
            const T vhat = v[i] * inv_bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

#define RAGNET_INSTANTIATE(T)                                                                            \
    template class Tensor<T>;                                                                            \
    template void backward<T>(const Tensor<T>&, GraphMode);                                              \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> add_row<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> mul_col<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> div_col<T>(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                               \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                    \
    template Tensor<T> concat_cols<T>(std::span<const Tensor<T>>);                                       \
    template Tensor<T> slice_rows<T>(const Tensor<T>&, std::size_t, std::size_t);                        \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                        \
    template Tensor<T> exp<T>(const Tensor<T>&);                                                         \
    template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                                \
    template Tensor<T> segment_softmax<T>(const Tensor<T>&, const Index&, std::size_t);                  \
    template Tensor<T> segment_sum<T>(const Tensor<T>&, const Index&, std::size_t);                      \
    template Tensor<T> segment_max<T>(const Tensor<T>&, const Index&, std::size_t);                      \
    template Tensor<T> max_all<T>(const Tensor<T>&);                                                     \
    template Tensor<T> gather_rows<T>(const Tensor<T>&, const Index&);                                   \
    template Tensor<T> broadcast_scalar<T>(const Tensor<T>&, std::size_t);                               \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                                     \
    template Tensor<T> mean_all<T>(const Tensor<T>&);                                                    \
    template Tensor<T> detach<T>(const Tensor<T>&);                                                      \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const int>);                         \
    template struct AdamState<T>;                                                                        \
    template void adam_step<T>(std::span<Tensor<T>>, AdamState<T>&);

RAGNET_INSTANTIATE(float)
RAGNET_INSTANTIATE(double)

#undef RAGNET_INSTANTIATE

}  // namespace ragnet::nd
