#include <algorithm>

#include "ragnet/kernels.hpp"

namespace ragnet::kernels::detail {

namespace {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T{0});
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + k * n, T{0});
    for (std::size_t p = 0; p < k; ++p) {
        T* crow = c + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = a[i * k + p];
            const T* brow = b + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const T s = dot(a + i * n, b + p * n, n);
            c[i * k + p] = accumulate ? c[i * k + p] + s : s;
        }
    }
}

template <typename T>
void relu(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
}

template <typename T>
void relu_backward(const T* x, const T* g, T* gx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > T{0}) gx[i] += g[i];
    }
}

template <typename T>
void gather_rows(const T* src, std::size_t cols, const std::int32_t* idx, std::size_t n_idx, T* dst) {
    for (std::size_t i = 0; i < n_idx; ++i) {
        std::copy_n(src + static_cast<std::size_t>(idx[i]) * cols, cols, dst + i * cols);
    }
}

template <typename T>
void scatter_add_rows(const T* src, std::size_t cols, const std::int32_t* idx, std::size_t n_rows, T* dst) {
    for (std::size_t i = 0; i < n_rows; ++i) {
        T* out = dst + static_cast<std::size_t>(idx[i]) * cols;
        const T* in = src + i * cols;
        for (std::size_t j = 0; j < cols; ++j) out[j] += in[j];
    }
}

template <typename T>
constexpr KernelTable<T> make_table() {
    return {Isa::Scalar, &dot<T>,  &axpy<T>, &gemm_nn<T>,          &gemm_tn<T>, &gemm_nt<T>,
            &relu<T>,    &relu_backward<T>, &gather_rows<T>, &scatter_add_rows<T>};
}

constexpr KernelTable<float> kScalarF32 = make_table<float>();
constexpr KernelTable<double> kScalarF64 = make_table<double>();

}  // namespace

template <>
const KernelTable<float>& scalar_table<float>() {
    return kScalarF32;
}
template <>
const KernelTable<double>& scalar_table<double>() {
    return kScalarF64;
}

}  // namespace ragnet::kernels::detail
