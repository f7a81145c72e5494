#pragma once

// Dense inner loops behind the tensor ops. Each kernel has a portable scalar
// reference and an AVX2+FMA variant; the variant is picked once at startup
// from CPUID and can be forced with RAGNET_ISA=scalar|avx2.
//
// Matrices are row-major and contiguous. "accumulate" adds into the output
// instead of overwriting it.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace ragnet::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view to_string(Isa isa);

template <typename T>
struct KernelTable {
    Isa isa;
    T (*dot)(const T* a, const T* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
    // C[m x n] (+)= A[m x k] * B[k x n]
    void (*gemm_nn)(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
    // C[k x n] (+)= A[m x k]^T * B[m x n]
    void (*gemm_tn)(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
    // C[m x k] (+)= A[m x n] * B[k x n]^T
    void (*gemm_nt)(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate);
    void (*relu)(const T* x, T* y, std::size_t n);
    // gx += g where x > 0
    void (*relu_backward)(const T* x, const T* g, T* gx, std::size_t n);
    // dst[i, :] = src[idx[i], :]
    void (*gather_rows)(const T* src, std::size_t cols, const std::int32_t* idx, std::size_t n_idx, T* dst);
    // dst[idx[i], :] += src[i, :], processed in increasing i.
    void (*scatter_add_rows)(const T* src, std::size_t cols, const std::int32_t* idx, std::size_t n_rows, T* dst);
};

bool cpu_supports(Isa isa);

// Table for the requested ISA, or nullptr when the CPU (or build) lacks it.
template <typename T>
const KernelTable<T>* table_for(Isa isa);

// Table selected at startup.
template <typename T>
const KernelTable<T>& active();

Isa active_isa();

// Overrides the startup choice; throws ArgumentError if unsupported. Not
// thread-safe: call before any worker threads start.
void set_active_isa(Isa isa);

namespace detail {
template <typename T>
const KernelTable<T>& scalar_table();
template <typename T>
const KernelTable<T>* avx2_table();
}  // namespace detail

}  // namespace ragnet::kernels
