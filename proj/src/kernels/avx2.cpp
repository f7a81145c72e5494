// Compiled with -mavx2 -mfma. Nothing in this file may run before
// cpu_supports(Isa::Avx2) has been checked.

#include <algorithm>
#include <cstring>

#include "ragnet/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define RAGNET_HAVE_AVX2 1
#endif

namespace ragnet::kernels::detail {

#ifdef RAGNET_HAVE_AVX2

namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr std::size_t width = 8;
    static reg zero() { return _mm256_setzero_ps(); }
    static reg set1(float v) { return _mm256_set1_ps(v); }
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static reg max(reg a, reg b) { return _mm256_max_ps(a, b); }
    static reg mask_gt(reg a, reg b, reg v) { return _mm256_and_ps(_mm256_cmp_ps(a, b, _CMP_GT_OQ), v); }
    static float hsum(reg v) {
        __m128 lo = _mm256_castps256_ps128(v);
        __m128 hi = _mm256_extractf128_ps(v, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 shuf = _mm_movehdup_ps(lo);
        __m128 sums = _mm_add_ps(lo, shuf);
        shuf = _mm_movehl_ps(shuf, sums);
        sums = _mm_add_ss(sums, shuf);
        return _mm_cvtss_f32(sums);
    }
};

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr std::size_t width = 4;
    static reg zero() { return _mm256_setzero_pd(); }
    static reg set1(double v) { return _mm256_set1_pd(v); }
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static reg max(reg a, reg b) { return _mm256_max_pd(a, b); }
    static reg mask_gt(reg a, reg b, reg v) { return _mm256_and_pd(_mm256_cmp_pd(a, b, _CMP_GT_OQ), v); }
    static double hsum(reg v) {
        __m128d lo = _mm256_castpd256_pd128(v);
        __m128d hi = _mm256_extractf128_pd(v, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d high64 = _mm_unpackhi_pd(lo, lo);
        return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
    }
};

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    auto acc0 = V::zero();
    auto acc1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * w <= n; i += 2 * w) {
        acc0 = V::fmadd(V::load(a + i), V::load(b + i), acc0);
        acc1 = V::fmadd(V::load(a + i + w), V::load(b + i + w), acc1);
    }
    for (; i + w <= n; i += w) acc0 = V::fmadd(V::load(a + i), V::load(b + i), acc0);
    T s = V::hsum(V::add(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    const auto av = V::set1(alpha);
    std::size_t i = 0;
    for (; i + w <= n; i += w) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

// Accumulates rows_b[r * ldb + j0 ...] * coef(r) into a register block of 4
// vectors, for r in [0, count). Shared by gemm_nn (coef from a row of A) and
// gemm_tn (coef from a column of A).
template <typename T, typename Coef>
void block4(std::size_t count, const T* b, std::size_t ldb, std::size_t j0, Coef coef, T* out, bool accumulate) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    auto c0 = accumulate ? V::load(out) : V::zero();
    auto c1 = accumulate ? V::load(out + w) : V::zero();
    auto c2 = accumulate ? V::load(out + 2 * w) : V::zero();
    auto c3 = accumulate ? V::load(out + 3 * w) : V::zero();
    for (std::size_t r = 0; r < count; ++r) {
        const auto av = V::set1(coef(r));
        const T* row = b + r * ldb + j0;
        c0 = V::fmadd(av, V::load(row), c0);
        c1 = V::fmadd(av, V::load(row + w), c1);
        c2 = V::fmadd(av, V::load(row + 2 * w), c2);
        c3 = V::fmadd(av, V::load(row + 3 * w), c3);
    }
    V::store(out, c0);
    V::store(out + w, c1);
    V::store(out + 2 * w, c2);
    V::store(out + 3 * w, c3);
}

template <typename T, typename Coef>
void block1(std::size_t count, const T* b, std::size_t ldb, std::size_t j0, Coef coef, T* out, bool accumulate) {
    using V = Vec<T>;
    auto c0 = accumulate ? V::load(out) : V::zero();
    for (std::size_t r = 0; r < count; ++r) c0 = V::fmadd(V::set1(coef(r)), V::load(b + r * ldb + j0), c0);
    V::store(out, c0);
}

template <typename T, typename Coef>
void row_update(std::size_t count, const T* b, std::size_t n, Coef coef, T* out, bool accumulate) {
    constexpr std::size_t w = Vec<T>::width;
    std::size_t j = 0;
    for (; j + 4 * w <= n; j += 4 * w) block4<T>(count, b, n, j, coef, out + j, accumulate);
    for (; j + w <= n; j += w) block1<T>(count, b, n, j, coef, out + j, accumulate);
    for (; j < n; ++j) {
        T s = accumulate ? out[j] : T{0};
        for (std::size_t r = 0; r < count; ++r) s += coef(r) * b[r * n + j];
        out[j] = s;
    }
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        row_update<T>(k, b, n, [arow](std::size_t p) { return arow[p]; }, c + i * n, accumulate);
    }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate) {
    for (std::size_t p = 0; p < k; ++p) {
        row_update<T>(m, b, n, [a, k, p](std::size_t i) { return a[i * k + p]; }, c + p * n, accumulate);
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
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    std::size_t i = 0;
    for (; i + w <= n; i += w) V::store(y + i, V::max(V::load(x + i), V::zero()));
    for (; i < n; ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
}

template <typename T>
void relu_backward(const T* x, const T* g, T* gx, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    std::size_t i = 0;
    for (; i + w <= n; i += w) {
        V::store(gx + i, V::add(V::load(gx + i), V::mask_gt(V::load(x + i), V::zero(), V::load(g + i))));
    }
    for (; i < n; ++i) {
        if (x[i] > T{0}) gx[i] += g[i];
    }
}

template <typename T>
void gather_rows(const T* src, std::size_t cols, const std::int32_t* idx, std::size_t n_idx, T* dst) {
    for (std::size_t i = 0; i < n_idx; ++i) {
        std::memcpy(dst + i * cols, src + static_cast<std::size_t>(idx[i]) * cols, cols * sizeof(T));
    }
}

template <typename T>
void scatter_add_rows(const T* src, std::size_t cols, const std::int32_t* idx, std::size_t n_rows, T* dst) {
    using V = Vec<T>;
    constexpr std::size_t w = V::width;
    for (std::size_t i = 0; i < n_rows; ++i) {
        T* out = dst + static_cast<std::size_t>(idx[i]) * cols;
        const T* in = src + i * cols;
        std::size_t j = 0;
        for (; j + w <= cols; j += w) V::store(out + j, V::add(V::load(out + j), V::load(in + j)));
        for (; j < cols; ++j) out[j] += in[j];
    }
}

template <typename T>
constexpr KernelTable<T> make_table() {
    return {Isa::Avx2, &dot<T>,  &axpy<T>, &gemm_nn<T>,          &gemm_tn<T>, &gemm_nt<T>,
            &relu<T>,  &relu_backward<T>, &gather_rows<T>, &scatter_add_rows<T>};
}

constexpr KernelTable<float> kAvx2F32 = make_table<float>();
constexpr KernelTable<double> kAvx2F64 = make_table<double>();

}  // namespace

template <>
const KernelTable<float>* avx2_table<float>() {
    return &kAvx2F32;
}
template <>
const KernelTable<double>* avx2_table<double>() {
    return &kAvx2F64;
}

#else

template <>
const KernelTable<float>* avx2_table<float>() {
    return nullptr;
}
template <>
const KernelTable<double>* avx2_table<double>() {
    return nullptr;
}

#endif

}  // namespace ragnet::kernels::detail
