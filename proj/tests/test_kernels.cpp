#include <doctest.h>

#include <cmath>

#include "ragnet/kernels.hpp"
#include "ragnet/random.hpp"

using namespace ragnet;
using kernels::Isa;
using kernels::KernelTable;

namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, std::size_t n) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
    return v;
}

template <typename T>
double tolerance() {
    return std::is_same_v<T, float> ? 1e-5 : 1e-13;
}

template <typename T>
void check_close(const std::vector<T>& a, const std::vector<T>& b, double scale) {
    REQUIRE(a.size() == b.size());
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    CHECK(worst <= tolerance<T>() * scale);
}

template <typename T>
void equivalence_suite() {
    const auto& ref = kernels::detail::scalar_table<T>();
    const KernelTable<T>* simd = kernels::table_for<T>(Isa::Avx2);
    if (simd == nullptr) {
        MESSAGE("AVX2 not available on this CPU; equivalence checks skipped");
        return;
    }
    Rng rng(11);
    const std::size_t sizes[] = {0, 1, 3, 4, 7, 8, 9, 15, 16, 17, 31, 33, 64, 100};

    for (std::size_t n : sizes) {
        const auto a = random_vec<T>(rng, n), b = random_vec<T>(rng, n);
        CHECK(std::abs(static_cast<double>(ref.dot(a.data(), b.data(), n) - simd->dot(a.data(), b.data(), n))) <=
              tolerance<T>() * (1.0 + static_cast<double>(n)));

        auto y1 = random_vec<T>(rng, n);
        auto y2 = y1;
        ref.axpy(T(0.7), a.data(), y1.data(), n);
        simd->axpy(T(0.7), a.data(), y2.data(), n);
        check_close(y1, y2, 1.0);

        std::vector<T> r1(n), r2(n);
        ref.relu(a.data(), r1.data(), n);
        simd->relu(a.data(), r2.data(), n);
        CHECK(r1 == r2);

        auto g1 = random_vec<T>(rng, n);
        auto g2 = g1;
        ref.relu_backward(a.data(), b.data(), g1.data(), n);
        simd->relu_backward(a.data(), b.data(), g2.data(), n);
        CHECK(g1 == g2);
    }

    for (std::size_t m : {1, 2, 5, 13}) {
        for (std::size_t k : {1, 3, 8, 17}) {
            for (std::size_t n : {1, 4, 8, 9, 31, 64}) {
                const auto A = random_vec<T>(rng, m * k);
                const auto B = random_vec<T>(rng, k * n);
                for (bool acc : {false, true}) {
                    auto c1 = random_vec<T>(rng, m * n);
                    auto c2 = c1;
                    ref.gemm_nn(m, k, n, A.data(), B.data(), c1.data(), acc);
                    simd->gemm_nn(m, k, n, A.data(), B.data(), c2.data(), acc);
                    check_close(c1, c2, static_cast<double>(k));

                    // A^T: (m x k)^T times (m x n)
                    const auto Bm = random_vec<T>(rng, m * n);
                    auto d1 = random_vec<T>(rng, k * n);
                    auto d2 = d1;
                    ref.gemm_tn(m, k, n, A.data(), Bm.data(), d1.data(), acc);
                    simd->gemm_tn(m, k, n, A.data(), Bm.data(), d2.data(), acc);
                    check_close(d1, d2, static_cast<double>(m));

                    // (m x n) times (k x n)^T
                    const auto An = random_vec<T>(rng, m * n);
                    const auto Bk = random_vec<T>(rng, k * n);
                    auto e1 = random_vec<T>(rng, m * k);
                    auto e2 = e1;
                    ref.gemm_nt(m, k, n, An.data(), Bk.data(), e1.data(), acc);
                    simd->gemm_nt(m, k, n, An.data(), Bk.data(), e2.data(), acc);
                    check_close(e1, e2, static_cast<double>(n));
                }
            }
        }
    }

    for (std::size_t cols : {1, 3, 4, 8, 13, 64}) {
        const std::size_t rows = 20, n_idx = 57;
        const auto src = random_vec<T>(rng, rows * cols);
        std::vector<std::int32_t> idx(n_idx);
        for (auto& i : idx) i = static_cast<std::int32_t>(rng.below(rows));
        std::vector<T> g1(n_idx * cols), g2(n_idx * cols);
        ref.gather_rows(src.data(), cols, idx.data(), n_idx, g1.data());
        simd->gather_rows(src.data(), cols, idx.data(), n_idx, g2.data());
        CHECK(g1 == g2);

        const auto vals = random_vec<T>(rng, n_idx * cols);
        auto s1 = random_vec<T>(rng, rows * cols);
        auto s2 = s1;
        ref.scatter_add_rows(vals.data(), cols, idx.data(), n_idx, s1.data());
        simd->scatter_add_rows(vals.data(), cols, idx.data(), n_idx, s2.data());
        CHECK(s1 == s2);  // same addition order, bitwise equal
    }
}

}  // namespace

TEST_CASE("kernels: scalar and AVX2 agree (float)") { equivalence_suite<float>(); }
TEST_CASE("kernels: scalar and AVX2 agree (double)") { equivalence_suite<double>(); }

TEST_CASE("kernels: scalar gemm matches a naive triple loop") {
    const auto& ref = kernels::detail::scalar_table<double>();
    Rng rng(5);
    const std::size_t m = 4, k = 3, n = 5;
    const auto A = random_vec<double>(rng, m * k), B = random_vec<double>(rng, k * n);
    std::vector<double> c(m * n);
    ref.gemm_nn(m, k, n, A.data(), B.data(), c.data(), false);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[p * n + j];
            CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
        }
    }
}

TEST_CASE("kernels: dispatch") {
    CHECK(kernels::table_for<double>(Isa::Scalar) != nullptr);
    CHECK(kernels::cpu_supports(Isa::Scalar));
    const Isa before = kernels::active_isa();
    kernels::set_active_isa(Isa::Scalar);
    CHECK(kernels::active<float>().isa == Isa::Scalar);
    CHECK(kernels::active_isa() == Isa::Scalar);
    if (kernels::cpu_supports(Isa::Avx2)) {
        kernels::set_active_isa(Isa::Avx2);
        CHECK(kernels::active<double>().isa == Isa::Avx2);
    }
    kernels::set_active_isa(before);
    CHECK(kernels::to_string(Isa::Avx2) == "avx2");
}
