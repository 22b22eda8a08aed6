#include <doctest.h>

#include <vector>

#include "mixgrad/kernels.hpp"
#include "mixgrad/rng.hpp"
#include "testutil.hpp"

using namespace mixgrad;
namespace k = mixgrad::kernels;

// The AVX2 lane must agree with the scalar reference: exactly for
// elementwise kernels, to a tight tolerance for reductions (different
// summation order).
TEST_CASE("scalar and avx2 lanes agree") {
    if (!k::cpu_has_avx2()) return;
#if MIXGRAD_HAVE_AVX2_LANE
    Rng rng(123);
    for (std::size_t n : {1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 31u, 64u, 257u}) {
        auto a = testutil::random_vec(rng, n);
        auto b = testutil::random_vec(rng, n);

        const double ds = k::scalar::dot(a.data(), b.data(), n);
        const double dv = k::avx2::dot(a.data(), b.data(), n);
        CHECK(testutil::rel_err(ds, dv) < 1e-13);

        std::vector<double> ys = testutil::random_vec(rng, n), yv = ys;
        k::scalar::axpy(0.37, a.data(), ys.data(), n);
        k::avx2::axpy(0.37, a.data(), yv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == yv[i]);

        std::vector<double> ms(n), mv(n);
        k::scalar::mix2(0.3, a.data(), 0.7, b.data(), ms.data(), n);
        k::avx2::mix2(0.3, a.data(), 0.7, b.data(), mv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(ms[i] == mv[i]);

        std::vector<double> rs(n), rv(n);
        k::scalar::relu(a.data(), rs.data(), n);
        k::avx2::relu(a.data(), rv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(rs[i] == rv[i]);

        k::scalar::relu_grad(a.data(), b.data(), rs.data(), n);
        k::avx2::relu_grad(a.data(), b.data(), rv.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(rs[i] == rv[i]);

        std::vector<double> ws = testutil::random_vec(rng, n), wv = ws;
        k::scalar::sgd_update(ws.data(), a.data(), 0.01, 0.04, n);
        k::avx2::sgd_update(wv.data(), a.data(), 0.01, 0.04, n);
        for (std::size_t i = 0; i < n; ++i) CHECK(ws[i] == wv[i]);
    }
#endif
}

TEST_CASE("dot matches plain accumulation") {
    Rng rng(5);
    auto a = testutil::random_vec(rng, 100);
    auto b = testutil::random_vec(rng, 100);
    double s = 0.0;
    for (std::size_t i = 0; i < 100; ++i) s += a[i] * b[i];
    CHECK(testutil::rel_err(s, k::dot(a.data(), b.data(), 100)) < 1e-13);
}

TEST_CASE("relu_grad zeroes non-positive lanes") {
    const double x[4] = {-1.0, 0.0, 2.0, -0.0};
    const double up[4] = {5.0, 5.0, 5.0, 5.0};
    double out[4];
    k::relu_grad(x, up, out, 4);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 5.0);
    CHECK(out[3] == 0.0);
}

TEST_CASE("active lane is reported") {
    const auto isa = k::active_isa();
    CHECK((isa == k::Isa::scalar || isa == k::Isa::avx2));
    if (!k::cpu_has_avx2()) CHECK(isa == k::Isa::scalar);
}
