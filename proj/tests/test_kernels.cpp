#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "sdfit/core.hpp"
#include "sdfit/kernels.hpp"

using namespace sdfit;
using namespace sdfit::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
}

}  // namespace

TEST_CASE("scalar and avx2 backends agree") {
    const Backend* avx2 = avx2_backend();
    if (!avx2) return;  // non-x86 or old CPU: dispatch falls back to scalar
    const Backend& ref = scalar_backend();
    Rng rng(11);

    for (auto [m, n] : {std::pair<int, int>{1, 8}, {8, 1}, {7, 13}, {24, 28}, {32, 32}, {5, 4}}) {
        CAPTURE(m);
        CAPTURE(n);
        auto w = random_vec(std::size_t(m) * n, rng);
        auto x4 = random_vec(std::size_t(n) * 4, rng);
        auto x = random_vec(std::size_t(n), rng);
        auto xm = random_vec(std::size_t(m), rng);
        auto xm4 = random_vec(std::size_t(m) * 4, rng);

        // matvec4: bit-identical by contract.
        std::vector<double> ya(static_cast<std::size_t>(m) * 4), yb(static_cast<std::size_t>(m) * 4);
        ref.matvec4(w.data(), x4.data(), ya.data(), std::size_t(m), std::size_t(n));
        avx2->matvec4(w.data(), x4.data(), yb.data(), std::size_t(m), std::size_t(n));
        CHECK(ya == yb);

        // matvec: lane reduction, tolerance equivalence only.
        std::vector<double> za(static_cast<std::size_t>(m)), zb(static_cast<std::size_t>(m));
        ref.matvec(w.data(), x.data(), za.data(), std::size_t(m), std::size_t(n));
        avx2->matvec(w.data(), x.data(), zb.data(), std::size_t(m), std::size_t(n));
        for (int i = 0; i < m; ++i)
            CHECK(std::abs(za[std::size_t(i)] - zb[std::size_t(i)]) <=
                  1e-13 * (1.0 + std::abs(za[std::size_t(i)])));

        // matvec_t / matvec_t4 accumulate; bit-identical.
        auto ta = random_vec(std::size_t(n), rng);
        auto tb = ta;
        ref.matvec_t(w.data(), xm.data(), ta.data(), std::size_t(m), std::size_t(n));
        avx2->matvec_t(w.data(), xm.data(), tb.data(), std::size_t(m), std::size_t(n));
        CHECK(ta == tb);

        auto t4a = random_vec(std::size_t(n) * 4, rng);
        auto t4b = t4a;
        ref.matvec_t4(w.data(), xm4.data(), t4a.data(), std::size_t(m), std::size_t(n));
        avx2->matvec_t4(w.data(), xm4.data(), t4b.data(), std::size_t(m), std::size_t(n));
        CHECK(t4a == t4b);

        // ger / ger4: bit-identical.
        auto ga = random_vec(std::size_t(m) * n, rng);
        auto gb = ga;
        ref.ger(xm.data(), x.data(), ga.data(), std::size_t(m), std::size_t(n));
        avx2->ger(xm.data(), x.data(), gb.data(), std::size_t(m), std::size_t(n));
        CHECK(ga == gb);

        auto g4a = random_vec(std::size_t(m) * n, rng);
        auto g4b = g4a;
        ref.ger4(xm4.data(), x4.data(), g4a.data(), std::size_t(m), std::size_t(n));
        avx2->ger4(xm4.data(), x4.data(), g4b.data(), std::size_t(m), std::size_t(n));
        CHECK(g4a == g4b);
    }
}

TEST_CASE("adam backends agree bit for bit") {
    const Backend* avx2 = avx2_backend();
    if (!avx2) return;
    Rng rng(5);
    for (std::size_t count : {std::size_t(1), std::size_t(4), std::size_t(7), std::size_t(129)}) {
        auto p1 = random_vec(count, rng);
        auto g = random_vec(count, rng);
        auto m1 = random_vec(count, rng);
        auto v1 = random_vec(count, rng);
        for (auto& x : v1) x = std::abs(x);
        auto p2 = p1, m2 = m1, v2 = v1;
        AdamHyper h{1e-3, 0.9, 0.999, 1e-8};
        scalar_backend().adam_update(p1.data(), g.data(), m1.data(), v1.data(), count, h, 3);
        avx2->adam_update(p2.data(), g.data(), m2.data(), v2.data(), count, h, 3);
        CHECK(p1 == p2);
        CHECK(m1 == m2);
        CHECK(v1 == v2);
    }
}

TEST_CASE("matvec matches a plain triple loop") {
    Rng rng(3);
    int m = 9, n = 17;
    auto w = random_vec(std::size_t(m) * n, rng);
    auto x = random_vec(std::size_t(n), rng);
    std::vector<double> y(static_cast<std::size_t>(m));
    active_backend().matvec(w.data(), x.data(), y.data(), std::size_t(m), std::size_t(n));
    for (int i = 0; i < m; ++i) {
        double acc = 0;
        for (int k = 0; k < n; ++k) acc += w[std::size_t(i * n + k)] * x[std::size_t(k)];
        CHECK(y[std::size_t(i)] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("ger4 accumulates the packed rank-4 outer product") {
    Rng rng(4);
    int m = 6, n = 5;
    auto u = random_vec(std::size_t(m) * 4, rng);
    auto v = random_vec(std::size_t(n) * 4, rng);
    std::vector<double> g(std::size_t(m) * n, 0.0);
    active_backend().ger4(u.data(), v.data(), g.data(), std::size_t(m), std::size_t(n));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double expect = 0;
            for (int c = 0; c < 4; ++c) expect += u[std::size_t(4 * i + c)] * v[std::size_t(4 * j + c)];
            CHECK(g[std::size_t(i * n + j)] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("active backend reports a name") {
    CHECK(std::string(active_backend().name).size() > 0);
}
