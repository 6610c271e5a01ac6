#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

#include "sdfit/kernels.hpp"

namespace sdfit::kernels {
namespace {

// Lane-parallel dot; reduction order differs from the scalar reference,
// so this kernel is tolerance-equivalent only.
void matvec_avx2(const double* w, const double* x, double* y, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = w + i * n;
        __m256d acc = _mm256_setzero_pd();
        std::size_t k = 0;
        for (; k + 4 <= n; k += 4) acc = _mm256_fmadd_pd(_mm256_loadu_pd(row + k), _mm256_loadu_pd(x + k), acc);
        __m128d lo = _mm256_castpd256_pd128(acc);
        __m128d hi = _mm256_extractf128_pd(acc, 1);
        __m128d s = _mm_add_pd(lo, hi);
        double total = _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
        for (; k < n; ++k) total = std::fma(row[k], x[k], total);
        y[i] = total;
    }
}

void matvec4_avx2(const double* w, const double* x, double* y, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = w + i * n;
        __m256d acc = _mm256_setzero_pd();
        for (std::size_t k = 0; k < n; ++k)
            acc = _mm256_fmadd_pd(_mm256_set1_pd(row[k]), _mm256_loadu_pd(x + 4 * k), acc);
        _mm256_storeu_pd(y + 4 * i, acc);
    }
}

void matvec_t_avx2(const double* w, const double* x, double* y, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = w + i * n;
        __m256d xi = _mm256_set1_pd(x[i]);
        std::size_t k = 0;
        for (; k + 4 <= n; k += 4)
            _mm256_storeu_pd(y + k, _mm256_fmadd_pd(_mm256_loadu_pd(row + k), xi, _mm256_loadu_pd(y + k)));
        for (; k < n; ++k) y[k] = std::fma(row[k], x[i], y[k]);
    }
}

void matvec_t4_avx2(const double* w, const double* x, double* y, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = w + i * n;
        __m256d xi = _mm256_loadu_pd(x + 4 * i);
        for (std::size_t k = 0; k < n; ++k) {
            double* yk = y + 4 * k;
            _mm256_storeu_pd(yk, _mm256_fmadd_pd(_mm256_set1_pd(row[k]), xi, _mm256_loadu_pd(yk)));
        }
    }
}

void ger_avx2(const double* u, const double* v, double* g, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        __m256d ui = _mm256_set1_pd(u[i]);
        double* row = g + i * n;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4)
            _mm256_storeu_pd(row + j, _mm256_fmadd_pd(ui, _mm256_loadu_pd(v + j), _mm256_loadu_pd(row + j)));
        for (; j < n; ++j) row[j] = std::fma(u[i], v[j], row[j]);
    }
}

inline double ger4_cell(const double* ui, const double* vj) {
    double s01 = std::fma(ui[0], vj[0], ui[1] * vj[1]);
    double s23 = std::fma(ui[2], vj[2], ui[3] * vj[3]);
    return s01 + s23;
}

void ger4_avx2(const double* u, const double* v, double* g, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ui = u + 4 * i;
        __m256d u0 = _mm256_set1_pd(ui[0]);
        __m256d u1 = _mm256_set1_pd(ui[1]);
        __m256d u2 = _mm256_set1_pd(ui[2]);
        __m256d u3 = _mm256_set1_pd(ui[3]);
        double* row = g + i * n;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            // Transpose the 4x4 block of V so each column is one tangent slot.
            __m256d r0 = _mm256_loadu_pd(v + 4 * j);
            __m256d r1 = _mm256_loadu_pd(v + 4 * (j + 1));
            __m256d r2 = _mm256_loadu_pd(v + 4 * (j + 2));
            __m256d r3 = _mm256_loadu_pd(v + 4 * (j + 3));
            __m256d t0 = _mm256_unpacklo_pd(r0, r1);
            __m256d t1 = _mm256_unpackhi_pd(r0, r1);
            __m256d t2 = _mm256_unpacklo_pd(r2, r3);
            __m256d t3 = _mm256_unpackhi_pd(r2, r3);
            __m256d c0 = _mm256_permute2f128_pd(t0, t2, 0x20);
            __m256d c1 = _mm256_permute2f128_pd(t1, t3, 0x20);
            __m256d c2 = _mm256_permute2f128_pd(t0, t2, 0x31);
            __m256d c3 = _mm256_permute2f128_pd(t1, t3, 0x31);
            // Same tree as the scalar reference: fma(u0,v0,u1*v1) + fma(u2,v2,u3*v3).
            __m256d s01 = _mm256_fmadd_pd(u0, c0, _mm256_mul_pd(u1, c1));
            __m256d s23 = _mm256_fmadd_pd(u2, c2, _mm256_mul_pd(u3, c3));
            __m256d sum = _mm256_add_pd(s01, s23);
            _mm256_storeu_pd(row + j, _mm256_add_pd(_mm256_loadu_pd(row + j), sum));
        }
        for (; j < n; ++j) row[j] += ger4_cell(ui, v + 4 * j);
    }
}

void adam_avx2(double* p, const double* grad, double* m, double* v, std::size_t count,
               const AdamHyper& h, long t) {
    double c1 = 1.0 - std::pow(h.beta1, double(t));
    double c2 = 1.0 - std::pow(h.beta2, double(t));
    __m256d b1 = _mm256_set1_pd(h.beta1);
    __m256d b2 = _mm256_set1_pd(h.beta2);
    __m256d ob1 = _mm256_set1_pd(1.0 - h.beta1);
    __m256d ob2 = _mm256_set1_pd(1.0 - h.beta2);
    __m256d rc1 = _mm256_set1_pd(c1);
    __m256d rc2 = _mm256_set1_pd(c2);
    __m256d lr = _mm256_set1_pd(h.lr);
    __m256d eps = _mm256_set1_pd(h.eps);
    std::size_t i = 0;
    for (; i + 4 <= count; i += 4) {
        __m256d gi = _mm256_loadu_pd(grad + i);
        __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(ob1, gi));
        __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                                   _mm256_mul_pd(_mm256_mul_pd(ob2, gi), gi));
        _mm256_storeu_pd(m + i, mi);
        _mm256_storeu_pd(v + i, vi);
        __m256d mhat = _mm256_div_pd(mi, rc1);
        __m256d vhat = _mm256_div_pd(vi, rc2);
        __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, mhat), _mm256_add_pd(_mm256_sqrt_pd(vhat), eps));
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
    }
    for (; i < count; ++i) {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grad[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
        double mhat = m[i] / c1;
        double vhat = v[i] / c2;
        p[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
}

}  // namespace

const Backend* avx2_backend() {
    if (!__builtin_cpu_supports("avx2") || !__builtin_cpu_supports("fma")) return nullptr;
    static const Backend b = {"avx2",         matvec_avx2, matvec4_avx2, matvec_t_avx2,
                              matvec_t4_avx2, ger_avx2,    ger4_avx2,    adam_avx2};
    return &b;
}

}  // namespace sdfit::kernels

#else

#include "sdfit/kernels.hpp"

namespace sdfit::kernels {
const Backend* avx2_backend() { return nullptr; }
}  // namespace sdfit::kernels

#endif
