#pragma once

#include <cstddef>
#include <string>

// Dense double-precision kernels behind the field evaluator and the Adam
// update. Matrices are row-major. The "4" variants operate on a value column
// plus three spatial-tangent columns packed row-contiguously (n x 4), which
// is the hot layout of the forward-with-tangents and backward passes.
//
// Contract between backends: matvec4 / matvec_t / matvec_t4 / ger / ger4 /
// adam_update are bit-identical to the scalar reference (same fma order per
// output element). matvec reduces in lanes, so it only promises agreement to
// a small relative tolerance.

namespace sdfit::kernels {

struct AdamHyper {
    double lr;
    double beta1;
    double beta2;
    double eps;
};

struct Backend {
    const char* name;

    // y[m] = W[m x n] * x[n]
    void (*matvec)(const double* w, const double* x, double* y, std::size_t m, std::size_t n);
    // Y[m x 4] = W[m x n] * X[n x 4]
    void (*matvec4)(const double* w, const double* x, double* y, std::size_t m, std::size_t n);
    // y[n] += W[m x n]^T * x[m]
    void (*matvec_t)(const double* w, const double* x, double* y, std::size_t m, std::size_t n);
    // Y[n x 4] += W[m x n]^T * X[m x 4]
    void (*matvec_t4)(const double* w, const double* x, double* y, std::size_t m, std::size_t n);
    // G[m x n] += u[m] * v[n]^T
    void (*ger)(const double* u, const double* v, double* g, std::size_t m, std::size_t n);
    // G[m x n] += U[m x 4] * V[n x 4]^T
    void (*ger4)(const double* u, const double* v, double* g, std::size_t m, std::size_t n);
    // Adam step with bias correction; t is the 1-based step index.
    void (*adam_update)(double* p, const double* grad, double* m, double* v, std::size_t count,
                        const AdamHyper& h, long t);
};

const Backend& scalar_backend();
/// AVX2+FMA backend, or nullptr when unsupported (non-x86 build or old CPU).
const Backend* avx2_backend();

/// Backend picked at startup: AVX2 when the CPU supports it, else scalar.
/// SDFIT_KERNELS=scalar|avx2 overrides (unsupported request falls back).
const Backend& active_backend();

}  // namespace sdfit::kernels
