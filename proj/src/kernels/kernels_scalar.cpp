#include <cmath>

#include "sdfit/kernels.hpp"

// Reference implementations. Accumulation order here is the contract the
// SIMD backends reproduce (see kernels.hpp).

namespace sdfit::kernels {
namespace {

void matvec_scalar(const double* w, const double* x, double* y, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = w + i * n;
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc = std::fma(row[k], x[k], acc);
        y[i] = acc;
    }
}

void matvec4_scalar(const double* w, const double* x, double* y, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = w + i * n;
        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double* xk = x + 4 * k;
            a0 = std::fma(row[k], xk[0], a0);
            a1 = std::fma(row[k], xk[1], a1);
            a2 = std::fma(row[k], xk[2], a2);
            a3 = std::fma(row[k], xk[3], a3);
        }
        double* yi = y + 4 * i;
        yi[0] = a0;
        yi[1] = a1;
        yi[2] = a2;
        yi[3] = a3;
    }
}

void matvec_t_scalar(const double* w, const double* x, double* y, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = w + i * n;
        double xi = x[i];
        for (std::size_t k = 0; k < n; ++k) y[k] = std::fma(row[k], xi, y[k]);
    }
}

void matvec_t4_scalar(const double* w, const double* x, double* y, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = w + i * n;
        const double* xi = x + 4 * i;
        for (std::size_t k = 0; k < n; ++k) {
            double* yk = y + 4 * k;
            yk[0] = std::fma(row[k], xi[0], yk[0]);
            yk[1] = std::fma(row[k], xi[1], yk[1]);
            yk[2] = std::fma(row[k], xi[2], yk[2]);
            yk[3] = std::fma(row[k], xi[3], yk[3]);
        }
    }
}

void ger_scalar(const double* u, const double* v, double* g, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double ui = u[i];
        double* row = g + i * n;
        for (std::size_t j = 0; j < n; ++j) row[j] = std::fma(ui, v[j], row[j]);
    }
}

void ger4_scalar(const double* u, const double* v, double* g, std::size_t m, std::size_t n) {
    // Per element: ((u0*v0 + u1*v1) + (u2*v2 + u3*v3)), a fixed pairwise tree.
    for (std::size_t i = 0; i < m; ++i) {
        const double* ui = u + 4 * i;
        double* row = g + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* vj = v + 4 * j;
            double s01 = std::fma(ui[0], vj[0], ui[1] * vj[1]);
            double s23 = std::fma(ui[2], vj[2], ui[3] * vj[3]);
            row[j] += s01 + s23;
        }
    }
}

void adam_scalar(double* p, const double* grad, double* m, double* v, std::size_t count,
                 const AdamHyper& h, long t) {
    double c1 = 1.0 - std::pow(h.beta1, double(t));
    double c2 = 1.0 - std::pow(h.beta2, double(t));
    for (std::size_t i = 0; i < count; ++i) {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grad[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
        double mhat = m[i] / c1;
        double vhat = v[i] / c2;
        p[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
}

}  // namespace

const Backend& scalar_backend() {
    static const Backend b = {"scalar",         matvec_scalar, matvec4_scalar, matvec_t_scalar,
                              matvec_t4_scalar, ger_scalar,    ger4_scalar,    adam_scalar};
    return b;
}

}  // namespace sdfit::kernels
