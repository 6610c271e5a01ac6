#include "sdfit/field.hpp"

#include <algorithm>
#include <cmath>

#include "sdfit/kernels.hpp"

namespace sdfit {

using kernels::active_backend;

void FieldShape::validate() const {
    grid.validate();
    if (grid.dims[0] < 2 || grid.dims[1] < 2 || grid.dims[2] < 2)
        throw ConfigError("feature grid needs at least 2 nodes per axis");
    if (channels < 1) throw ConfigError("feature channels must be >= 1");
    if (pe_freqs < 0) throw ConfigError("pe_freqs must be >= 0");
    if (hidden < 1) throw ConfigError("hidden width must be >= 1");
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (omega0 <= 0) throw ConfigError("omega0 must be positive");
    if (phi_scale <= 0) throw ConfigError("phi_scale must be positive");
    normalization.validate();
}

bool FieldShape::operator==(const FieldShape& o) const {
    return grid == o.grid && channels == o.channels && pe_freqs == o.pe_freqs && hidden == o.hidden &&
           num_classes == o.num_classes && omega0 == o.omega0 && phi_scale == o.phi_scale &&
           normalization.lo == o.normalization.lo &&
           normalization.hi == o.normalization.hi;
}

namespace {

HeadLayout layout_at(const FieldShape& s, std::int64_t base, int out_dim) {
    HeadLayout ly;
    std::int64_t in = s.input_dim(), h = s.hidden;
    ly.w1 = base;
    ly.b1 = ly.w1 + h * in;
    ly.w2 = ly.b1 + h;
    ly.b2 = ly.w2 + h * h;
    ly.w3 = ly.b2 + h;
    ly.b3 = ly.w3 + std::int64_t(out_dim) * h;
    (void)out_dim;
    return ly;
}

}  // namespace

HeadLayout FieldParams::sdf_layout() const { return layout_at(shape, shape.grid_param_count(), 1); }

HeadLayout FieldParams::sem_layout() const {
    return layout_at(shape, shape.grid_param_count() + shape.head_param_count(1), shape.num_classes);
}

FieldParams FieldParams::init(const FieldShape& shape, std::uint64_t seed, double grid_init_std) {
    shape.validate();
    FieldParams p;
    p.shape = shape;
    p.values.assign(std::size_t(shape.param_count()), 0.0);
    Rng rng(seed);
    for (std::int64_t i = 0; i < shape.grid_param_count(); ++i)
        p.values[std::size_t(i)] = rng.normal(0.0, grid_init_std);

    // Sine-MLP init: first layer +-1/fan_in, later layers +-sqrt(6/fan_in)/omega0.
    // Biases start at zero.
    // The output layer divides by the head's fixed output scale so the
    // initial field magnitude is independent of phi_scale.
    auto init_head = [&](const HeadLayout& ly, int out_dim, double out_scale) {
        std::int64_t in = shape.input_dim(), h = shape.hidden;
        double s1 = 1.0 / double(in);
        double s2 = std::sqrt(6.0 / double(h)) / shape.omega0;
        for (std::int64_t i = 0; i < h * in; ++i) p.values[std::size_t(ly.w1 + i)] = rng.uniform(-s1, s1);
        for (std::int64_t i = 0; i < h * h; ++i) p.values[std::size_t(ly.w2 + i)] = rng.uniform(-s2, s2);
        double s3 = s2 / out_scale;
        for (std::int64_t i = 0; i < std::int64_t(out_dim) * h; ++i)
            p.values[std::size_t(ly.w3 + i)] = rng.uniform(-s3, s3);
    };
    init_head(p.sdf_layout(), 1, shape.phi_scale);
    init_head(p.sem_layout(), shape.num_classes, 1.0);
    return p;
}

// ------------------------------------------------------------- primitives

void positional_encode(const Vec3& normalized, int freqs, double* out) {
    int idx = 0;
    for (int axis = 0; axis < 3; ++axis) {
        double v = normalized[axis];
        for (int k = 0; k < freqs; ++k) {
            double f = std::ldexp(M_PI, k);  // 2^k * pi
            out[idx++] = std::sin(f * v);
            out[idx++] = std::cos(f * v);
        }
    }
}

TrilinearCell trilinear_cell(const GridSpec& grid, const Vec3& x) {
    TrilinearCell cell;
    int base[3];
    double f[3];
    double dscale[3];
    for (int a = 0; a < 3; ++a) {
        double t = (x[a] - grid.origin[a]) / grid.voxel_size;
        double t_max = double(grid.dims[a] - 1);
        dscale[a] = 1.0 / grid.voxel_size;
        if (t < 0.0 || t > t_max) {
            cell.clamped = true;
            dscale[a] = 0.0;
            t = std::clamp(t, 0.0, t_max);
        }
        int i = std::min(int(std::floor(t)), grid.dims[a] - 2);
        if (i < 0) i = 0;
        base[a] = i;
        f[a] = t - i;
    }
    int c = 0;
    for (int cx = 0; cx < 2; ++cx)
        for (int cy = 0; cy < 2; ++cy)
            for (int cz = 0; cz < 2; ++cz, ++c) {
                double wx = cx ? f[0] : 1.0 - f[0];
                double wy = cy ? f[1] : 1.0 - f[1];
                double wz = cz ? f[2] : 1.0 - f[2];
                double sx = cx ? 1.0 : -1.0;
                double sy = cy ? 1.0 : -1.0;
                double sz = cz ? 1.0 : -1.0;
                cell.corner[c] = grid.flat_index(base[0] + cx, base[1] + cy, base[2] + cz);
                cell.weight[c] = wx * wy * wz;
                cell.dweight[c][0] = sx * wy * wz * dscale[0];
                cell.dweight[c][1] = wx * sy * wz * dscale[1];
                cell.dweight[c][2] = wx * wy * sz * dscale[2];
            }
    return cell;
}

void trilinear_query(const GridSpec& grid, int channels, std::span<const double> values, const Vec3& x,
                     double* out, bool* clamped) {
    TrilinearCell cell = trilinear_cell(grid, x);
    if (clamped) *clamped = cell.clamped;
    std::fill(out, out + channels, 0.0);
    for (int c = 0; c < 8; ++c) {
        const double* node = values.data() + cell.corner[c] * channels;
        for (int ch = 0; ch < channels; ++ch) out[ch] = std::fma(cell.weight[c], node[ch], out[ch]);
    }
}

Vec3 jitter_into_cell(const GridSpec& grid, const Vec3& x, double margin) {
    Vec3 out = x;
    for (int a = 0; a < 3; ++a) {
        double t = std::clamp((x[a] - grid.origin[a]) / grid.voxel_size, 0.0, double(grid.dims[a] - 1));
        int i = std::min(int(std::floor(t)), grid.dims[a] - 2);
        if (i < 0) i = 0;
        double f = std::clamp(t - i, margin, 1.0 - margin);
        out[a] = grid.origin[a] + (i + f) * grid.voxel_size;
    }
    return out;
}

// ------------------------------------------------------------- evaluator

FieldEvaluator::FieldEvaluator(const FieldParams& params) : params_(params) {
    params_.shape.validate();
    if (std::int64_t(params_.values.size()) != params_.shape.param_count())
        throw ConfigError("parameter vector size does not match shape");
    std::size_t in = std::size_t(params_.shape.input_dim());
    std::size_t h = std::size_t(params_.shape.hidden);
    std::size_t s = std::size_t(params_.shape.num_classes);
    u4_.resize(in * 4);
    z1_4_.resize(h * 4);
    a1_4_.resize(h * 4);
    z2_4_.resize(h * 4);
    a2_4_.resize(h * 4);
    u_.resize(in);
    z1s_.resize(h);
    a1s_.resize(h);
    z2s_.resize(h);
    a2s_.resize(h);
    sem_.resize(s);
    lam4_.resize(std::max(in, h) * 4);
    lam4b_.resize(h * 4);
    lam_out4_.resize(4);
    lam_s_.resize(std::max(in, h));
    lam_sb_.resize(h);
}

void FieldEvaluator::forward_head_value(const HeadLayout& ly, const double* u, double* z1, double* a1,
                                        double* z2, double* a2, double* out, int out_dim) {
    const auto& k = active_backend();
    const double* p = params_.values.data();
    int in = params_.shape.input_dim(), h = params_.shape.hidden;
    double w0 = params_.shape.omega0;
    k.matvec(p + ly.w1, u, z1, std::size_t(h), std::size_t(in));
    for (int i = 0; i < h; ++i) {
        z1[i] += p[ly.b1 + i];
        a1[i] = std::sin(w0 * z1[i]);
    }
    k.matvec(p + ly.w2, a1, z2, std::size_t(h), std::size_t(h));
    for (int i = 0; i < h; ++i) {
        z2[i] += p[ly.b2 + i];
        a2[i] = std::sin(w0 * z2[i]);
    }
    k.matvec(p + ly.w3, a2, out, std::size_t(out_dim), std::size_t(h));
    for (int i = 0; i < out_dim; ++i) out[i] += p[ly.b3 + i];
}

void FieldEvaluator::forward_head_tangent(const HeadLayout& ly) {
    const auto& k = active_backend();
    const double* p = params_.values.data();
    int in = params_.shape.input_dim(), h = params_.shape.hidden;
    double w0 = params_.shape.omega0;

    auto sine4 = [&](const double* z, double* a) {
        for (int i = 0; i < h; ++i) {
            double v = z[4 * i];
            double sv = std::sin(w0 * v), cv = w0 * std::cos(w0 * v);
            a[4 * i] = sv;
            a[4 * i + 1] = cv * z[4 * i + 1];
            a[4 * i + 2] = cv * z[4 * i + 2];
            a[4 * i + 3] = cv * z[4 * i + 3];
        }
    };

    k.matvec4(p + ly.w1, u4_.data(), z1_4_.data(), std::size_t(h), std::size_t(in));
    for (int i = 0; i < h; ++i) z1_4_[4 * i] += p[ly.b1 + i];
    sine4(z1_4_.data(), a1_4_.data());
    k.matvec4(p + ly.w2, a1_4_.data(), z2_4_.data(), std::size_t(h), std::size_t(h));
    for (int i = 0; i < h; ++i) z2_4_[4 * i] += p[ly.b2 + i];
    sine4(z2_4_.data(), a2_4_.data());
    double out4[4];
    k.matvec4(p + ly.w3, a2_4_.data(), out4, 1, std::size_t(h));
    double s = params_.shape.phi_scale;
    value_.phi = s * (out4[0] + p[ly.b3]);
    value_.grad = {s * out4[1], s * out4[2], s * out4[3]};
}

const PointValue& FieldEvaluator::forward(const Vec3& x, bool tangents, bool semantics) {
    const FieldShape& s = params_.shape;
    int c = s.channels, n = s.pe_freqs, in = s.input_dim();

    cell_ = trilinear_cell(s.grid, x);
    if (cell_.clamped) ++clamped_count_;
    value_ = PointValue{};
    value_.clamped = cell_.clamped;

    // Input block: trilinear feature then positional encoding.
    std::fill(u_.begin(), u_.end(), 0.0);
    const double* grid = params_.grid_values();
    for (int corner = 0; corner < 8; ++corner) {
        const double* node = grid + cell_.corner[corner] * c;
        double w = cell_.weight[corner];
        for (int ch = 0; ch < c; ++ch) u_[ch] = std::fma(w, node[ch], u_[ch]);
    }
    Vec3 ext = s.normalization.extent();
    Vec3 xn{2.0 * (x.x - s.normalization.lo.x) / ext.x - 1.0,
            2.0 * (x.y - s.normalization.lo.y) / ext.y - 1.0,
            2.0 * (x.z - s.normalization.lo.z) / ext.z - 1.0};
    positional_encode(xn, n, u_.data() + c);

    if (tangents) {
        std::fill(u4_.begin(), u4_.end(), 0.0);
        for (int ch = 0; ch < in; ++ch) u4_[4 * ch] = u_[std::size_t(ch)];
        for (int corner = 0; corner < 8; ++corner) {
            const double* node = grid + cell_.corner[corner] * c;
            for (int ch = 0; ch < c; ++ch)
                for (int a = 0; a < 3; ++a)
                    u4_[4 * ch + 1 + a] = std::fma(cell_.dweight[corner][a], node[ch], u4_[4 * ch + 1 + a]);
        }
        for (int axis = 0; axis < 3; ++axis) {
            double dn = 2.0 / ext[axis];
            for (int k = 0; k < n; ++k) {
                double f = std::ldexp(M_PI, k);
                int row = c + axis * 2 * n + 2 * k;
                double arg = f * xn[axis];
                u4_[4 * row + 1 + axis] = f * std::cos(arg) * dn;
                u4_[4 * (row + 1) + 1 + axis] = -f * std::sin(arg) * dn;
            }
        }
        forward_head_tangent(params_.sdf_layout());
    } else {
        double out = 0.0;
        forward_head_value(params_.sdf_layout(), u_.data(), z1_4_.data(), a1_4_.data(), z2_4_.data(),
                           a2_4_.data(), &out, 1);
        value_.phi = s.phi_scale * out;
    }

    if (semantics) {
        forward_head_value(params_.sem_layout(), u_.data(), z1s_.data(), a1s_.data(), z2s_.data(),
                           a2s_.data(), sem_.data(), s.num_classes);
        value_.sem = std::span<const double>(sem_.data(), sem_.size());
        if (!all_finite(sem_.data(), sem_.size())) throw NonFiniteValue("semantic head produced non-finite logits");
    }
    if (!std::isfinite(value_.phi) || (tangents && !std::isfinite(value_.grad.x + value_.grad.y + value_.grad.z)))
        throw NonFiniteValue("field produced a non-finite value");

    has_tangents_ = tangents;
    has_sem_ = semantics;
    return value_;
}

void FieldEvaluator::backward(const PointAdjoint& adj, FieldGrad& grad) {
    const auto& k = active_backend();
    const FieldShape& s = params_.shape;
    const double* p = params_.values.data();
    double* g = grad.values.data();
    int in = s.input_dim(), h = s.hidden, c = s.channels;
    double w0 = s.omega0;

    bool want_grad = adj.d_grad.x != 0.0 || adj.d_grad.y != 0.0 || adj.d_grad.z != 0.0;
    if (want_grad && !has_tangents_)
        throw NumericError("gradient adjoint requires a tangent forward pass");
    if (!adj.d_sem.empty() && !has_sem_)
        throw NumericError("semantic adjoint requires a semantic forward pass");

    // Packed adjoint transform through a sine layer: consumes d(activation)
    // columns, produces d(pre-activation) columns in place.
    auto sine_back4 = [&](const double* z, double* lam) {
        for (int i = 0; i < h; ++i) {
            double v = z[4 * i];
            double cv = w0 * std::cos(w0 * v);
            double sv = w0 * w0 * std::sin(w0 * v);
            double mix = z[4 * i + 1] * lam[4 * i + 1] + z[4 * i + 2] * lam[4 * i + 2] +
                         z[4 * i + 3] * lam[4 * i + 3];
            lam[4 * i] = cv * lam[4 * i] - sv * mix;
            lam[4 * i + 1] *= cv;
            lam[4 * i + 2] *= cv;
            lam[4 * i + 3] *= cv;
        }
    };

    std::fill(lam4_.begin(), lam4_.end(), 0.0);

    if (has_tangents_) {
        HeadLayout ly = params_.sdf_layout();
        double ps = s.phi_scale;
        lam_out4_[0] = ps * adj.d_phi;
        lam_out4_[1] = ps * adj.d_grad.x;
        lam_out4_[2] = ps * adj.d_grad.y;
        lam_out4_[3] = ps * adj.d_grad.z;
        g[ly.b3] += lam_out4_[0];
        k.ger4(lam_out4_.data(), a2_4_.data(), g + ly.w3, 1, std::size_t(h));
        std::fill(lam4b_.begin(), lam4b_.end(), 0.0);
        k.matvec_t4(p + ly.w3, lam_out4_.data(), lam4b_.data(), 1, std::size_t(h));
        sine_back4(z2_4_.data(), lam4b_.data());
        for (int i = 0; i < h; ++i) g[ly.b2 + i] += lam4b_[4 * i];
        k.ger4(lam4b_.data(), a1_4_.data(), g + ly.w2, std::size_t(h), std::size_t(h));
        // Reuse the wide buffer for the layer-1 activation adjoint.
        std::fill(lam4_.begin(), lam4_.begin() + 4 * h, 0.0);
        k.matvec_t4(p + ly.w2, lam4b_.data(), lam4_.data(), std::size_t(h), std::size_t(h));
        sine_back4(z1_4_.data(), lam4_.data());
        for (int i = 0; i < h; ++i) g[ly.b1 + i] += lam4_[4 * i];
        k.ger4(lam4_.data(), u4_.data(), g + ly.w1, std::size_t(h), std::size_t(in));
        std::copy(lam4_.begin(), lam4_.begin() + 4 * h, lam4b_.begin());
        std::fill(lam4_.begin(), lam4_.end(), 0.0);
        k.matvec_t4(p + ly.w1, lam4b_.data(), lam4_.data(), std::size_t(h), std::size_t(in));
    } else if (adj.d_phi != 0.0) {
        HeadLayout ly = params_.sdf_layout();
        // Value-only chain; activations live in the col-contiguous buffers.
        double dout = s.phi_scale * adj.d_phi;
        g[ly.b3] += dout;
        k.ger(&dout, a2_4_.data(), g + ly.w3, 1, std::size_t(h));
        std::fill(lam_s_.begin(), lam_s_.end(), 0.0);
        k.matvec_t(p + ly.w3, &dout, lam_s_.data(), 1, std::size_t(h));
        for (int i = 0; i < h; ++i) lam_s_[std::size_t(i)] *= w0 * std::cos(w0 * z2_4_[std::size_t(i)]);
        for (int i = 0; i < h; ++i) g[ly.b2 + i] += lam_s_[std::size_t(i)];
        k.ger(lam_s_.data(), a1_4_.data(), g + ly.w2, std::size_t(h), std::size_t(h));
        std::fill(lam_sb_.begin(), lam_sb_.end(), 0.0);
        k.matvec_t(p + ly.w2, lam_s_.data(), lam_sb_.data(), std::size_t(h), std::size_t(h));
        for (int i = 0; i < h; ++i) lam_sb_[std::size_t(i)] *= w0 * std::cos(w0 * z1_4_[std::size_t(i)]);
        for (int i = 0; i < h; ++i) g[ly.b1 + i] += lam_sb_[std::size_t(i)];
        k.ger(lam_sb_.data(), u_.data(), g + ly.w1, std::size_t(h), std::size_t(in));
        std::fill(lam_s_.begin(), lam_s_.end(), 0.0);
        k.matvec_t(p + ly.w1, lam_sb_.data(), lam_s_.data(), std::size_t(h), std::size_t(in));
        for (int ch = 0; ch < in; ++ch) lam4_[std::size_t(4 * ch)] = lam_s_[std::size_t(ch)];
    }

    if (!adj.d_sem.empty()) {
        HeadLayout ly = params_.sem_layout();
        int out = s.num_classes;
        const double* ds = adj.d_sem.data();
        for (int i = 0; i < out; ++i) g[ly.b3 + i] += ds[i];
        k.ger(ds, a2s_.data(), g + ly.w3, std::size_t(out), std::size_t(h));
        std::fill(lam_s_.begin(), lam_s_.end(), 0.0);
        k.matvec_t(p + ly.w3, ds, lam_s_.data(), std::size_t(out), std::size_t(h));
        for (int i = 0; i < h; ++i) lam_s_[std::size_t(i)] *= w0 * std::cos(w0 * z2s_[std::size_t(i)]);
        for (int i = 0; i < h; ++i) g[ly.b2 + i] += lam_s_[std::size_t(i)];
        k.ger(lam_s_.data(), a1s_.data(), g + ly.w2, std::size_t(h), std::size_t(h));
        std::fill(lam_sb_.begin(), lam_sb_.end(), 0.0);
        k.matvec_t(p + ly.w2, lam_s_.data(), lam_sb_.data(), std::size_t(h), std::size_t(h));
        for (int i = 0; i < h; ++i) lam_sb_[std::size_t(i)] *= w0 * std::cos(w0 * z1s_[std::size_t(i)]);
        for (int i = 0; i < h; ++i) g[ly.b1 + i] += lam_sb_[std::size_t(i)];
        k.ger(lam_sb_.data(), u_.data(), g + ly.w1, std::size_t(h), std::size_t(in));
        std::fill(lam_s_.begin(), lam_s_.end(), 0.0);
        k.matvec_t(p + ly.w1, lam_sb_.data(), lam_s_.data(), std::size_t(h), std::size_t(in));
        for (int ch = 0; ch < in; ++ch) lam4_[std::size_t(4 * ch)] += lam_s_[std::size_t(ch)];
    }

    // Scatter the input adjoint into the feature grid (encoding rows carry
    // no parameters). Tangent rows flow through d(weight)/dx.
    for (int corner = 0; corner < 8; ++corner) {
        double* node = g + cell_.corner[corner] * c;
        double w = cell_.weight[corner];
        const double* dw = cell_.dweight[corner];
        for (int ch = 0; ch < c; ++ch) {
            double acc = w * lam4_[std::size_t(4 * ch)];
            if (has_tangents_)
                acc += dw[0] * lam4_[std::size_t(4 * ch + 1)] + dw[1] * lam4_[std::size_t(4 * ch + 2)] +
                       dw[2] * lam4_[std::size_t(4 * ch + 3)];
            node[ch] += acc;
        }
    }
}

// ------------------------------------------------------------- module ops

double sdf_forward(const FieldParams& params, const Vec3& x) {
    FieldEvaluator ev(params);
    return ev.forward(x, false, false).phi;
}

std::vector<double> sem_forward(const FieldParams& params, const Vec3& x) {
    FieldEvaluator ev(params);
    const PointValue& v = ev.forward(x, false, true);
    return {v.sem.begin(), v.sem.end()};
}

Vec3 spatial_gradient(const FieldParams& params, const Vec3& x) {
    const GridSpec& g = params.shape.grid;
    for (int a = 0; a < 3; ++a) {
        double t = (x[a] - g.origin[a]) / g.voxel_size;
        if (t < 0.0 || t > double(g.dims[a] - 1))
            throw CellBoundary("point outside the feature grid");
        double f = t - std::floor(t);
        if (std::min(f, 1.0 - f) <= 1e-9)
            throw CellBoundary("point lies on a feature-cell face; jitter before differentiating");
    }
    FieldEvaluator ev(params);
    return ev.forward(x, true, false).grad;
}

}  // namespace sdfit
