#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sdfit/core.hpp"

// The implicit field: a learnable feature grid queried with trilinear
// interpolation, concatenated with a positional encoding, feeding two
// three-layer sine MLP heads (scalar SDF, per-class semantic logits).
// The evaluator produces exact values, exact spatial gradients, and exact
// parameter gradients of any objective built from {phi, grad phi, logits},
// including the mixed d(grad phi)/d(theta) terms.

namespace sdfit {

struct FieldShape {
    GridSpec grid;         // node grid (dims count nodes)
    int channels = 4;      // feature channels per node
    int pe_freqs = 4;      // frequency count n; encoding is 6n wide
    int hidden = 32;       // width of both hidden layers
    int num_classes = 1;   // semantic head output dim
    double omega0 = 30.0;     // sine pre-activation scale
    double phi_scale = 1.0;   // fixed output scale of the SDF head (meters per unit)
    Bounds normalization;     // coordinates map to [-1,1]^3 over this box for the encoding

    int input_dim() const { return channels + 6 * pe_freqs; }
    std::int64_t grid_param_count() const { return grid.cell_count() * channels; }
    std::int64_t head_param_count(int out_dim) const {
        return std::int64_t(hidden) * input_dim() + hidden + std::int64_t(hidden) * hidden + hidden +
               std::int64_t(out_dim) * hidden + out_dim;
    }
    std::int64_t param_count() const {
        return grid_param_count() + head_param_count(1) + head_param_count(num_classes);
    }
    void validate() const;
    bool operator==(const FieldShape& o) const;
};

/// Offsets of one head's weight blocks inside the flat parameter vector.
struct HeadLayout {
    std::int64_t w1, b1, w2, b2, w3, b3;
};

struct FieldParams {
    FieldShape shape;
    std::vector<double> values;  // grid, then sdf head, then semantic head

    static FieldParams init(const FieldShape& shape, std::uint64_t seed, double grid_init_std = 0.01);

    HeadLayout sdf_layout() const;
    HeadLayout sem_layout() const;
    const double* grid_values() const { return values.data(); }
    double* grid_values() { return values.data(); }
};

/// Flat gradient buffer, same layout as FieldParams::values.
struct FieldGrad {
    std::vector<double> values;

    explicit FieldGrad(const FieldShape& s) : values(std::size_t(s.param_count()), 0.0) {}
    void zero() { std::fill(values.begin(), values.end(), 0.0); }
};

// ------------------------------------------------------------- primitives

/// Per axis (sin(2^0 pi x), cos(2^0 pi x), ..., cos(2^{n-1} pi x)), axes
/// concatenated in x,y,z order. Input coordinates must already be normalized
/// to [-1,1]; `out` receives 6*freqs values.
void positional_encode(const Vec3& normalized, int freqs, double* out);

struct TrilinearCell {
    std::int64_t corner[8];   // flat node indices
    double weight[8];         // blend weights, sum to 1
    double dweight[8][3];     // d(weight)/d(world coordinate), zero on clamped axes
    bool clamped = false;
};

/// Locates the cell containing x and the 8 blend weights. Points outside the
/// node box clamp to it (reported via `clamped`).
TrilinearCell trilinear_cell(const GridSpec& grid, const Vec3& x);

/// Standard 8-corner blend of per-node features.
void trilinear_query(const GridSpec& grid, int channels, std::span<const double> values, const Vec3& x,
                     double* out, bool* clamped = nullptr);

/// Moves x off feature-cell faces (and inside the node box) by a hair so the
/// trilinear blend is differentiable there; identity for interior points.
Vec3 jitter_into_cell(const GridSpec& grid, const Vec3& x, double margin = 1e-7);

// ------------------------------------------------------------- evaluator

struct PointValue {
    double phi = 0.0;
    Vec3 grad;                    // valid when tangents were requested
    std::span<const double> sem;  // valid when semantics were requested; owned by the evaluator
    bool clamped = false;
};

struct PointAdjoint {
    double d_phi = 0.0;
    Vec3 d_grad;                     // requires a tangent forward
    std::span<const double> d_sem;   // requires a semantic forward
};

/// Streaming forward/backward engine. One point is in flight at a time:
/// forward() computes values (and tangents / semantic logits on demand) and
/// keeps the intermediates; backward() folds the adjoint of that point into
/// a parameter-gradient accumulator. Never mutates the parameters.
class FieldEvaluator {
  public:
    explicit FieldEvaluator(const FieldParams& params);

    const PointValue& forward(const Vec3& x, bool tangents, bool semantics);
    void backward(const PointAdjoint& adj, FieldGrad& grad);

    const FieldParams& params() const { return params_; }
    std::int64_t clamped_count() const { return clamped_count_; }

  private:
    const FieldParams& params_;
    PointValue value_;
    TrilinearCell cell_;
    bool has_tangents_ = false, has_sem_ = false;
    std::int64_t clamped_count_ = 0;
    // Packed activations: 4 columns (value + 3 spatial tangents) per row.
    std::vector<double> u4_, z1_4_, a1_4_, z2_4_, a2_4_;
    std::vector<double> u_, z1s_, a1s_, z2s_, a2s_, sem_;           // semantic head (value only)
    std::vector<double> lam4_, lam4b_, lam_out4_, lam_s_, lam_sb_;  // backward scratch

    void forward_head_tangent(const HeadLayout& ly);
    void forward_head_value(const HeadLayout& ly, const double* u, double* z1, double* a1, double* z2,
                            double* a2, double* out, int out_dim);
};

// ------------------------------------------------------------- module ops

/// phi(x); throws NonFiniteValue when any intermediate is non-finite.
double sdf_forward(const FieldParams& params, const Vec3& x);

/// Semantic logits at x.
std::vector<double> sem_forward(const FieldParams& params, const Vec3& x);

/// Exact spatial gradient of phi. Throws CellBoundary when x is within
/// 1e-9 * voxel_size of a feature-cell face (callers jitter first).
Vec3 spatial_gradient(const FieldParams& params, const Vec3& x);

}  // namespace sdfit
