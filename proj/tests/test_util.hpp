#pragma once

#include <functional>
#include <vector>

#include "sdfit/field.hpp"
#include "sdfit/scene.hpp"
#include "sdfit/supervision.hpp"

// Shared helpers for the oracle-style tests: a tiny field shape, central
// finite differences over every parameter, and a scale-aware relative error.

namespace sdfit::testutil {

inline FieldShape tiny_shape(int channels = 2, int pe = 1, int hidden = 8, int classes = 3) {
    FieldShape s;
    s.grid.origin = {-1, -1, -1};
    s.grid.voxel_size = 2.0 / 3.0;
    s.grid.dims = {4, 4, 4};
    s.channels = channels;
    s.pe_freqs = pe;
    s.hidden = hidden;
    s.num_classes = classes;
    s.omega0 = 30.0;
    s.normalization = {{-1, -1, -1}, {1, 1, 1}};
    return s;
}

/// Central finite differences of `f` over every entry of params.values.
inline std::vector<double> fd_param_gradient(FieldParams params,
                                             const std::function<double(const FieldParams&)>& f,
                                             double h = 1e-6) {
    std::vector<double> grad(params.values.size());
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        double saved = params.values[i];
        params.values[i] = saved + h;
        double hi = f(params);
        params.values[i] = saved - h;
        double lo = f(params);
        params.values[i] = saved;
        grad[i] = (hi - lo) / (2.0 * h);
    }
    return grad;
}

/// Worst per-entry relative error, with a noise floor at 1e-4 of the
/// gradient's largest magnitude so finite-difference roundoff on negligible
/// entries does not dominate.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double scale = 1e-12;
    for (double v : a) scale = std::max(scale, std::abs(v));
    for (double v : b) scale = std::max(scale, std::abs(v));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-4 * scale});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

/// A random batch over a small synthetic grid; geometry is irrelevant for
/// gradient checks, only the structure matters.
struct TinyProblem {
    OccupancyGrid grid;
    std::vector<PointSample> scans;
    SampleBatch batch;
};

inline TinyProblem tiny_problem(std::uint64_t seed, int n_surface = 6, int n_occ = 4, int n_free = 4,
                                int n_uniform = 2, int classes = 3) {
    TinyProblem p;
    GridSpec spec;
    spec.origin = {-0.9, -0.9, -0.9};
    spec.voxel_size = 0.45;
    spec.dims = {4, 4, 4};
    p.grid.init(spec, classes);
    Rng rng(seed);
    for (std::size_t v = 0; v < p.grid.labels.size(); ++v) {
        double r = rng.uniform();
        if (r < 0.4) {
            p.grid.labels[v] = VoxelLabel::Occupied;
            p.grid.classes[v] = std::int16_t(rng.below(std::uint64_t(classes)));
        } else if (r < 0.9) {
            p.grid.labels[v] = VoxelLabel::Free;
        } else {
            p.grid.labels[v] = VoxelLabel::Unobserved;
        }
    }
    for (int i = 0; i < std::max(n_surface, 1) * 4; ++i) {
        PointSample s;
        s.position = rng.point_in({{-0.85, -0.85, -0.85}, {0.85, 0.85, 0.85}});
        s.normal = rng.unit_vector();
        s.class_id = int(rng.below(std::uint64_t(classes)));
        p.scans.push_back(s);
    }
    Rng batch_rng(seed, 77);
    p.batch = sample_batch(p.scans, p.grid, {n_surface, n_occ, n_free, n_uniform}, 2, batch_rng);
    return p;
}

}  // namespace sdfit::testutil
