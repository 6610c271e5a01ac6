#include "sdfit/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sdfit {

void LossWeights::validate() const {
    for (double g : gamma)
        if (g < 0) throw ConfigError("loss weights must be non-negative");
    if (alpha <= 0 || beta <= 0) throw ConfigError("alpha and beta must be positive");
}

const char* to_string(SupervisionMode m) {
    switch (m) {
        case SupervisionMode::Sandwich: return "sandwich";
        case SupervisionMode::Siren: return "siren";
        case SupervisionMode::Lode: return "lode";
        case SupervisionMode::Oracle: return "oracle";
    }
    return "?";
}

SupervisionMode supervision_mode_from(const std::string& name) {
    if (name == "sandwich") return SupervisionMode::Sandwich;
    if (name == "siren") return SupervisionMode::Siren;
    if (name == "lode") return SupervisionMode::Lode;
    if (name == "oracle") return SupervisionMode::Oracle;
    throw ConfigError("unknown supervision mode: " + name);
}

// ------------------------------------------------------------- sampling

namespace {

/// First `n` entries of a partial Fisher-Yates shuffle; falls back to
/// with-replacement draws for the overflow when n exceeds the pool.
std::vector<std::int64_t> draw_indices(std::int64_t pool, int n, Rng& rng) {
    std::vector<std::int64_t> out;
    out.reserve(std::size_t(n));
    std::int64_t take = std::min<std::int64_t>(n, pool);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(pool));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t i = 0; i < take; ++i) {
        std::int64_t j = i + std::int64_t(rng.below(std::uint64_t(pool - i)));
        std::swap(idx[std::size_t(i)], idx[std::size_t(j)]);
        out.push_back(idx[std::size_t(i)]);
    }
    for (std::int64_t i = take; i < n; ++i) out.push_back(idx[std::size_t(rng.below(std::uint64_t(pool)))]);
    return out;
}

std::vector<Vec3> subgrid_probes(const GridSpec& spec, std::int64_t voxel, int sg) {
    auto ijk = spec.unflatten(voxel);
    Vec3 base = spec.origin + Vec3{ijk[0] * spec.voxel_size, ijk[1] * spec.voxel_size, ijk[2] * spec.voxel_size};
    std::vector<Vec3> probes;
    probes.reserve(std::size_t(sg) * sg * sg);
    for (int pi = 0; pi < sg; ++pi)
        for (int pj = 0; pj < sg; ++pj)
            for (int pk = 0; pk < sg; ++pk)
                probes.push_back(base + Vec3{(pi + 0.5) / sg * spec.voxel_size,
                                             (pj + 0.5) / sg * spec.voxel_size,
                                             (pk + 0.5) / sg * spec.voxel_size});
    return probes;
}

}  // namespace

SampleBatch sample_batch(const std::vector<PointSample>& scans, const OccupancyGrid& grid,
                         const BatchCounts& counts, int subgrid_factor, Rng& rng) {
    if (subgrid_factor < 1) throw ConfigError("subgrid_factor must be >= 1");
    if (counts.surface < 0 || counts.occupied < 0 || counts.free_space < 0 || counts.uniform < 0)
        throw ConfigError("batch counts must be non-negative");

    SampleBatch batch;
    batch.subgrid_factor = subgrid_factor;

    if (counts.surface > 0) {
        if (scans.empty()) throw EmptyPool("surface stratum requested but the scan list is empty");
        for (std::int64_t i : draw_indices(std::int64_t(scans.size()), counts.surface, rng))
            batch.surface.push_back(scans[std::size_t(i)]);
    }

    std::vector<std::int64_t> occ_pool, free_pool, observed_pool;
    for (std::int64_t v = 0; v < std::int64_t(grid.labels.size()); ++v) {
        switch (grid.labels[std::size_t(v)]) {
            case VoxelLabel::Occupied: occ_pool.push_back(v); break;
            case VoxelLabel::Free: free_pool.push_back(v); break;
            case VoxelLabel::Unobserved: break;
        }
    }
    observed_pool = occ_pool;
    observed_pool.insert(observed_pool.end(), free_pool.begin(), free_pool.end());

    if (counts.occupied > 0) {
        if (occ_pool.empty()) throw EmptyPool("occupied stratum requested but the grid has no occupied voxels");
        for (std::int64_t i : draw_indices(std::int64_t(occ_pool.size()), counts.occupied, rng)) {
            std::int64_t v = occ_pool[std::size_t(i)];
            batch.occupied.push_back({v, int(grid.classes[std::size_t(v)]), subgrid_probes(grid.spec, v, subgrid_factor)});
        }
    }
    if (counts.free_space > 0) {
        if (free_pool.empty()) throw EmptyPool("free stratum requested but the grid has no free voxels");
        auto picks = draw_indices(std::int64_t(free_pool.size()), counts.free_space, rng);
        for (std::int64_t i : picks) {
            std::int64_t v = free_pool[std::size_t(i)];
            auto ijk = grid.spec.unflatten(v);
            Vec3 base = grid.spec.origin + Vec3{ijk[0] * grid.spec.voxel_size, ijk[1] * grid.spec.voxel_size,
                                                ijk[2] * grid.spec.voxel_size};
            Vec3 pos = base + Vec3{rng.uniform() * grid.spec.voxel_size, rng.uniform() * grid.spec.voxel_size,
                                   rng.uniform() * grid.spec.voxel_size};
            batch.free_space.push_back({v, pos});
        }
    }
    if (counts.uniform > 0) {
        if (observed_pool.empty()) throw EmptyPool("uniform stratum requested but no voxel is observed");
        for (int i = 0; i < counts.uniform; ++i) {
            std::int64_t v = observed_pool[std::size_t(rng.below(observed_pool.size()))];
            auto ijk = grid.spec.unflatten(v);
            Vec3 base = grid.spec.origin + Vec3{ijk[0] * grid.spec.voxel_size, ijk[1] * grid.spec.voxel_size,
                                                ijk[2] * grid.spec.voxel_size};
            batch.uniform.push_back(base + Vec3{rng.uniform() * grid.spec.voxel_size,
                                                rng.uniform() * grid.spec.voxel_size,
                                                rng.uniform() * grid.spec.voxel_size});
        }
    }
    return batch;
}

// ------------------------------------------------------------- sdf losses

namespace {

struct EikonalAdjoint {
    double value = 0.0;  // | ||g|| - 1 |
    Vec3 d_grad;
};

EikonalAdjoint eikonal_term(const Vec3& g) {
    EikonalAdjoint out;
    double n = norm(g);
    out.value = std::abs(n - 1.0);
    if (n > 1e-300) out.d_grad = g * ((n > 1.0 ? 1.0 : -1.0) / n);
    return out;
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NonFiniteValue(std::string("non-finite loss term: ") + what);
}

/// Minimum-phi probe of each occupied voxel under the current parameters.
struct OccProbeMin {
    std::vector<int> argmin;
    std::vector<double> min_phi;
};

OccProbeMin occ_probe_minima(FieldEvaluator& ev, const SampleBatch& batch) {
    OccProbeMin out;
    out.argmin.reserve(batch.occupied.size());
    out.min_phi.reserve(batch.occupied.size());
    for (const auto& occ : batch.occupied) {
        int best = 0;
        double best_phi = std::numeric_limits<double>::infinity();
        for (int i = 0; i < int(occ.probes.size()); ++i) {
            double phi = ev.forward(occ.probes[std::size_t(i)], false, false).phi;
            if (phi < best_phi) {
                best_phi = phi;
                best = i;
            }
        }
        out.argmin.push_back(best);
        out.min_phi.push_back(best_phi);
    }
    return out;
}

LossTerms sandwich_impl(const FieldParams& params, const SampleBatch& batch, const LossWeights& w,
                        FieldGrad* grad, double grad_scale, const OccProbeMin* cached) {
    w.validate();
    LossTerms terms;
    FieldEvaluator ev(params);
    const GridSpec& fgrid = params.shape.grid;
    const auto& g = w.gamma;

    std::size_t n1 = batch.surface.size(), nocc = batch.occupied.size(), nfree = batch.free_space.size();
    std::size_t nuni = batch.uniform.size();
    std::size_t ntotal = n1 + nocc + nfree + nuni;
    double eik_w = ntotal ? g[0] / double(ntotal) : 0.0;

    for (const auto& s : batch.surface) {
        Vec3 x = jitter_into_cell(fgrid, s.position);
        const PointValue& v = ev.forward(x, true, false);
        PointAdjoint adj;
        if (g[0] != 0.0) {
            auto e = eikonal_term(v.grad);
            terms.eikonal += e.value / double(ntotal);
            adj.d_grad += e.d_grad * eik_w;
        }
        if (g[1] != 0.0) {
            Vec3 diff = v.grad - s.normal;
            double nd = norm(diff);
            terms.normal += nd / double(n1);
            if (nd > 1e-300) adj.d_grad += diff * (g[1] / (nd * double(n1)));
        }
        if (g[2] != 0.0) {
            terms.surface += std::abs(v.phi) / double(n1);
            adj.d_phi += (v.phi >= 0.0 ? 1.0 : -1.0) * g[2] / double(n1);
        }
        if (grad) {
            adj.d_phi *= grad_scale;
            adj.d_grad = adj.d_grad * grad_scale;
            ev.backward(adj, *grad);
        }
    }

    OccProbeMin local;
    const OccProbeMin* mins = cached;
    if (!mins && nocc) {
        local = occ_probe_minima(ev, batch);
        mins = &local;
    }
    for (std::size_t i = 0; i < nocc; ++i) {
        Vec3 x = jitter_into_cell(fgrid, batch.occupied[i].probes[std::size_t(mins->argmin[i])]);
        const PointValue& v = ev.forward(x, true, false);
        PointAdjoint adj;
        if (g[0] != 0.0) {
            auto e = eikonal_term(v.grad);
            terms.eikonal += e.value / double(ntotal);
            adj.d_grad += e.d_grad * eik_w;
        }
        if (g[3] != 0.0) {
            double push = std::exp(w.alpha * v.phi);
            check_finite(push, "occupied push");
            terms.occupied += push / double(nocc);
            adj.d_phi += g[3] * w.alpha * push / double(nocc);
        }
        if (grad) {
            adj.d_phi *= grad_scale;
            adj.d_grad = adj.d_grad * grad_scale;
            ev.backward(adj, *grad);
        }
    }

    for (const auto& f : batch.free_space) {
        Vec3 x = jitter_into_cell(fgrid, f.position);
        const PointValue& v = ev.forward(x, true, false);
        PointAdjoint adj;
        if (g[0] != 0.0) {
            auto e = eikonal_term(v.grad);
            terms.eikonal += e.value / double(ntotal);
            adj.d_grad += e.d_grad * eik_w;
        }
        if (g[4] != 0.0) {
            double push = std::exp(-w.alpha * v.phi);
            check_finite(push, "free push");
            terms.free_space += push / double(nfree);
            adj.d_phi += -g[4] * w.alpha * push / double(nfree);
        }
        if (grad) {
            adj.d_phi *= grad_scale;
            adj.d_grad = adj.d_grad * grad_scale;
            ev.backward(adj, *grad);
        }
    }

    if (g[0] != 0.0) {
        for (const auto& p : batch.uniform) {
            Vec3 x = jitter_into_cell(fgrid, p);
            const PointValue& v = ev.forward(x, true, false);
            auto e = eikonal_term(v.grad);
            terms.eikonal += e.value / double(ntotal);
            if (grad) ev.backward({0.0, e.d_grad * (eik_w * grad_scale), {}}, *grad);
        }
    }

    terms.sdf = g[0] * terms.eikonal + g[1] * terms.normal + g[2] * terms.surface +
                g[3] * terms.occupied + g[4] * terms.free_space;
    check_finite(terms.sdf, "sdf loss");
    return terms;
}

}  // namespace

LossTerms sandwich_sdf_loss(const FieldParams& params, const SampleBatch& batch, const LossWeights& w,
                            FieldGrad* grad, double grad_scale) {
    return sandwich_impl(params, batch, w, grad, grad_scale, nullptr);
}

LossTerms siren_sdf_loss(const FieldParams& params, const SampleBatch& batch, const LossWeights& w,
                         FieldGrad* grad, double grad_scale) {
    w.validate();
    LossTerms terms;
    FieldEvaluator ev(params);
    const GridSpec& fgrid = params.shape.grid;
    const auto& g = w.gamma;

    std::size_t n1 = batch.surface.size(), nuni = batch.uniform.size();
    std::size_t ntotal = n1 + nuni;
    double eik_w = ntotal ? g[0] / double(ntotal) : 0.0;

    for (const auto& s : batch.surface) {
        Vec3 x = jitter_into_cell(fgrid, s.position);
        const PointValue& v = ev.forward(x, true, false);
        PointAdjoint adj;
        if (g[0] != 0.0) {
            auto e = eikonal_term(v.grad);
            terms.eikonal += e.value / double(ntotal);
            adj.d_grad += e.d_grad * eik_w;
        }
        if (g[1] != 0.0) {
            Vec3 diff = v.grad - s.normal;
            double nd = norm(diff);
            terms.normal += nd / double(n1);
            if (nd > 1e-300) adj.d_grad += diff * (g[1] / (nd * double(n1)));
        }
        if (g[2] != 0.0) {
            terms.surface += std::abs(v.phi) / double(n1);
            adj.d_phi += (v.phi >= 0.0 ? 1.0 : -1.0) * g[2] / double(n1);
        }
        if (grad) {
            adj.d_phi *= grad_scale;
            adj.d_grad = adj.d_grad * grad_scale;
            ev.backward(adj, *grad);
        }
    }

    // Off-surface repulsion: push |phi| away from zero everywhere else.
    for (const auto& p : batch.uniform) {
        Vec3 x = jitter_into_cell(fgrid, p);
        const PointValue& v = ev.forward(x, true, false);
        PointAdjoint adj;
        if (g[0] != 0.0) {
            auto e = eikonal_term(v.grad);
            terms.eikonal += e.value / double(ntotal);
            adj.d_grad += e.d_grad * eik_w;
        }
        if (g[4] != 0.0 && nuni) {
            double push = std::exp(-w.alpha * std::abs(v.phi));
            check_finite(push, "off-surface push");
            terms.free_space += push / double(nuni);
            double sign = v.phi >= 0.0 ? 1.0 : -1.0;
            adj.d_phi += -g[4] * w.alpha * push * sign / double(nuni);
        }
        if (grad) {
            adj.d_phi *= grad_scale;
            adj.d_grad = adj.d_grad * grad_scale;
            ev.backward(adj, *grad);
        }
    }

    terms.sdf = g[0] * terms.eikonal + g[1] * terms.normal + g[2] * terms.surface + g[4] * terms.free_space;
    check_finite(terms.sdf, "sdf loss");
    return terms;
}

LossTerms lode_sdf_loss(const FieldParams& params, const SampleBatch& batch, const OccupancyGrid& grid,
                        const LossWeights& w, FieldGrad* grad, double grad_scale) {
    w.validate();
    LossTerms terms;
    FieldEvaluator ev(params);
    const GridSpec& fgrid = params.shape.grid;
    const auto& g = w.gamma;

    std::size_t nocc = batch.occupied.size(), nfree = batch.free_space.size(), nuni = batch.uniform.size();
    std::size_t ntotal = nocc + nfree + nuni;
    double eik_w = ntotal ? g[0] / double(ntotal) : 0.0;

    enum class Role { Surface, Push, Plain };
    auto eval_point = [&](const Vec3& pos, Role role) {
        Vec3 x = jitter_into_cell(fgrid, pos);
        const PointValue& v = ev.forward(x, true, false);
        PointAdjoint adj;
        if (g[0] != 0.0) {
            auto e = eikonal_term(v.grad);
            terms.eikonal += e.value / double(ntotal);
            adj.d_grad += e.d_grad * eik_w;
        }
        if (role == Role::Surface && g[2] != 0.0) {
            terms.surface += std::abs(v.phi) / double(nocc);
            adj.d_phi += (v.phi >= 0.0 ? 1.0 : -1.0) * g[2] / double(nocc);
        }
        if (role == Role::Push && g[4] != 0.0) {
            double push = std::exp(-w.alpha * v.phi);
            check_finite(push, "free push");
            terms.free_space += push / double(nfree);
            adj.d_phi += -g[4] * w.alpha * push / double(nfree);
        }
        if (grad) {
            adj.d_phi *= grad_scale;
            adj.d_grad = adj.d_grad * grad_scale;
            ev.backward(adj, *grad);
        }
    };

    // Occupied-voxel centers stand in for the surface; free centers are
    // pushed positive. Scan points and normals are not used.
    for (const auto& occ : batch.occupied) {
        auto ijk = grid.spec.unflatten(occ.voxel);
        eval_point(grid.spec.voxel_center(ijk[0], ijk[1], ijk[2]), Role::Surface);
    }
    for (const auto& f : batch.free_space) {
        auto ijk = grid.spec.unflatten(f.voxel);
        eval_point(grid.spec.voxel_center(ijk[0], ijk[1], ijk[2]), Role::Push);
    }
    for (const auto& p : batch.uniform) eval_point(p, Role::Plain);

    terms.sdf = g[0] * terms.eikonal + g[2] * terms.surface + g[4] * terms.free_space;
    check_finite(terms.sdf, "sdf loss");
    return terms;
}

LossTerms oracle_sdf_loss(const FieldParams& params, const SampleBatch& batch, const Scene& scene,
                          const LossWeights& w, FieldGrad* grad, double grad_scale) {
    w.validate();
    LossTerms terms;
    FieldEvaluator ev(params);
    const GridSpec& fgrid = params.shape.grid;
    const auto& g = w.gamma;

    // Data positions: every position in the batch. Eikonal positions: one
    // per sample, as in the sandwich loss.
    std::size_t n_data = batch.surface.size() + batch.free_space.size() + batch.uniform.size();
    for (const auto& occ : batch.occupied) n_data += occ.probes.size();
    std::size_t ntotal = batch.surface.size() + batch.occupied.size() + batch.free_space.size() +
                         batch.uniform.size();
    double eik_w = ntotal ? g[0] / double(ntotal) : 0.0;

    auto tangent_point = [&](const Vec3& pos, bool data_term) {
        Vec3 x = jitter_into_cell(fgrid, pos);
        const PointValue& v = ev.forward(x, true, false);
        PointAdjoint adj;
        if (g[0] != 0.0) {
            auto e = eikonal_term(v.grad);
            terms.eikonal += e.value / double(ntotal);
            adj.d_grad += e.d_grad * eik_w;
        }
        if (data_term && g[2] != 0.0 && n_data) {
            double r = v.phi - sdf_oracle(scene, x);
            terms.data += std::abs(r) / double(n_data);
            adj.d_phi += (r >= 0.0 ? 1.0 : -1.0) * g[2] / double(n_data);
        }
        if (grad) {
            adj.d_phi *= grad_scale;
            adj.d_grad = adj.d_grad * grad_scale;
            ev.backward(adj, *grad);
        }
    };
    auto value_point = [&](const Vec3& pos) {
        if (g[2] == 0.0 || n_data == 0) return;
        const PointValue& v = ev.forward(pos, false, false);
        double r = v.phi - sdf_oracle(scene, pos);
        terms.data += std::abs(r) / double(n_data);
        if (grad) ev.backward({(r >= 0.0 ? 1.0 : -1.0) * g[2] / double(n_data) * grad_scale, {}, {}}, *grad);
    };

    for (const auto& s : batch.surface) tangent_point(s.position, true);
    OccProbeMin mins = occ_probe_minima(ev, batch);
    for (std::size_t i = 0; i < batch.occupied.size(); ++i) {
        const auto& occ = batch.occupied[i];
        for (int p = 0; p < int(occ.probes.size()); ++p) {
            if (p == mins.argmin[i])
                tangent_point(occ.probes[std::size_t(p)], true);
            else
                value_point(occ.probes[std::size_t(p)]);
        }
    }
    for (const auto& f : batch.free_space) tangent_point(f.position, true);
    for (const auto& p : batch.uniform) tangent_point(p, true);

    terms.sdf = g[0] * terms.eikonal + g[2] * terms.data;
    check_finite(terms.sdf, "sdf loss");
    return terms;
}

// ------------------------------------------------------------- semantics

namespace {

double semantic_loss_impl(const FieldParams& params, const SampleBatch& batch, FieldGrad* grad,
                          double grad_scale, const OccProbeMin* cached) {
    if (batch.occupied.empty()) throw EmptyPool("semantic loss needs a non-empty occupied stratum");
    FieldEvaluator ev(params);
    OccProbeMin local;
    const OccProbeMin* mins = cached;
    if (!mins) {
        local = occ_probe_minima(ev, batch);
        mins = &local;
    }
    int s = params.shape.num_classes;
    std::vector<double> dsem(static_cast<std::size_t>(s));
    double loss = 0.0;
    double n = double(batch.occupied.size());
    for (std::size_t i = 0; i < batch.occupied.size(); ++i) {
        const auto& occ = batch.occupied[i];
        if (occ.class_id < 0 || occ.class_id >= s) throw ConfigError("occupied voxel class out of range");
        const PointValue& v = ev.forward(occ.probes[std::size_t(mins->argmin[i])], false, true);
        double m = *std::max_element(v.sem.begin(), v.sem.end());
        double sum = 0.0;
        for (double l : v.sem) sum += std::exp(l - m);
        double lse = m + std::log(sum);
        loss += (lse - v.sem[std::size_t(occ.class_id)]) / n;
        if (grad) {
            for (int c = 0; c < s; ++c) {
                double p = std::exp(v.sem[std::size_t(c)] - lse);
                dsem[std::size_t(c)] = (p - (c == occ.class_id ? 1.0 : 0.0)) / n * grad_scale;
            }
            ev.backward({0.0, {}, std::span<const double>(dsem)}, *grad);
        }
    }
    check_finite(loss, "semantic cross-entropy");
    return loss;
}

}  // namespace

double semantic_loss(const FieldParams& params, const SampleBatch& batch, FieldGrad* grad,
                     double grad_scale) {
    return semantic_loss_impl(params, batch, grad, grad_scale, nullptr);
}

double free_logit(double min_phi, double beta, double t) {
    double a = beta * min_phi;
    double b = beta * t;
    double lse = log_add_exp(a, b);
    double log_p = a - lse;      // log p_free
    double log_q = b - lse;      // log (1 - p_free)
    return log_p - log_q;        // inverse sigmoid of p_free
}

SoftDice multiclass_soft_dice(std::span<const double> probs, std::span<const int> gt, int num_classes,
                              double eps) {
    if (gt.empty() || probs.size() != gt.size() * std::size_t(num_classes))
        throw ConfigError("soft dice inputs are inconsistent");
    SoftDice out;
    out.numerator.assign(std::size_t(num_classes), 0.0);
    out.denominator.assign(std::size_t(num_classes), 0.0);
    out.gt_count.assign(std::size_t(num_classes), 0);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const double* p = probs.data() + i * std::size_t(num_classes);
        ++out.gt_count[std::size_t(gt[i])];
        for (int c = 0; c < num_classes; ++c) {
            double gval = (gt[i] == c) ? 1.0 : 0.0;
            out.numerator[std::size_t(c)] += p[c] * gval;
            out.denominator[std::size_t(c)] += p[c] + gval;
        }
    }
    double dice_sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        if (out.gt_count[std::size_t(c)] == 0) continue;  // absent from ground truth
        ++out.present;
        dice_sum += (2.0 * out.numerator[std::size_t(c)] + eps) / (out.denominator[std::size_t(c)] + eps);
    }
    out.loss = 1.0 - dice_sum / double(out.present);
    return out;
}

namespace {

double joint_dice_impl(const FieldParams& params, const OccupancyGrid& grid, const SampleBatch& batch,
                       const LossWeights& w, FieldGrad* grad, double grad_scale, const OccProbeMin* cached) {
    (void)grid;
    if (batch.occupied.empty() || batch.free_space.empty())
        throw EmptyPool("joint loss needs non-empty occupied and free strata");
    int s = params.shape.num_classes;
    int nc = s + 1;  // semantic classes plus the appended free class
    FieldEvaluator ev(params);

    OccProbeMin local;
    const OccProbeMin* mins = cached;
    if (!mins) {
        local = occ_probe_minima(ev, batch);
        mins = &local;
    }

    std::size_t n_vox = batch.occupied.size() + batch.free_space.size();
    std::vector<Vec3> positions(n_vox);
    std::vector<int> gt(n_vox);
    std::vector<double> probs(n_vox * std::size_t(nc));

    auto fill_voxel = [&](std::size_t row, const Vec3& pos, int gt_class) {
        positions[row] = pos;
        gt[row] = gt_class;
        const PointValue& v = ev.forward(pos, false, true);
        double* p = probs.data() + row * std::size_t(nc);
        for (int c = 0; c < s; ++c) p[c] = v.sem[std::size_t(c)];
        p[s] = free_logit(v.phi, w.beta, w.t);
        double m = *std::max_element(p, p + nc);
        double sum = 0.0;
        for (int c = 0; c < nc; ++c) sum += std::exp(p[c] - m);
        double lse = m + std::log(sum);
        for (int c = 0; c < nc; ++c) p[c] = std::exp(p[c] - lse);
    };

    std::size_t row = 0;
    for (std::size_t i = 0; i < batch.occupied.size(); ++i, ++row)
        fill_voxel(row, batch.occupied[i].probes[std::size_t(mins->argmin[i])], batch.occupied[i].class_id);
    for (const auto& f : batch.free_space) fill_voxel(row++, f.position, s);

    const double eps = 1e-6;
    SoftDice dice = multiclass_soft_dice(probs, gt, nc, eps);
    double loss = dice.loss;
    check_finite(loss, "joint dice");

    if (grad) {
        std::vector<double> dsem(static_cast<std::size_t>(s));
        std::vector<double> dp(static_cast<std::size_t>(nc)), dz(static_cast<std::size_t>(nc));
        for (std::size_t i = 0; i < n_vox; ++i) {
            const double* p = probs.data() + i * std::size_t(nc);
            // d(loss)/d(prob): only ground-truth-present classes contribute.
            for (int c = 0; c < nc; ++c) {
                if (dice.gt_count[std::size_t(c)] == 0) {
                    dp[std::size_t(c)] = 0.0;
                    continue;
                }
                double gval = (gt[i] == c) ? 1.0 : 0.0;
                double N = 2.0 * dice.numerator[std::size_t(c)] + eps;
                double D = dice.denominator[std::size_t(c)] + eps;
                dp[std::size_t(c)] = -(2.0 * gval * D - N) / (D * D) / double(dice.present);
            }
            // Through the softmax.
            double inner = 0.0;
            for (int c = 0; c < nc; ++c) inner += dp[std::size_t(c)] * p[c];
            for (int c = 0; c < nc; ++c) dz[std::size_t(c)] = p[c] * (dp[std::size_t(c)] - inner);

            ev.forward(positions[i], false, true);
            for (int c = 0; c < s; ++c) dsem[std::size_t(c)] = dz[std::size_t(c)] * grad_scale;
            // l_free = beta * (min_phi - t) exactly, so d(l_free)/d(phi) = beta.
            double dphi = dz[std::size_t(s)] * w.beta * grad_scale;
            ev.backward({dphi, {}, std::span<const double>(dsem)}, *grad);
        }
    }
    return loss;
}

}  // namespace

double joint_dice_loss(const FieldParams& params, const OccupancyGrid& grid, const SampleBatch& batch,
                       const LossWeights& w, FieldGrad* grad, double grad_scale) {
    return joint_dice_impl(params, grid, batch, w, grad, grad_scale, nullptr);
}

LossTerms total_loss(const FieldParams& params, const SampleBatch& batch, const OccupancyGrid& grid,
                     const LossWeights& w, SupervisionMode mode, FieldGrad* grad, const Scene* scene) {
    w.validate();
    const auto& g = w.gamma;

    // The occupied-voxel probe minima are shared by the SDF, semantic, and
    // joint terms; compute them once per (params, batch).
    OccProbeMin mins;
    const OccProbeMin* cached = nullptr;
    if (!batch.occupied.empty()) {
        FieldEvaluator ev(params);
        mins = occ_probe_minima(ev, batch);
        cached = &mins;
    }

    LossTerms terms;
    FieldGrad* sdf_grad = g[5] != 0.0 ? grad : nullptr;
    switch (mode) {
        case SupervisionMode::Sandwich:
            terms = sandwich_impl(params, batch, w, sdf_grad, g[5], cached);
            break;
        case SupervisionMode::Siren:
            terms = siren_sdf_loss(params, batch, w, sdf_grad, g[5]);
            break;
        case SupervisionMode::Lode:
            terms = lode_sdf_loss(params, batch, grid, w, sdf_grad, g[5]);
            break;
        case SupervisionMode::Oracle:
            if (!scene) throw ConfigError("oracle supervision requires the scene");
            terms = oracle_sdf_loss(params, batch, *scene, w, sdf_grad, g[5]);
            break;
    }

    if (g[6] != 0.0) terms.semantic = semantic_loss_impl(params, batch, grad, g[6], cached);

    bool joint_applicable = mode != SupervisionMode::Siren;
    if (g[7] != 0.0 && joint_applicable) {
        terms.joint = joint_dice_impl(params, grid, batch, w, grad, g[7], cached);
        terms.has_joint = true;
    }

    terms.total = g[5] * terms.sdf + g[6] * terms.semantic + (terms.has_joint ? g[7] * terms.joint : 0.0);
    check_finite(terms.total, "total loss");
    if (grad && !all_finite(grad->values.data(), grad->values.size()))
        throw NonFiniteValue("non-finite parameter gradient");
    return terms;
}

}  // namespace sdfit
