#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sdfit/supervision.hpp"
#include "test_util.hpp"

using namespace sdfit;
using testutil::fd_param_gradient;
using testutil::max_rel_error;
using testutil::tiny_problem;
using testutil::tiny_shape;

TEST_CASE("sample_batch strata and determinism") {
    auto prob = tiny_problem(1, 0, 5, 5, 0);
    CHECK(prob.batch.surface.empty());
    CHECK(prob.batch.uniform.empty());
    CHECK(prob.batch.occupied.size() == 5);
    CHECK(prob.batch.free_space.size() == 5);

    // Sub-grid probes sit at quarter offsets from the voxel corner.
    for (const auto& occ : prob.batch.occupied) {
        REQUIRE(occ.probes.size() == 8);
        auto ijk = prob.grid.spec.unflatten(occ.voxel);
        Vec3 base = prob.grid.spec.origin + Vec3{ijk[0] * prob.grid.spec.voxel_size,
                                                 ijk[1] * prob.grid.spec.voxel_size,
                                                 ijk[2] * prob.grid.spec.voxel_size};
        double q = prob.grid.spec.voxel_size / 4.0;
        Vec3 first = occ.probes[0] - base;
        CHECK(first.x == doctest::Approx(q).epsilon(1e-12));
        CHECK(first.y == doctest::Approx(q).epsilon(1e-12));
        CHECK(first.z == doctest::Approx(q).epsilon(1e-12));
        Vec3 last = occ.probes[7] - base;
        CHECK(last.x == doctest::Approx(3 * q).epsilon(1e-12));
        CHECK(prob.grid.labels[std::size_t(occ.voxel)] == VoxelLabel::Occupied);
        CHECK(occ.class_id >= 0);
        CHECK(occ.class_id < 3);
    }
    for (const auto& f : prob.batch.free_space)
        CHECK(prob.grid.labels[std::size_t(f.voxel)] == VoxelLabel::Free);

    // Identical seeds give identical batches.
    Rng r1(99), r2(99);
    SampleBatch a = sample_batch(prob.scans, prob.grid, {4, 3, 3, 2}, 2, r1);
    SampleBatch b = sample_batch(prob.scans, prob.grid, {4, 3, 3, 2}, 2, r2);
    REQUIRE(a.surface.size() == b.surface.size());
    for (std::size_t i = 0; i < a.surface.size(); ++i) CHECK(a.surface[i].position == b.surface[i].position);
    REQUIRE(a.uniform.size() == b.uniform.size());
    for (std::size_t i = 0; i < a.uniform.size(); ++i) CHECK(a.uniform[i] == b.uniform[i]);
    for (std::size_t i = 0; i < a.occupied.size(); ++i) CHECK(a.occupied[i].voxel == b.occupied[i].voxel);
}

TEST_CASE("sample_batch never samples unobserved voxels and reports empty pools") {
    GridSpec spec;
    spec.origin = {0, 0, 0};
    spec.voxel_size = 1.0;
    spec.dims = {2, 2, 2};
    OccupancyGrid grid;
    grid.init(spec, 2);
    for (auto& l : grid.labels) l = VoxelLabel::Unobserved;
    grid.labels[0] = VoxelLabel::Occupied;
    grid.classes[0] = 1;
    Rng rng(1);
    CHECK_THROWS_AS((void)sample_batch({}, grid, {0, 1, 1, 0}, 2, rng), EmptyPool);
    CHECK_THROWS_AS((void)sample_batch({}, grid, {1, 0, 0, 0}, 2, rng), EmptyPool);
    SampleBatch b = sample_batch({}, grid, {0, 3, 0, 4}, 2, rng);
    for (const auto& occ : b.occupied) CHECK(occ.voxel == 0);
    for (const auto& u : b.uniform) {
        CHECK(u.x <= 1.0);  // only voxel 0 is observed
        CHECK(u.y <= 1.0);
        CHECK(u.z <= 1.0);
    }
}

TEST_CASE("free logit closed form") {
    CHECK(free_logit(0.005, 100.0, 0.005) == doctest::Approx(0.0).scale(1).epsilon(1e-12));
    CHECK(free_logit(0.015, 100.0, 0.005) == doctest::Approx(1.0).epsilon(1e-12));
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform(-10.0, 10.0);
        CHECK(std::abs(free_logit(u, 100.0, 0.005) - 100.0 * (u - 0.005)) < 1e-9);
    }
    // p_free saturates toward 1 as min_phi grows.
    double l = free_logit(1e6, 100.0, 0.005);
    CHECK(1.0 / (1.0 + std::exp(-l)) == doctest::Approx(1.0));
}

TEST_CASE("push terms are monotone in phi") {
    const double alpha = 100.0;
    double prev = std::exp(alpha * 0.2);
    for (double u : {0.1, 0.0, -0.1, -0.2}) {
        double cur = std::exp(alpha * u);
        CHECK(cur < prev);  // occupied push decreases as min phi decreases
        prev = cur;
    }
    prev = std::exp(-alpha * -0.2);
    for (double u : {-0.1, 0.0, 0.1, 0.2}) {
        double cur = std::exp(-alpha * u);
        CHECK(cur < prev);  // free push decreases as phi increases
        prev = cur;
    }
}

TEST_CASE("sandwich loss isolates the surface term and hand-checks the occ term") {
    auto prob = tiny_problem(3);
    FieldParams p = FieldParams::init(tiny_shape(), 5);
    LossWeights w;
    w.gamma = {0, 0, 1, 0, 0, 1, 1, 1};
    LossTerms t = sandwich_sdf_loss(p, prob.batch, w);
    double expect = 0;
    for (const auto& s : prob.batch.surface) {
        Vec3 x = jitter_into_cell(p.shape.grid, s.position);
        expect += std::abs(sdf_forward(p, x));
    }
    expect /= double(prob.batch.surface.size());
    CHECK(t.sdf == doctest::Approx(expect).epsilon(1e-12));
    CHECK(t.eikonal == 0.0);
    CHECK(t.occupied == 0.0);

    // Occupied push: gamma4 * mean over voxels of exp(alpha * min probe phi).
    LossWeights w2;
    w2.gamma = {0, 0, 0, 0.05, 0, 1, 1, 1};
    LossTerms t2 = sandwich_sdf_loss(p, prob.batch, w2);
    double occ_expect = 0;
    for (const auto& occ : prob.batch.occupied) {
        double min_phi = std::numeric_limits<double>::infinity();
        Vec3 argmin;
        for (const auto& probe : occ.probes) {
            double phi = sdf_forward(p, probe);
            if (phi < min_phi) {
                min_phi = phi;
                argmin = probe;
            }
        }
        occ_expect += std::exp(100.0 * sdf_forward(p, jitter_into_cell(p.shape.grid, argmin)));
    }
    occ_expect /= double(prob.batch.occupied.size());
    CHECK(t2.occupied == doctest::Approx(occ_expect).epsilon(1e-12));
    CHECK(t2.sdf == doctest::Approx(0.05 * occ_expect).epsilon(1e-12));
}

TEST_CASE("siren loss: zero field gives closed-form terms; empty uniform reduces to surface") {
    auto prob = tiny_problem(4);
    FieldShape shape = tiny_shape();
    FieldParams zero;
    zero.shape = shape;
    zero.values.assign(std::size_t(shape.param_count()), 0.0);
    LossWeights w;
    LossTerms t = siren_sdf_loss(zero, prob.batch, w);
    // grad phi = 0 everywhere: eikonal 1, normal |0 - n| = 1, surface 0,
    // off-surface exp(0) = 1 (a point with phi = 0 is maximally penalized).
    CHECK(t.eikonal == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.normal == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.surface == 0.0);
    CHECK(t.free_space == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.occupied == 0.0);
    CHECK(t.sdf == doctest::Approx(1.0 + 1.0 + 0.05).epsilon(1e-12));

    SampleBatch no_uniform = prob.batch;
    no_uniform.uniform.clear();
    LossTerms t2 = siren_sdf_loss(zero, no_uniform, w);
    CHECK(t2.free_space == 0.0);
    CHECK(t2.sdf == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("siren loss matches a hand-composed sum on random params") {
    auto prob = tiny_problem(5, 4, 3, 3, 3);
    FieldParams p = FieldParams::init(tiny_shape(), 6);
    LossWeights w;
    LossTerms t = siren_sdf_loss(p, prob.batch, w);

    std::size_t ntotal = prob.batch.surface.size() + prob.batch.uniform.size();
    double eik = 0, nrm = 0, surf = 0, off = 0;
    auto grad_at = [&](Vec3 pos) { return spatial_gradient(p, jitter_into_cell(p.shape.grid, pos)); };
    for (const auto& s : prob.batch.surface) {
        Vec3 x = jitter_into_cell(p.shape.grid, s.position);
        eik += std::abs(norm(grad_at(x)) - 1.0) / double(ntotal);
        nrm += norm(grad_at(x) - s.normal) / double(prob.batch.surface.size());
        surf += std::abs(sdf_forward(p, x)) / double(prob.batch.surface.size());
    }
    for (const auto& u : prob.batch.uniform) {
        Vec3 x = jitter_into_cell(p.shape.grid, u);
        eik += std::abs(norm(grad_at(x)) - 1.0) / double(ntotal);
        off += std::exp(-100.0 * std::abs(sdf_forward(p, x))) / double(prob.batch.uniform.size());
    }
    double expect = w.gamma[0] * eik + w.gamma[1] * nrm + w.gamma[2] * surf + w.gamma[4] * off;
    CHECK(t.sdf == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("lode loss uses voxel centers and reduces to eikonal without voxels") {
    auto prob = tiny_problem(6, 4, 3, 3, 3);
    FieldParams p = FieldParams::init(tiny_shape(), 7);
    LossWeights w;

    SampleBatch no_vox = prob.batch;
    no_vox.occupied.clear();
    no_vox.free_space.clear();
    LossTerms t0 = lode_sdf_loss(p, no_vox, prob.grid, w);
    CHECK(t0.surface == 0.0);
    CHECK(t0.free_space == 0.0);
    CHECK(t0.sdf == doctest::Approx(w.gamma[0] * t0.eikonal).epsilon(1e-12));

    LossTerms t = lode_sdf_loss(p, prob.batch, prob.grid, w);
    double surf = 0;
    for (const auto& occ : prob.batch.occupied) {
        auto ijk = prob.grid.spec.unflatten(occ.voxel);
        Vec3 c = jitter_into_cell(p.shape.grid, prob.grid.spec.voxel_center(ijk[0], ijk[1], ijk[2]));
        surf += std::abs(sdf_forward(p, c)) / double(prob.batch.occupied.size());
    }
    CHECK(t.surface == doctest::Approx(surf).epsilon(1e-12));
    CHECK(t.normal == 0.0);  // centers carry no normals
}

TEST_CASE("oracle loss: zero field against unit-distance points") {
    Scene scene;
    scene.bounds = {{-3, -3, -3}, {3, 3, 3}};
    scene.num_classes = 1;
    ScenePrimitive s;
    s.kind = PrimitiveKind::Sphere;
    s.radius = 1.0;
    scene.primitives.push_back(s);

    FieldShape shape = tiny_shape();
    shape.normalization = scene.bounds;
    shape.grid.origin = {-3, -3, -3};
    shape.grid.voxel_size = 2.0;
    FieldParams zero;
    zero.shape = shape;
    zero.values.assign(std::size_t(shape.param_count()), 0.0);

    SampleBatch batch;
    batch.subgrid_factor = 2;
    batch.uniform = {{0, 0, 0}, {2, 0, 0}};  // oracle sdf -1 and +1
    LossWeights w;
    LossTerms t = oracle_sdf_loss(zero, batch, scene, w);
    CHECK(t.data == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("semantic loss extremes and hand oracle") {
    auto prob = tiny_problem(8, 4, 5, 4, 0);
    FieldShape shape = tiny_shape();

    // Uniform zero logits: ln(s).
    FieldParams zero;
    zero.shape = shape;
    zero.values.assign(std::size_t(shape.param_count()), 0.0);
    CHECK(semantic_loss(zero, prob.batch) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // Strong margin on the true class.
    SampleBatch all_one = prob.batch;
    for (auto& occ : all_one.occupied) occ.class_id = 1;
    FieldParams biased = zero;
    biased.values[std::size_t(biased.sem_layout().b3 + 1)] = 20.0;
    CHECK(semantic_loss(biased, all_one) < 1e-8);

    // Random params against a reimplementation.
    FieldParams p = FieldParams::init(shape, 12);
    double expect = 0;
    for (const auto& occ : prob.batch.occupied) {
        double min_phi = std::numeric_limits<double>::infinity();
        Vec3 argmin;
        for (const auto& probe : occ.probes) {
            double phi = sdf_forward(p, probe);
            if (phi < min_phi) {
                min_phi = phi;
                argmin = probe;
            }
        }
        auto logits = sem_forward(p, argmin);
        double m = *std::max_element(logits.begin(), logits.end());
        double lse = 0;
        for (double l : logits) lse += std::exp(l - m);
        lse = m + std::log(lse);
        expect += (lse - logits[std::size_t(occ.class_id)]) / double(prob.batch.occupied.size());
    }
    CHECK(semantic_loss(p, prob.batch) == doctest::Approx(expect).epsilon(1e-12));

    SampleBatch empty = prob.batch;
    empty.occupied.clear();
    CHECK_THROWS_AS((void)semantic_loss(p, empty), EmptyPool);
}

TEST_CASE("soft dice extremes") {
    // Identical one-hot prediction and ground truth.
    std::vector<double> probs{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::vector<int> gt{0, 1, 2};
    CHECK(multiclass_soft_dice(probs, gt, 3).loss < 1e-5);

    // Prediction one-hot on the wrong class everywhere.
    std::vector<double> wrong{0, 1, 0, 0, 0, 1, 1, 0, 0};
    CHECK(multiclass_soft_dice(wrong, gt, 3).loss == doctest::Approx(1.0).epsilon(1e-4));

    // Classes absent from ground truth are excluded from the mean.
    std::vector<int> gt2{0, 0, 0};
    std::vector<double> mixed{1, 0, 0, 1, 0, 0, 0, 1, 0};
    SoftDice d = multiclass_soft_dice(mixed, gt2, 3);
    CHECK(d.present == 1);
    CHECK(d.loss == doctest::Approx(1.0 - (2.0 * 2 + 1e-6) / (2 + 3 + 1e-6)).epsilon(1e-9));
}

TEST_CASE("joint dice matches a hand evaluation on a tiny case") {
    auto prob = tiny_problem(9, 0, 3, 2, 0);
    FieldShape shape = tiny_shape();
    FieldParams p = FieldParams::init(shape, 13);
    LossWeights w;
    double loss = joint_dice_loss(p, prob.grid, prob.batch, w);

    int s = shape.num_classes, nc = s + 1;
    std::vector<double> probs;
    std::vector<int> gt;
    auto push_voxel = [&](const Vec3& pos, double min_phi, int cls) {
        auto logits = sem_forward(p, pos);
        logits.push_back(free_logit(min_phi, w.beta, w.t));
        double m = *std::max_element(logits.begin(), logits.end());
        double lse = 0;
        for (double l : logits) lse += std::exp(l - m);
        lse = m + std::log(lse);
        for (double l : logits) probs.push_back(std::exp(l - lse));
        gt.push_back(cls);
    };
    for (const auto& occ : prob.batch.occupied) {
        double min_phi = std::numeric_limits<double>::infinity();
        Vec3 argmin;
        for (const auto& probe : occ.probes) {
            double phi = sdf_forward(p, probe);
            if (phi < min_phi) {
                min_phi = phi;
                argmin = probe;
            }
        }
        push_voxel(argmin, min_phi, occ.class_id);
    }
    for (const auto& f : prob.batch.free_space) push_voxel(f.position, sdf_forward(p, f.position), s);
    CHECK(loss == doctest::Approx(multiclass_soft_dice(probs, gt, nc).loss).epsilon(1e-9));

    SampleBatch no_free = prob.batch;
    no_free.free_space.clear();
    CHECK_THROWS_AS((void)joint_dice_loss(p, prob.grid, no_free, w), EmptyPool);
}

TEST_CASE("total loss composition and term isolation") {
    auto prob = tiny_problem(10);
    FieldParams p = FieldParams::init(tiny_shape(), 14);
    LossWeights w;

    LossTerms total = total_loss(p, prob.batch, prob.grid, w, SupervisionMode::Sandwich);
    LossTerms sdf_only = sandwich_sdf_loss(p, prob.batch, w);
    double sem = semantic_loss(p, prob.batch);
    double joint = joint_dice_loss(p, prob.grid, prob.batch, w);
    CHECK(total.total ==
          doctest::Approx(w.gamma[5] * sdf_only.sdf + w.gamma[6] * sem + w.gamma[7] * joint).epsilon(1e-12));
    CHECK(total.has_joint);

    // gamma6 = 1, gamma7 = gamma8 = 0: exactly the sdf loss.
    LossWeights only_sdf = w;
    only_sdf.gamma[6] = only_sdf.gamma[7] = 0.0;
    LossTerms t2 = total_loss(p, prob.batch, prob.grid, only_sdf, SupervisionMode::Sandwich);
    CHECK(t2.total == doctest::Approx(sdf_only.sdf).epsilon(1e-12));
    CHECK_FALSE(t2.has_joint);

    // All gammas zero: zero loss, zero gradient.
    LossWeights zero = w;
    zero.gamma = {0, 0, 0, 0, 0, 0, 0, 0};
    FieldGrad g(p.shape);
    LossTerms t3 = total_loss(p, prob.batch, prob.grid, zero, SupervisionMode::Sandwich, &g);
    CHECK(t3.total == 0.0);
    for (double v : g.values) CHECK(v == 0.0);

    // Zeroing one gamma removes exactly that term.
    for (int gi : {0, 1, 2, 3, 4}) {
        LossWeights cut = w;
        cut.gamma[std::size_t(gi)] = 0.0;
        LossTerms tc = total_loss(p, prob.batch, prob.grid, cut, SupervisionMode::Sandwich);
        double term = gi == 0   ? sdf_only.eikonal
                      : gi == 1 ? sdf_only.normal
                      : gi == 2 ? sdf_only.surface
                      : gi == 3 ? sdf_only.occupied
                                : sdf_only.free_space;
        CHECK(total.total - tc.total ==
              doctest::Approx(w.gamma[5] * w.gamma[std::size_t(gi)] * term).epsilon(1e-9));
    }

    // Siren mode: the joint term is skipped and reported absent.
    LossTerms siren = total_loss(p, prob.batch, prob.grid, w, SupervisionMode::Siren);
    CHECK_FALSE(siren.has_joint);
    CHECK(siren.joint == 0.0);

    // Oracle mode requires the scene.
    CHECK_THROWS_AS((void)total_loss(p, prob.batch, prob.grid, w, SupervisionMode::Oracle), ConfigError);
}

TEST_CASE("loss is deterministic for fixed params and batch") {
    auto prob = tiny_problem(11);
    FieldParams p = FieldParams::init(tiny_shape(), 15);
    LossWeights w;
    FieldGrad g1(p.shape), g2(p.shape);
    LossTerms a = total_loss(p, prob.batch, prob.grid, w, SupervisionMode::Sandwich, &g1);
    LossTerms b = total_loss(p, prob.batch, prob.grid, w, SupervisionMode::Sandwich, &g2);
    CHECK(a.total == b.total);
    CHECK(g1.values == g2.values);
}

TEST_CASE("total loss gradient matches finite differences in every mode") {
    auto prob = tiny_problem(12, 4, 3, 3, 2);
    FieldShape shape = tiny_shape(2, 1, 6, 3);
    FieldParams p = FieldParams::init(shape, 16);
    LossWeights w;

    Scene scene;
    scene.bounds = {{-1, -1, -1}, {1, 1, 1}};
    scene.num_classes = 3;
    ScenePrimitive sp;
    sp.kind = PrimitiveKind::Sphere;
    sp.radius = 0.6;
    scene.primitives.push_back(sp);

    for (SupervisionMode mode : {SupervisionMode::Sandwich, SupervisionMode::Siren, SupervisionMode::Lode,
                                 SupervisionMode::Oracle}) {
        CAPTURE(to_string(mode));
        FieldGrad g(shape);
        total_loss(p, prob.batch, prob.grid, w, mode, &g, &scene);
        auto fd = fd_param_gradient(p, [&](const FieldParams& q) {
            return total_loss(q, prob.batch, prob.grid, w, mode, nullptr, &scene).total;
        });
        CHECK(max_rel_error(g.values, fd) < 1e-5);
    }
}

TEST_CASE("exponent overflow raises a non-finite loss error") {
    auto prob = tiny_problem(13);
    FieldShape shape = tiny_shape();
    FieldParams p;
    p.shape = shape;
    p.values.assign(std::size_t(shape.param_count()), 0.0);
    p.values[std::size_t(p.sdf_layout().b3)] = -20.0;  // free push exp(-alpha*phi) overflows
    LossWeights w;
    CHECK_THROWS_AS((void)sandwich_sdf_loss(p, prob.batch, w), NonFiniteValue);
}
