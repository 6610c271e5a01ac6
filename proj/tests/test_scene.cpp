#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "sdfit/scene.hpp"

using namespace sdfit;

namespace {

ScenePrimitive sphere(Vec3 center, double r, int cls = 0) {
    ScenePrimitive p;
    p.kind = PrimitiveKind::Sphere;
    p.pose.translation = center;
    p.radius = r;
    p.class_id = cls;
    return p;
}

ScenePrimitive box(Vec3 center, Vec3 he, int cls = 0) {
    ScenePrimitive p;
    p.kind = PrimitiveKind::Box;
    p.pose.translation = center;
    p.half_extents = he;
    p.class_id = cls;
    return p;
}

ScenePrimitive ground(double z, int cls = 0) {
    ScenePrimitive p;
    p.kind = PrimitiveKind::HalfSpace;
    p.pose.translation = {0, 0, z};
    p.class_id = cls;
    return p;
}

Scene unit_sphere_scene() {
    Scene s;
    s.bounds = {{-3, -3, -3}, {3, 3, 3}};
    s.num_classes = 1;
    s.primitives.push_back(sphere({0, 0, 0}, 1.0));
    return s;
}

}  // namespace

TEST_CASE("sdf oracle on spheres") {
    Scene s = unit_sphere_scene();
    CHECK(sdf_oracle(s, {0, 0, 0}) == doctest::Approx(-1.0));
    CHECK(sdf_oracle(s, {2, 0, 0}) == doctest::Approx(1.0));

    s.primitives.push_back(sphere({3, 0, 0}, 1.0));
    s.bounds.hi = {5, 3, 3};
    CHECK(sdf_oracle(s, {1.5, 0, 0}) == doctest::Approx(0.5));
}

TEST_CASE("primitive sdfs are exact for capsule and box") {
    ScenePrimitive cap;
    cap.kind = PrimitiveKind::Capsule;
    cap.radius = 0.5;
    cap.half_length = 1.0;
    CHECK(cap.sdf({0, 0, 0}) == doctest::Approx(-0.5));
    CHECK(cap.sdf({0, 0, 1.6}) == doctest::Approx(0.1));
    CHECK(cap.sdf({1.5, 0, 0.3}) == doctest::Approx(1.0));

    ScenePrimitive b = box({0, 0, 0}, {1, 1, 1});
    CHECK(b.sdf({0, 0, 0}) == doctest::Approx(-1.0));
    CHECK(b.sdf({2, 0, 0}) == doctest::Approx(1.0));
    CHECK(b.sdf({2, 2, 0}) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("normal oracle") {
    Scene s = unit_sphere_scene();
    Vec3 n = normal_oracle(s, {1, 0, 0});
    CHECK(norm(n - Vec3{1, 0, 0}) < 1e-12);

    Scene g;
    g.bounds = {{-10, -10, -10}, {10, 10, 10}};
    g.num_classes = 1;
    g.primitives.push_back(ground(0.0));
    CHECK(norm(normal_oracle(g, {5, -3, 0}) - Vec3{0, 0, 1}) < 1e-12);

    Scene bx;
    bx.bounds = {{-3, -3, -3}, {3, 3, 3}};
    bx.num_classes = 1;
    bx.primitives.push_back(box({0, 0, 0}, {1, 1, 1}));
    CHECK(norm(normal_oracle(bx, {1, 0.2, 0.3}) - Vec3{1, 0, 0}) < 1e-12);
}

TEST_CASE("seam ambiguity throws") {
    Scene s;
    s.bounds = {{-5, -5, -5}, {5, 5, 5}};
    s.num_classes = 2;
    s.primitives.push_back(sphere({-1, 0, 0}, 1.0, 0));
    s.primitives.push_back(sphere({1, 0, 0}, 1.0, 1));
    CHECK_THROWS_AS((void)normal_oracle(s, {0, 0.5, 0}), SeamAmbiguity);
    CHECK_NOTHROW((void)normal_oracle(s, {-2, 0, 0}));
}

TEST_CASE("semantic oracle picks the deepest primitive, ties to lowest index") {
    Scene s;
    s.bounds = {{-5, -5, -5}, {5, 5, 5}};
    s.num_classes = 3;
    s.primitives.push_back(sphere({-2, 0, 0}, 1.0, 1));
    s.primitives.push_back(box({0.5, 0, 0}, {1.5, 1.5, 1.5}, 2));
    CHECK(semantic_oracle(s, {-2, 0, 0}) == 1);   // inside sphere only
    CHECK(semantic_oracle(s, {0.5, 0, 0}) == 2);  // deep inside the box
    CHECK(semantic_oracle(s, {4, 4, 4}) == 2);    // outside: nearest surface wins
    // Overlap region where the box is deeper.
    CHECK(semantic_oracle(s, {-0.8, 0, 0}) == 2);

    // Exact tie: identical distances; the lower index wins.
    Scene tie;
    tie.bounds = s.bounds;
    tie.num_classes = 3;
    tie.primitives.push_back(sphere({-1, 0, 0}, 1.0, 2));
    tie.primitives.push_back(sphere({1, 0, 0}, 1.0, 1));
    CHECK(semantic_oracle(tie, {0, 0, 0}) == 2);
}

TEST_CASE("oracle sdf satisfies the eikonal property away from seams") {
    Scene s;
    s.bounds = {{-4, -4, -4}, {4, 4, 4}};
    s.num_classes = 2;
    s.primitives.push_back(sphere({-1.2, 0.3, 0}, 1.0, 0));
    s.primitives.push_back(box({1.5, -0.5, 0.2}, {0.8, 0.6, 0.9}, 1));
    Rng rng(13);
    const double h = 1e-4;
    int checked = 0;
    for (int trial = 0; trial < 2000 && checked < 100; ++trial) {
        Vec3 x = rng.point_in({{-3.5, -3.5, -3.5}, {3.5, 3.5, 3.5}});
        // Stay off the union seam and each primitive's own gradient
        // discontinuities (box edge shadows, sphere center).
        double d0 = std::abs(s.primitives[0].sdf(x));
        double d1 = std::abs(s.primitives[1].sdf(x));
        if (std::abs(d0 - d1) < 1e-2) continue;
        if (norm(x - s.primitives[0].pose.translation) < 0.1) continue;
        Vec3 bl = x - s.primitives[1].pose.translation;
        if (std::abs(std::abs(bl.x) - 0.8) < 0.05 || std::abs(std::abs(bl.y) - 0.6) < 0.05 ||
            std::abs(std::abs(bl.z) - 0.9) < 0.05)
            continue;
        Vec3 g;
        for (int a = 0; a < 3; ++a) {
            Vec3 hi = x, lo = x;
            hi[a] += h;
            lo[a] -= h;
            g[a] = (sdf_oracle(s, hi) - sdf_oracle(s, lo)) / (2 * h);
        }
        CHECK(std::abs(norm(g) - 1.0) < 1e-5);
        ++checked;
    }
    CHECK(checked >= 100);
}

TEST_CASE("surface scans satisfy the surface and normal postconditions") {
    Scene s = unit_sphere_scene();
    auto samples = sample_surface_scans(s, {{2.0, 0.3, 0.2}}, 1000, 7);
    CHECK(samples.size() > 30);
    for (const auto& p : samples) {
        CHECK(std::abs(sdf_oracle(s, p.position)) <= 1e-6);
        CHECK(std::abs(norm(p.normal) - 1.0) <= 1e-9);
        Vec3 expect = normal_oracle(s, p.position);
        CHECK(norm(p.normal - expect) <= 1e-6);
        CHECK(p.class_id == 0);
    }
}

TEST_CASE("scans are deterministic per seed") {
    Scene s = unit_sphere_scene();
    auto a = sample_surface_scans(s, {{2.0, 0.3, 0.2}, {-1.8, 0.5, 0.4}}, 500, 42);
    auto b = sample_surface_scans(s, {{2.0, 0.3, 0.2}, {-1.8, 0.5, 0.4}}, 500, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].position == b[i].position);
        CHECK(a[i].normal == b[i].normal);
    }
    auto c = sample_surface_scans(s, {{2.0, 0.3, 0.2}, {-1.8, 0.5, 0.4}}, 500, 43);
    bool same = a.size() == c.size();
    if (same)
        for (std::size_t i = 0; i < a.size(); ++i) same = same && a[i].position == c[i].position;
    CHECK_FALSE(same);
}

TEST_CASE("more sensor poses cover more voxels") {
    Scene s = unit_sphere_scene();
    GridSpec spec;
    spec.origin = {-1.5, -1.5, -1.5};
    spec.voxel_size = 0.25;
    spec.dims = {12, 12, 12};

    auto touched = [&](const std::vector<PointSample>& samples) {
        std::set<std::int64_t> vox;
        for (const auto& p : samples) {
            int i = int((p.position.x - spec.origin.x) / spec.voxel_size);
            int j = int((p.position.y - spec.origin.y) / spec.voxel_size);
            int k = int((p.position.z - spec.origin.z) / spec.voxel_size);
            if (i >= 0 && i < 12 && j >= 0 && j < 12 && k >= 0 && k < 12)
                vox.insert(spec.flat_index(i, j, k));
        }
        return vox.size();
    };
    auto one = sample_surface_scans(s, {{2.0, 0.0, 0.0}}, 1000, 3);
    auto three = sample_surface_scans(s, {{2.0, 0.0, 0.0}, {-1.6, 1.2, 0.4}, {0.1, -2.1, 0.8}}, 1000, 3);
    CHECK(touched(three) > touched(one));
}

TEST_CASE("no hits raises EmptyScan") {
    Scene s;
    s.bounds = {{-1, -1, -1}, {1, 1, 1}};
    s.num_classes = 1;
    s.primitives.push_back(sphere({100, 100, 100}, 0.5));  // far outside the bounds
    CHECK_THROWS_AS((void)sample_surface_scans(s, {{0, 0, 0}}, 50, 1), EmptyScan);
}

TEST_CASE("voxelize labels interior, exterior, and straddling voxels") {
    Scene s = unit_sphere_scene();
    GridSpec spec;
    spec.origin = {-2, -2, -2};
    spec.voxel_size = 0.5;
    spec.dims = {8, 8, 8};
    OccupancyGrid grid = voxelize_occupancy(s, spec, 2);

    auto at = [&](Vec3 p) {
        int i = int((p.x - spec.origin.x) / spec.voxel_size);
        int j = int((p.y - spec.origin.y) / spec.voxel_size);
        int k = int((p.z - spec.origin.z) / spec.voxel_size);
        return grid.labels[std::size_t(spec.flat_index(i, j, k))];
    };
    CHECK(at({0.1, 0.1, 0.1}) == VoxelLabel::Occupied);
    CHECK(at({-1.9, -1.9, -1.9}) == VoxelLabel::Free);
    // Straddling voxel: contains surface but its center is outside.
    CHECK(at({0.95, 0.1, 0.1}) == VoxelLabel::Occupied);

    // Brute-force 16x dense probing: every occupied voxel has an inside point.
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            for (int k = 0; k < 8; ++k) {
                if (grid.labels[std::size_t(spec.flat_index(i, j, k))] != VoxelLabel::Occupied) continue;
                bool any_inside = false;
                for (int pi = 0; pi < 16 && !any_inside; ++pi)
                    for (int pj = 0; pj < 16 && !any_inside; ++pj)
                        for (int pk = 0; pk < 16 && !any_inside; ++pk) {
                            Vec3 p = spec.origin + Vec3{(i + (pi + 0.5) / 16) * spec.voxel_size,
                                                        (j + (pj + 0.5) / 16) * spec.voxel_size,
                                                        (k + (pk + 0.5) / 16) * spec.voxel_size};
                            any_inside = sdf_oracle(s, p) < 0;
                        }
                CHECK(any_inside);
            }
}

TEST_CASE("voxelize occupied count grows with probe factor on fat primitives") {
    Scene s;
    s.bounds = {{-4, -4, -4}, {4, 4, 4}};
    s.num_classes = 2;
    s.primitives.push_back(sphere({-0.7, 0.4, 0.1}, 1.3, 0));
    s.primitives.push_back(box({1.4, -0.8, -0.3}, {1.0, 0.9, 1.1}, 1));
    GridSpec spec;
    spec.origin = {-4, -4, -4};
    spec.voxel_size = 0.5;
    spec.dims = {16, 16, 16};

    OccupancyGrid g1 = voxelize_occupancy(s, spec, 1);
    OccupancyGrid g2 = voxelize_occupancy(s, spec, 2);
    OccupancyGrid g4 = voxelize_occupancy(s, spec, 4);
    CHECK(g2.count(VoxelLabel::Occupied) >= g1.count(VoxelLabel::Occupied));
    CHECK(g4.count(VoxelLabel::Occupied) >= g2.count(VoxelLabel::Occupied));
    for (std::size_t v = 0; v < g1.labels.size(); ++v)
        if (g1.labels[v] == VoxelLabel::Occupied) CHECK(g4.labels[v] == VoxelLabel::Occupied);
}

TEST_CASE("visibility mask") {
    Scene s = unit_sphere_scene();
    GridSpec spec;
    spec.origin = {-3, -3, -3};
    spec.voxel_size = 0.5;
    spec.dims = {12, 12, 12};
    OccupancyGrid grid = voxelize_occupancy(s, spec, 2);
    Vec3 sensor{-2.4, 0.05, 0.08};
    auto samples = sample_surface_scans(s, {sensor}, 4000, 5);
    visibility_mask(grid, s, {sensor}, samples);

    auto label_at = [&](Vec3 p) {
        int i = int((p.x - spec.origin.x) / spec.voxel_size);
        int j = int((p.y - spec.origin.y) / spec.voxel_size);
        int k = int((p.z - spec.origin.z) / spec.voxel_size);
        return grid.labels[std::size_t(spec.flat_index(i, j, k))];
    };
    // Directly behind the sphere w.r.t. the sensor: unobserved.
    CHECK(label_at({2.3, 0.05, 0.08}) == VoxelLabel::Unobserved);
    // Between sensor and sphere: visible free space.
    CHECK(label_at({-1.8, 0.05, 0.08}) == VoxelLabel::Free);
    // The sensor's own voxel stays visible.
    CHECK(label_at(sensor) == VoxelLabel::Free);
    // Occupied voxel facing the sensor keeps its label.
    CHECK(label_at({-0.95, 0.05, 0.08}) == VoxelLabel::Occupied);

    // Empty scene: every free voxel stays visible.
    Scene empty;
    empty.bounds = s.bounds;
    empty.num_classes = 1;
    OccupancyGrid eg;
    eg.init(spec, 1);
    visibility_mask(eg, empty, {sensor}, {});
    CHECK(eg.count(VoxelLabel::Unobserved) == 0);
}

TEST_CASE("invariant validation") {
    ScenePrimitive bad;
    bad.kind = PrimitiveKind::Sphere;
    bad.radius = -1.0;
    CHECK_THROWS_AS(bad.validate(1), ConfigError);
    ScenePrimitive wrong_class = sphere({0, 0, 0}, 1.0, 5);
    CHECK_THROWS_AS(wrong_class.validate(2), ConfigError);
    Scene s;
    s.bounds = {{1, 1, 1}, {0, 0, 0}};
    CHECK_THROWS_AS(s.validate(), ConfigError);
}
