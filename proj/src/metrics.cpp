#include "sdfit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sdfit {

MiouResult miou(const OccupancyGrid& pred, const OccupancyGrid& gt) {
    if (!(pred.spec == gt.spec)) throw SpecMismatch("prediction and ground-truth grid specs differ");
    if (pred.num_classes != gt.num_classes) throw SpecMismatch("class counts differ");

    int s = gt.num_classes;
    std::vector<std::int64_t> tp(std::size_t(s), 0), fp(std::size_t(s), 0), fn(std::size_t(s), 0);
    std::int64_t geo_tp = 0, geo_fp = 0, geo_fn = 0;

    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
        if (gt.labels[i] == VoxelLabel::Unobserved) continue;
        bool gt_occ = gt.labels[i] == VoxelLabel::Occupied;
        bool pr_occ = pred.labels[i] == VoxelLabel::Occupied;
        int gt_c = gt_occ ? gt.classes[i] : -1;
        int pr_c = pr_occ ? pred.classes[i] : -1;
        if (gt_occ && pr_occ) ++geo_tp;
        if (!gt_occ && pr_occ) ++geo_fp;
        if (gt_occ && !pr_occ) ++geo_fn;
        if (gt_c == pr_c) {
            if (gt_c >= 0) ++tp[std::size_t(gt_c)];
        } else {
            if (gt_c >= 0) ++fn[std::size_t(gt_c)];
            if (pr_c >= 0) ++fp[std::size_t(pr_c)];
        }
    }

    MiouResult out;
    out.per_class.assign(std::size_t(s), std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < s; ++c) {
        std::int64_t denom = tp[std::size_t(c)] + fp[std::size_t(c)] + fn[std::size_t(c)];
        if (denom == 0) continue;  // class absent from both sides
        out.per_class[std::size_t(c)] = double(tp[std::size_t(c)]) / double(denom);
        sum += out.per_class[std::size_t(c)];
        ++present;
    }
    out.miou = present ? sum / present : 1.0;
    std::int64_t geo_denom = geo_tp + geo_fp + geo_fn;
    out.geometric_iou = geo_denom ? double(geo_tp) / double(geo_denom) : 1.0;
    return out;
}

DepthMetricsResult depth_metrics(const DepthMap& pred, const DepthMap& gt) {
    if (pred.camera.width != gt.camera.width || pred.camera.height != gt.camera.height)
        throw SpecMismatch("depth maps have different sizes");
    DepthMetricsResult out;
    std::int64_t n = 0;
    double abs_rel = 0.0, sq_rel = 0.0, sq = 0.0, delta = 0.0;
    for (std::size_t i = 0; i < gt.depth.size(); ++i) {
        double d = pred.depth[i], dstar = gt.depth[i];
        if (d <= 0.0 || dstar <= 0.0) continue;
        ++n;
        double err = std::abs(d - dstar);
        abs_rel += err / dstar;
        sq_rel += err * err / dstar;
        sq += err * err;
        delta += std::max(d / dstar, dstar / d) < 1.25 ? 1.0 : 0.0;
    }
    if (n == 0) throw NoValidPixels("no pixel is valid in both depth maps");
    out.abs_rel = abs_rel / double(n);
    out.sq_rel = sq_rel / double(n);
    out.rmse = std::sqrt(sq / double(n));
    out.delta_1_25 = delta / double(n);
    return out;
}

// ------------------------------------------------------------- distances

double point_triangle_dist2(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 ab = b - a, ac = c - a, ap = p - a;
    double d1 = dot(ab, ap), d2 = dot(ac, ap);
    if (d1 <= 0.0 && d2 <= 0.0) return dot(ap, ap);
    Vec3 bp = p - b;
    double d3 = dot(ab, bp), d4 = dot(ac, bp);
    if (d3 >= 0.0 && d4 <= d3) return dot(bp, bp);
    double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        double v = d1 / (d1 - d3);
        Vec3 q = ap - ab * v;
        return dot(q, q);
    }
    Vec3 cp = p - c;
    double d5 = dot(ab, cp), d6 = dot(ac, cp);
    if (d6 >= 0.0 && d5 <= d6) return dot(cp, cp);
    double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        double w = d2 / (d2 - d6);
        Vec3 q = ap - ac * w;
        return dot(q, q);
    }
    double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        Vec3 q = p - (b + (c - b) * w);
        return dot(q, q);
    }
    double denom = 1.0 / (va + vb + vc);
    double v = vb * denom, w = vc * denom;
    Vec3 q = p - (a + ab * v + ac * w);
    return dot(q, q);
}

double point_mesh_distance(const Vec3& p, const Mesh& mesh) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : mesh.triangles)
        best = std::min(best, point_triangle_dist2(p, mesh.vertices[std::size_t(t[0])],
                                                   mesh.vertices[std::size_t(t[1])],
                                                   mesh.vertices[std::size_t(t[2])]));
    return std::sqrt(best);
}

std::vector<Vec3> sample_mesh_surface(const Mesh& mesh, int n_samples, Rng& rng) {
    if (mesh.triangles.empty()) throw EmptyMesh("cannot sample an empty mesh");
    std::vector<double> cumulative(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        total += 0.5 * norm(cross(mesh.vertices[std::size_t(t[1])] - mesh.vertices[std::size_t(t[0])],
                                  mesh.vertices[std::size_t(t[2])] - mesh.vertices[std::size_t(t[0])]));
        cumulative[i] = total;
    }
    std::vector<Vec3> out;
    out.reserve(std::size_t(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        double pick = rng.uniform() * total;
        std::size_t ti = std::size_t(std::lower_bound(cumulative.begin(), cumulative.end(), pick) -
                                     cumulative.begin());
        if (ti >= mesh.triangles.size()) ti = mesh.triangles.size() - 1;
        const auto& t = mesh.triangles[ti];
        double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
        double wa = 1.0 - r1, wb = r1 * (1.0 - r2), wc = r1 * r2;
        out.push_back(mesh.vertices[std::size_t(t[0])] * wa + mesh.vertices[std::size_t(t[1])] * wb +
                      mesh.vertices[std::size_t(t[2])] * wc);
    }
    return out;
}

namespace {

/// One uniform sample of a primitive's full surface (local frame).
Vec3 primitive_surface_point(const ScenePrimitive& prim, const Bounds& bounds, Rng& rng) {
    switch (prim.kind) {
        case PrimitiveKind::Sphere:
            return prim.pose.to_world(rng.unit_vector() * prim.radius);
        case PrimitiveKind::Box: {
            const Vec3& he = prim.half_extents;
            double ax = he.y * he.z, ay = he.x * he.z, az = he.x * he.y;
            double pick = rng.uniform() * (ax + ay + az);
            double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            Vec3 p{rng.uniform(-he.x, he.x), rng.uniform(-he.y, he.y), rng.uniform(-he.z, he.z)};
            if (pick < ax)
                p.x = sign * he.x;
            else if (pick < ax + ay)
                p.y = sign * he.y;
            else
                p.z = sign * he.z;
            return prim.pose.to_world(p);
        }
        case PrimitiveKind::Capsule: {
            double cyl = 2.0 * M_PI * prim.radius * 2.0 * prim.half_length;
            double caps = 4.0 * M_PI * prim.radius * prim.radius;
            if (rng.uniform() * (cyl + caps) < cyl) {
                double theta = rng.uniform(0.0, 2.0 * M_PI);
                double z = rng.uniform(-prim.half_length, prim.half_length);
                return prim.pose.to_world(
                    {prim.radius * std::cos(theta), prim.radius * std::sin(theta), z});
            }
            Vec3 d = rng.unit_vector() * prim.radius;
            d.z += d.z >= 0.0 ? prim.half_length : -prim.half_length;
            return prim.pose.to_world(d);
        }
        case PrimitiveKind::HalfSpace: {
            // Sample the plane patch covering the bounds' projection.
            Vec3 n = prim.pose.rotation * Vec3{0, 0, 1};
            Vec3 p0 = prim.pose.translation;
            Vec3 e1 = prim.pose.rotation * Vec3{1, 0, 0};
            Vec3 e2 = prim.pose.rotation * Vec3{0, 1, 0};
            double lo1 = std::numeric_limits<double>::infinity(), hi1 = -lo1;
            double lo2 = lo1, hi2 = -lo1;
            for (int c = 0; c < 8; ++c) {
                Vec3 corner{c & 1 ? bounds.hi.x : bounds.lo.x, c & 2 ? bounds.hi.y : bounds.lo.y,
                            c & 4 ? bounds.hi.z : bounds.lo.z};
                double u = dot(corner - p0, e1), v = dot(corner - p0, e2);
                lo1 = std::min(lo1, u);
                hi1 = std::max(hi1, u);
                lo2 = std::min(lo2, v);
                hi2 = std::max(hi2, v);
            }
            (void)n;
            return p0 + e1 * rng.uniform(lo1, hi1) + e2 * rng.uniform(lo2, hi2);
        }
    }
    return {};
}

double primitive_surface_area(const ScenePrimitive& prim, const Bounds& bounds) {
    switch (prim.kind) {
        case PrimitiveKind::Sphere:
            return 4.0 * M_PI * prim.radius * prim.radius;
        case PrimitiveKind::Box: {
            const Vec3& he = prim.half_extents;
            return 8.0 * (he.x * he.y + he.y * he.z + he.z * he.x);
        }
        case PrimitiveKind::Capsule:
            return 2.0 * M_PI * prim.radius * 2.0 * prim.half_length +
                   4.0 * M_PI * prim.radius * prim.radius;
        case PrimitiveKind::HalfSpace: {
            // Proxy: footprint of the bounds on the plane (rejection below
            // trims anything outside the box anyway).
            Vec3 ext = bounds.extent();
            double a = std::max({ext.x * ext.y, ext.y * ext.z, ext.z * ext.x});
            return a;
        }
    }
    return 0.0;
}

}  // namespace

std::vector<Vec3> sample_scene_surface(const Scene& scene, int n_samples, Rng& rng) {
    if (scene.primitives.empty()) throw ConfigError("scene has no primitives");
    std::vector<double> cumulative(scene.primitives.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        total += primitive_surface_area(scene.primitives[i], scene.bounds);
        cumulative[i] = total;
    }
    std::vector<Vec3> out;
    out.reserve(std::size_t(n_samples));
    int guard = 0;
    const int max_tries = n_samples * 200 + 10000;
    while (int(out.size()) < n_samples && guard++ < max_tries) {
        double pick = rng.uniform() * total;
        std::size_t pi = std::size_t(std::lower_bound(cumulative.begin(), cumulative.end(), pick) -
                                     cumulative.begin());
        if (pi >= scene.primitives.size()) pi = scene.primitives.size() - 1;
        Vec3 p = primitive_surface_point(scene.primitives[pi], scene.bounds, rng);
        if (!scene.bounds.contains(p)) continue;
        // Keep only points on the union surface (not buried inside another
        // primitive); rejection keeps the accepted set uniform.
        if (sdf_oracle(scene, p) < -1e-9) continue;
        out.push_back(p);
    }
    if (out.empty()) throw NumericError("could not sample the scene surface inside the bounds");
    return out;
}

double chamfer(const Mesh& mesh, const Scene& scene, int n_samples, std::uint64_t seed) {
    if (mesh.triangles.empty()) throw EmptyMesh("chamfer needs a non-empty mesh");
    if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
    Rng rng(seed);
    double mesh_to_scene = 0.0;
    std::vector<Vec3> mesh_pts = sample_mesh_surface(mesh, n_samples, rng);
    for (const Vec3& p : mesh_pts) mesh_to_scene += std::abs(sdf_oracle(scene, p));
    mesh_to_scene /= double(mesh_pts.size());

    double scene_to_mesh = 0.0;
    std::vector<Vec3> scene_pts = sample_scene_surface(scene, n_samples, rng);
    for (const Vec3& p : scene_pts) scene_to_mesh += point_mesh_distance(p, mesh);
    scene_to_mesh /= double(scene_pts.size());

    return 0.5 * (mesh_to_scene + scene_to_mesh);
}

double eikonal_residual(const FieldParams& params, const std::vector<Vec3>& positions) {
    FieldEvaluator ev(params);
    return eikonal_residual([&](const Vec3& x) { return ev.forward(x, true, false).grad; }, positions);
}

double eikonal_residual(const GradientField& gradient, const std::vector<Vec3>& positions) {
    if (positions.empty()) throw ConfigError("eikonal residual needs at least one position");
    double sum = 0.0;
    for (const Vec3& x : positions) sum += std::abs(norm(gradient(x)) - 1.0);
    return sum / double(positions.size());
}

}  // namespace sdfit
