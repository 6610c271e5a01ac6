#include "sdfit/scene.hpp"

#include <algorithm>
#include <limits>

namespace sdfit {

namespace {

double box_sdf(const Vec3& p, const Vec3& he) {
    Vec3 q{std::abs(p.x) - he.x, std::abs(p.y) - he.y, std::abs(p.z) - he.z};
    Vec3 outside = cwise_max(q, Vec3{0, 0, 0});
    double inside = std::min(std::max({q.x, q.y, q.z}), 0.0);
    return norm(outside) + inside;
}

Vec3 box_normal(const Vec3& p, const Vec3& he) {
    Vec3 q{std::abs(p.x) - he.x, std::abs(p.y) - he.y, std::abs(p.z) - he.z};
    Vec3 sign{p.x < 0 ? -1.0 : 1.0, p.y < 0 ? -1.0 : 1.0, p.z < 0 ? -1.0 : 1.0};
    if (q.x > 0 || q.y > 0 || q.z > 0) {
        Vec3 outside = cwise_max(q, Vec3{0, 0, 0});
        return normalized(Vec3{outside.x * sign.x, outside.y * sign.y, outside.z * sign.z});
    }
    // Interior: nearest face wins.
    int axis = 0;
    if (q.y > q[axis]) axis = 1;
    if (q.z > q[axis]) axis = 2;
    Vec3 n{0, 0, 0};
    n[axis] = sign[axis];
    return n;
}

}  // namespace

double ScenePrimitive::sdf(const Vec3& world) const {
    Vec3 p = pose.to_local(world);
    switch (kind) {
        case PrimitiveKind::Sphere:
            return norm(p) - radius;
        case PrimitiveKind::Box:
            return box_sdf(p, half_extents);
        case PrimitiveKind::Capsule: {
            double a = std::clamp(p.z, -half_length, half_length);
            return norm(Vec3{p.x, p.y, p.z - a}) - radius;
        }
        case PrimitiveKind::HalfSpace:
            return p.z;
    }
    return std::numeric_limits<double>::infinity();
}

Vec3 ScenePrimitive::normal(const Vec3& world) const {
    Vec3 p = pose.to_local(world);
    Vec3 n{0, 0, 1};
    switch (kind) {
        case PrimitiveKind::Sphere:
            n = normalized(p);
            break;
        case PrimitiveKind::Box:
            n = box_normal(p, half_extents);
            break;
        case PrimitiveKind::Capsule: {
            double a = std::clamp(p.z, -half_length, half_length);
            n = normalized(Vec3{p.x, p.y, p.z - a});
            break;
        }
        case PrimitiveKind::HalfSpace:
            break;
    }
    return pose.rotation * n;
}

void ScenePrimitive::validate(int num_classes) const {
    bool ok = true;
    switch (kind) {
        case PrimitiveKind::Sphere:
            ok = radius > 0;
            break;
        case PrimitiveKind::Box:
            ok = half_extents.x > 0 && half_extents.y > 0 && half_extents.z > 0;
            break;
        case PrimitiveKind::Capsule:
            ok = radius > 0 && half_length >= 0;
            break;
        case PrimitiveKind::HalfSpace:
            break;
    }
    if (!ok) throw ConfigError("primitive size parameters must be strictly positive");
    if (class_id < 0 || class_id >= num_classes)
        throw ConfigError("primitive class_id out of range [0, num_classes)");
}

void Scene::validate() const {
    bounds.validate();
    if (num_classes < 1) throw ConfigError("scene needs at least one class");
    for (const auto& p : primitives) p.validate(num_classes);
}

std::int64_t OccupancyGrid::count(VoxelLabel l) const {
    return std::count(labels.begin(), labels.end(), l);
}

double sdf_oracle(const Scene& scene, const Vec3& x) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : scene.primitives) best = std::min(best, p.sdf(x));
    return best;
}

int owning_primitive(const Scene& scene, const Vec3& x, double tol) {
    if (scene.primitives.empty()) throw ConfigError("scene has no primitives");
    int best = -1;
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < int(scene.primitives.size()); ++i) {
        double d = std::abs(scene.primitives[i].sdf(x));
        if (d < d1) {
            d2 = d1;
            d1 = d;
            best = i;
        } else if (d < d2) {
            d2 = d;
        }
    }
    if (scene.primitives.size() > 1 && d2 - d1 <= tol)
        throw SeamAmbiguity("point is equidistant to two primitive surfaces");
    return best;
}

Vec3 normal_oracle(const Scene& scene, const Vec3& x) {
    return scene.primitives[owning_primitive(scene, x)].normal(x);
}

int semantic_oracle(const Scene& scene, const Vec3& x) {
    if (scene.primitives.empty()) throw ConfigError("scene has no primitives");
    int best = 0;
    double best_sdf = scene.primitives[0].sdf(x);
    for (int i = 1; i < int(scene.primitives.size()); ++i) {
        double d = scene.primitives[i].sdf(x);
        if (d < best_sdf) {
            best_sdf = d;
            best = i;
        }
    }
    return scene.primitives[best].class_id;
}

namespace {

/// Distance to where the ray exits `b`, assuming the origin is inside.
double ray_exit_distance(const Bounds& b, const Vec3& o, const Vec3& d) {
    double t = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (d[a] > 1e-300) t = std::min(t, (b.hi[a] - o[a]) / d[a]);
        if (d[a] < -1e-300) t = std::min(t, (b.lo[a] - o[a]) / d[a]);
    }
    return t;
}

}  // namespace

RayHit trace_ray(const Scene& scene, const Vec3& origin, const Vec3& dir, double tol) {
    RayHit out;
    if (scene.primitives.empty()) return out;
    double t_exit = ray_exit_distance(scene.bounds, origin, dir);
    double t = 0.0;
    double s = sdf_oracle(scene, origin);
    if (s <= 0.0) return out;  // inside an object, no outward hit
    for (int iter = 0; iter < 512 && t <= t_exit; ++iter) {
        // Overshoot slightly once close so bisection gets a sign change.
        double step = s < 1e-4 ? s + 1e-7 : s;
        double t_next = t + step;
        double s_next = sdf_oracle(scene, origin + dir * t_next);
        if (s_next <= 0.0) {
            double lo = t, hi = t_next;
            for (int b = 0; b < 80; ++b) {
                double mid = 0.5 * (lo + hi);
                double sm = sdf_oracle(scene, origin + dir * mid);
                if (std::abs(sm) <= tol * 0.5) {
                    lo = hi = mid;
                    break;
                }
                (sm > 0.0 ? lo : hi) = mid;
            }
            out.hit = true;
            out.t = 0.5 * (lo + hi);
            out.position = origin + dir * out.t;
            return out;
        }
        t = t_next;
        s = s_next;
    }
    return out;
}

std::vector<PointSample> sample_surface_scans(const Scene& scene, const std::vector<Vec3>& sensor_poses,
                                              int rays_per_scan, std::uint64_t rng_seed) {
    scene.validate();
    if (rays_per_scan < 1) throw ConfigError("rays_per_scan must be >= 1");
    for (const auto& pose : sensor_poses) {
        if (!scene.bounds.contains(pose)) throw ConfigError("sensor pose outside scene bounds");
        if (sdf_oracle(scene, pose) <= 0.0) throw ConfigError("sensor pose inside an object");
    }
    std::vector<PointSample> samples;
    samples.reserve(std::size_t(sensor_poses.size()) * rays_per_scan);
    for (std::size_t pi = 0; pi < sensor_poses.size(); ++pi) {
        for (int ri = 0; ri < rays_per_scan; ++ri) {
            Rng rng(rng_seed, (std::uint64_t(pi) << 32) | std::uint64_t(ri));
            Vec3 dir = rng.unit_vector();
            RayHit hit = trace_ray(scene, sensor_poses[pi], dir);
            if (!hit.hit) continue;
            int owner;
            try {
                owner = owning_primitive(scene, hit.position);
            } catch (const SeamAmbiguity&) {
                continue;  // seam points carry no well-defined normal
            }
            const auto& prim = scene.primitives[owner];
            samples.push_back({hit.position, prim.normal(hit.position), prim.class_id});
        }
    }
    if (samples.empty()) throw EmptyScan("no ray hit a surface inside the bounds");
    return samples;
}

OccupancyGrid voxelize_occupancy(const Scene& scene, const GridSpec& spec, int probe_factor) {
    scene.validate();
    spec.validate();
    if (probe_factor < 1) throw ConfigError("probe_factor must be >= 1");
    Bounds box = spec.cell_box();
    const double slack = 1e-9;
    if (box.lo.x < scene.bounds.lo.x - slack || box.hi.x > scene.bounds.hi.x + slack ||
        box.lo.y < scene.bounds.lo.y - slack || box.hi.y > scene.bounds.hi.y + slack ||
        box.lo.z < scene.bounds.lo.z - slack || box.hi.z > scene.bounds.hi.z + slack)
        throw ConfigError("occupancy grid box must lie inside scene bounds");

    OccupancyGrid grid;
    grid.init(spec, scene.num_classes);
    double h = spec.voxel_size;
    for (int i = 0; i < spec.dims[0]; ++i)
        for (int j = 0; j < spec.dims[1]; ++j)
            for (int k = 0; k < spec.dims[2]; ++k) {
                Vec3 base = spec.origin + Vec3{i * h, j * h, k * h};
                double deepest = std::numeric_limits<double>::infinity();
                Vec3 deepest_pos;
                for (int pi = 0; pi < probe_factor; ++pi)
                    for (int pj = 0; pj < probe_factor; ++pj)
                        for (int pk = 0; pk < probe_factor; ++pk) {
                            Vec3 p = base + Vec3{(pi + 0.5) / probe_factor * h, (pj + 0.5) / probe_factor * h,
                                                 (pk + 0.5) / probe_factor * h};
                            double s = sdf_oracle(scene, p);
                            if (s < deepest) {
                                deepest = s;
                                deepest_pos = p;
                            }
                        }
                std::int64_t idx = spec.flat_index(i, j, k);
                if (deepest < 0.0) {
                    grid.labels[idx] = VoxelLabel::Occupied;
                    grid.classes[idx] = std::int16_t(semantic_oracle(scene, deepest_pos));
                }
            }
    return grid;
}

namespace {

bool voxel_of(const GridSpec& spec, const Vec3& p, std::array<int, 3>& out) {
    for (int a = 0; a < 3; ++a) {
        double t = (p[a] - spec.origin[a]) / spec.voxel_size;
        int i = int(std::floor(t));
        if (i < 0 || i >= spec.dims[a]) return false;
        out[a] = i;
    }
    return true;
}

}  // namespace

void visibility_mask(OccupancyGrid& grid, const Scene& scene, const std::vector<Vec3>& sensor_poses,
                     const std::vector<PointSample>& samples) {
    const GridSpec& spec = grid.spec;
    std::vector<char> has_sample(grid.labels.size(), 0);
    for (const auto& s : samples) {
        std::array<int, 3> v;
        if (voxel_of(spec, s.position, v)) has_sample[spec.flat_index(v[0], v[1], v[2])] = 1;
    }
    for (int i = 0; i < spec.dims[0]; ++i)
        for (int j = 0; j < spec.dims[1]; ++j)
            for (int k = 0; k < spec.dims[2]; ++k) {
                std::int64_t idx = spec.flat_index(i, j, k);
                if (grid.labels[idx] == VoxelLabel::Occupied) {
                    if (!has_sample[idx]) {
                        grid.labels[idx] = VoxelLabel::Unobserved;
                        grid.classes[idx] = -1;
                    }
                    continue;
                }
                if (grid.labels[idx] != VoxelLabel::Free) continue;
                Vec3 center = spec.voxel_center(i, j, k);
                bool visible = false;
                for (const auto& pose : sensor_poses) {
                    Vec3 d = center - pose;
                    double dist = norm(d);
                    if (dist < 0.5 * spec.voxel_size * 1.7320508075688772) {
                        // Sensor within (or next to) the voxel: trivially seen.
                        std::array<int, 3> v;
                        if (voxel_of(spec, pose, v) && v[0] == i && v[1] == j && v[2] == k) {
                            visible = true;
                            break;
                        }
                    }
                    if (dist <= 1e-12) {
                        visible = true;
                        break;
                    }
                    RayHit hit = trace_ray(scene, pose, d / dist);
                    if (!hit.hit || hit.t >= dist - 1e-6) {
                        visible = true;
                        break;
                    }
                }
                if (!visible) grid.labels[idx] = VoxelLabel::Unobserved;
            }
}

}  // namespace sdfit
