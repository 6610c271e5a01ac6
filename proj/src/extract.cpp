#include "sdfit/extract.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "mc_tables.hpp"

namespace sdfit {

namespace {

/// Key of the grid edge leaving node (i,j,k) along `axis`.
std::int64_t edge_key(const GridSpec& spec, int i, int j, int k, int axis) {
    return spec.flat_index(i, j, k) * 3 + axis;
}

}  // namespace

Mesh marching_cubes(const ScalarField& field, const GridSpec& spec, double iso) {
    spec.validate();
    if (spec.dims[0] < 2 || spec.dims[1] < 2 || spec.dims[2] < 2)
        throw ConfigError("marching cubes needs at least 2 nodes per axis");

    // Node values, nudged off the iso level so crossings never sit exactly
    // on nodes (keeps interpolation parameters strictly inside edges).
    std::vector<double> values(std::size_t(spec.cell_count()));
    double snap = 1e-12 * (1.0 + std::abs(iso));
    for (int i = 0; i < spec.dims[0]; ++i)
        for (int j = 0; j < spec.dims[1]; ++j)
            for (int k = 0; k < spec.dims[2]; ++k) {
                double v = field(spec.node_position(i, j, k));
                if (!std::isfinite(v)) throw NumericError("non-finite field value at a grid node");
                if (v == iso) v = iso + snap;
                values[std::size_t(spec.flat_index(i, j, k))] = v;
            }

    Mesh mesh;
    std::unordered_map<std::int64_t, int> edge_vertex;
    auto vertex_on_edge = [&](int i, int j, int k, int axis) {
        std::int64_t key = edge_key(spec, i, j, k, axis);
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;
        int ni = i + (axis == 0), nj = j + (axis == 1), nk = k + (axis == 2);
        double v0 = values[std::size_t(spec.flat_index(i, j, k))];
        double v1 = values[std::size_t(spec.flat_index(ni, nj, nk))];
        double t = (iso - v0) / (v1 - v0);
        Vec3 p = spec.node_position(i, j, k);
        p[axis] += t * spec.voxel_size;
        int id = int(mesh.vertices.size());
        mesh.vertices.push_back(p);
        edge_vertex.emplace(key, id);
        return id;
    };

    for (int i = 0; i + 1 < spec.dims[0]; ++i)
        for (int j = 0; j + 1 < spec.dims[1]; ++j)
            for (int k = 0; k + 1 < spec.dims[2]; ++k) {
                double corner[8];
                int case_index = 0;
                for (int c = 0; c < 8; ++c) {
                    corner[c] = values[std::size_t(spec.flat_index(i + mc::kCornerOffset[c][0],
                                                                   j + mc::kCornerOffset[c][1],
                                                                   k + mc::kCornerOffset[c][2]))];
                    if (corner[c] <= iso) case_index |= 1 << c;
                }
                if (case_index == 0 || case_index == 255) continue;
                const signed char* tris = mc::kTriTable[case_index];
                for (int t = 0; t < 16 && tris[t] != -1; t += 3) {
                    int ids[3];
                    for (int e = 0; e < 3; ++e) {
                        int edge = tris[t + e];
                        int c0 = mc::kEdgeVertex[edge][0];
                        int c1 = mc::kEdgeVertex[edge][1];
                        // Canonical orientation: the endpoint with the lower
                        // offset on the differing axis owns the edge.
                        int axis = 0;
                        for (int a = 0; a < 3; ++a)
                            if (mc::kCornerOffset[c0][a] != mc::kCornerOffset[c1][a]) axis = a;
                        int lo = mc::kCornerOffset[c0][axis] < mc::kCornerOffset[c1][axis] ? c0 : c1;
                        ids[e] = vertex_on_edge(i + mc::kCornerOffset[lo][0], j + mc::kCornerOffset[lo][1],
                                                k + mc::kCornerOffset[lo][2], axis);
                    }
                    // Reversed table order so right-hand normals point toward
                    // increasing field values (outward for an SDF).
                    mesh.triangles.push_back({ids[0], ids[2], ids[1]});
                }
            }

    if (mesh.triangles.empty()) throw EmptyMesh("field does not cross the iso level inside the grid");
    drop_degenerate_triangles(mesh);
    if (mesh.triangles.empty()) throw EmptyMesh("all iso crossings were degenerate");
    mesh.vertex_class.assign(mesh.vertices.size(), 0);
    return mesh;
}

Mesh extract_mesh(const FieldParams& params, const GridSpec& spec, double iso) {
    FieldEvaluator ev(params);
    Mesh mesh = marching_cubes([&](const Vec3& x) { return ev.forward(x, false, false).phi; }, spec, iso);
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const PointValue& val = ev.forward(mesh.vertices[v], false, true);
        int best = 0;
        for (int c = 1; c < params.shape.num_classes; ++c)
            if (val.sem[std::size_t(c)] > val.sem[std::size_t(best)]) best = c;
        mesh.vertex_class[v] = best;
    }
    return mesh;
}

double mesh_signed_volume(const Mesh& mesh) {
    double vol = 0.0;
    for (const auto& t : mesh.triangles) {
        const Vec3& a = mesh.vertices[std::size_t(t[0])];
        const Vec3& b = mesh.vertices[std::size_t(t[1])];
        const Vec3& c = mesh.vertices[std::size_t(t[2])];
        vol += dot(a, cross(b, c)) / 6.0;
    }
    return vol;
}

void drop_degenerate_triangles(Mesh& mesh, double min_area) {
    std::vector<std::array<int, 3>> kept;
    kept.reserve(mesh.triangles.size());
    for (const auto& t : mesh.triangles) {
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
        const Vec3& a = mesh.vertices[std::size_t(t[0])];
        const Vec3& b = mesh.vertices[std::size_t(t[1])];
        const Vec3& c = mesh.vertices[std::size_t(t[2])];
        if (0.5 * norm(cross(b - a, c - a)) <= min_area) continue;
        kept.push_back(t);
    }
    mesh.triangles = std::move(kept);
}

int occupancy_argmax(std::span<const double> sem_logits, double l_free) {
    int best = 0;
    double best_v = sem_logits.empty() ? -std::numeric_limits<double>::infinity() : sem_logits[0];
    for (int c = 1; c < int(sem_logits.size()); ++c)
        if (sem_logits[std::size_t(c)] > best_v) {
            best_v = sem_logits[std::size_t(c)];
            best = c;
        }
    if (l_free > best_v) return int(sem_logits.size());
    return best;
}

OccupancyGrid predict_occupancy(const FieldParams& params, const GridSpec& spec, const LossWeights& w,
                                int subgrid_factor) {
    spec.validate();
    if (subgrid_factor < 1) throw ConfigError("subgrid_factor must be >= 1");
    OccupancyGrid grid;
    grid.init(spec, params.shape.num_classes);
    FieldEvaluator ev(params);
    double h = spec.voxel_size;
    int sg = subgrid_factor;
    for (int i = 0; i < spec.dims[0]; ++i)
        for (int j = 0; j < spec.dims[1]; ++j)
            for (int k = 0; k < spec.dims[2]; ++k) {
                Vec3 base = spec.origin + Vec3{i * h, j * h, k * h};
                double min_phi = std::numeric_limits<double>::infinity();
                Vec3 argmin;
                for (int pi = 0; pi < sg; ++pi)
                    for (int pj = 0; pj < sg; ++pj)
                        for (int pk = 0; pk < sg; ++pk) {
                            Vec3 p = base + Vec3{(pi + 0.5) / sg * h, (pj + 0.5) / sg * h, (pk + 0.5) / sg * h};
                            double phi = ev.forward(p, false, false).phi;
                            if (phi < min_phi) {
                                min_phi = phi;
                                argmin = p;
                            }
                        }
                const PointValue& v = ev.forward(argmin, false, true);
                int cls = occupancy_argmax(v.sem, free_logit(min_phi, w.beta, w.t));
                std::int64_t idx = spec.flat_index(i, j, k);
                if (cls == params.shape.num_classes) {
                    grid.labels[std::size_t(idx)] = VoxelLabel::Free;
                } else {
                    grid.labels[std::size_t(idx)] = VoxelLabel::Occupied;
                    grid.classes[std::size_t(idx)] = std::int16_t(cls);
                }
            }
    return grid;
}

// ------------------------------------------------------------- depth

void PinholeCamera::validate() const {
    if (width < 1 || height < 1) throw ConfigError("camera image size must be positive");
    if (fx <= 0 || fy <= 0) throw ConfigError("camera focal lengths must be positive");
}

namespace {

struct TriPrecomp {
    Vec3 v0, e1, e2;
};

/// Moller-Trumbore; `t` is in units of the (possibly unnormalized) ray
/// direction, which makes it the z-depth for dir = (u, v, 1) camera rays.
bool ray_triangle(const Vec3& o, const Vec3& d, const TriPrecomp& tri, double& t) {
    Vec3 pvec = cross(d, tri.e2);
    double det = dot(tri.e1, pvec);
    if (std::abs(det) < 1e-300) return false;
    double inv = 1.0 / det;
    Vec3 tvec = o - tri.v0;
    double u = dot(tvec, pvec) * inv;
    if (u < 0.0 || u > 1.0) return false;
    Vec3 qvec = cross(tvec, tri.e1);
    double v = dot(d, qvec) * inv;
    if (v < 0.0 || u + v > 1.0) return false;
    double hit = dot(tri.e2, qvec) * inv;
    if (hit <= 1e-12) return false;
    t = hit;
    return true;
}

}  // namespace

DepthMap render_depth(const Mesh& mesh, const PinholeCamera& camera) {
    camera.validate();
    DepthMap out;
    out.init(camera);
    std::vector<TriPrecomp> tris(mesh.triangles.size());
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        tris[i].v0 = mesh.vertices[std::size_t(t[0])];
        tris[i].e1 = mesh.vertices[std::size_t(t[1])] - tris[i].v0;
        tris[i].e2 = mesh.vertices[std::size_t(t[2])] - tris[i].v0;
    }
    const Vec3 origin = camera.pose.translation;
    for (int py = 0; py < camera.height; ++py)
        for (int px = 0; px < camera.width; ++px) {
            Vec3 dir_cam{(px + 0.5 - camera.cx) / camera.fx, (py + 0.5 - camera.cy) / camera.fy, 1.0};
            Vec3 dir = camera.pose.rotation * dir_cam;
            double best = std::numeric_limits<double>::infinity();
            for (const auto& tri : tris) {
                double t;
                if (ray_triangle(origin, dir, tri, t) && t < best) best = t;
            }
            if (std::isfinite(best)) out.depth[std::size_t(py) * camera.width + px] = best;
        }
    return out;
}

DepthMap oracle_depth_map(const Scene& scene, const PinholeCamera& camera) {
    camera.validate();
    DepthMap out;
    out.init(camera);
    for (int py = 0; py < camera.height; ++py)
        for (int px = 0; px < camera.width; ++px) {
            Vec3 dir_cam{(px + 0.5 - camera.cx) / camera.fx, (py + 0.5 - camera.cy) / camera.fy, 1.0};
            double len = norm(dir_cam);
            Vec3 dir = camera.pose.rotation * (dir_cam / len);
            RayHit hit = trace_ray(scene, camera.pose.translation, dir);
            if (hit.hit) out.depth[std::size_t(py) * camera.width + px] = hit.t / len;
        }
    return out;
}

// ------------------------------------------------------------- fusion

void FusedScene::init(const GridSpec& s, int nc) {
    s.validate();
    if (nc < 1) throw ConfigError("fused scene needs at least one class");
    spec = s;
    num_classes = nc;
    sdf.assign(std::size_t(s.cell_count()), 0.0);
    logits.assign(std::size_t(s.cell_count()) * nc, 0.0);
    counts.assign(std::size_t(s.cell_count()), 0);
}

void fuse_frame(FusedScene& history, const FieldParams& frame, const RigidTransform& frame_to_world,
                double momentum) {
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
    if (history.num_classes != frame.shape.num_classes)
        throw SpecMismatch("fused scene and frame class counts differ");
    Bounds roi = frame.shape.grid.node_box();
    FieldEvaluator ev(frame);
    int nc = history.num_classes;
    for (int i = 0; i < history.spec.dims[0]; ++i)
        for (int j = 0; j < history.spec.dims[1]; ++j)
            for (int k = 0; k < history.spec.dims[2]; ++k) {
                Vec3 world = history.spec.voxel_center(i, j, k);
                Vec3 local = frame_to_world.to_local(world);
                if (!roi.contains(local)) continue;
                const PointValue& v = ev.forward(local, false, true);
                std::size_t idx = std::size_t(history.spec.flat_index(i, j, k));
                double* cell_logits = history.logits.data() + idx * std::size_t(nc);
                if (history.counts[idx] == 0) {
                    history.sdf[idx] = v.phi;
                    for (int c = 0; c < nc; ++c) cell_logits[c] = v.sem[std::size_t(c)];
                } else {
                    history.sdf[idx] = momentum * history.sdf[idx] + (1.0 - momentum) * v.phi;
                    for (int c = 0; c < nc; ++c)
                        cell_logits[c] = momentum * cell_logits[c] + (1.0 - momentum) * v.sem[std::size_t(c)];
                }
                ++history.counts[idx];
            }
}

OccupancyGrid fused_occupancy(const FusedScene& fused, const LossWeights& w) {
    OccupancyGrid grid;
    grid.init(fused.spec, fused.num_classes);
    for (std::size_t idx = 0; idx < fused.counts.size(); ++idx) {
        if (fused.counts[idx] == 0) {
            grid.labels[idx] = VoxelLabel::Unobserved;
            continue;
        }
        std::span<const double> sem(fused.logits.data() + idx * std::size_t(fused.num_classes),
                                    std::size_t(fused.num_classes));
        int cls = occupancy_argmax(sem, free_logit(fused.sdf[idx], w.beta, w.t));
        if (cls == fused.num_classes) {
            grid.labels[idx] = VoxelLabel::Free;
        } else {
            grid.labels[idx] = VoxelLabel::Occupied;
            grid.classes[idx] = std::int16_t(cls);
        }
    }
    return grid;
}

}  // namespace sdfit
