#pragma once

#include <cstdint>
#include <vector>

#include "sdfit/core.hpp"

// Synthetic scenes with analytic SDF / normal / semantic oracles, plus the
// two weak-supervision sources derived from them: lidar-like surface scans
// and coarse occupancy grids with a sensor-visibility mask.

namespace sdfit {

enum class PrimitiveKind { Sphere, Box, Capsule, HalfSpace };

/// One analytic solid. The shape lives in the local frame of `pose`:
/// sphere of `radius` at the origin; box of `half_extents`; capsule along
/// local z with `radius` and `half_length`; half-space occupying local z <= 0.
struct ScenePrimitive {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    RigidTransform pose;
    double radius = 1.0;
    double half_length = 0.0;
    Vec3 half_extents{1, 1, 1};
    int class_id = 0;

    double sdf(const Vec3& world) const;
    Vec3 normal(const Vec3& world) const;
    void validate(int num_classes) const;
};

struct Scene {
    std::vector<ScenePrimitive> primitives;
    Bounds bounds;
    int num_classes = 1;

    void validate() const;
};

/// A surface point with its outward normal and owning primitive's class.
struct PointSample {
    Vec3 position;
    Vec3 normal;
    int class_id = 0;
};

enum class VoxelLabel : std::uint8_t { Free, Occupied, Unobserved };

struct OccupancyGrid {
    GridSpec spec;
    int num_classes = 1;
    std::vector<VoxelLabel> labels;
    std::vector<std::int16_t> classes;  // valid where label == Occupied, else -1

    void init(const GridSpec& s, int nc) {
        spec = s;
        num_classes = nc;
        labels.assign(std::size_t(s.cell_count()), VoxelLabel::Free);
        classes.assign(std::size_t(s.cell_count()), -1);
    }
    std::int64_t count(VoxelLabel l) const;
};

// ------------------------------------------------------------- oracles

/// Signed distance of the primitive union: min over per-primitive SDFs.
/// Exact outside and for single primitives; a lower bound inside overlaps.
double sdf_oracle(const Scene& scene, const Vec3& x);

/// Index of the primitive with minimal |sdf| at x (surface owner).
/// Throws SeamAmbiguity when the two closest surfaces are within `tol`.
int owning_primitive(const Scene& scene, const Vec3& x, double tol = 1e-6);

/// Unit normal of the owning primitive's surface near x.
Vec3 normal_oracle(const Scene& scene, const Vec3& x);

/// Class of the primitive with minimal signed distance; ties take the
/// lowest primitive index.
int semantic_oracle(const Scene& scene, const Vec3& x);

// ------------------------------------------------------------- scans

struct RayHit {
    bool hit = false;
    double t = 0.0;
    Vec3 position;
};

/// First surface intersection along origin+t*dir via sphere tracing against
/// the union SDF, refined by bisection to |sdf| <= tol. Misses when the ray
/// leaves `bounds` first.
RayHit trace_ray(const Scene& scene, const Vec3& origin, const Vec3& dir, double tol = 1e-6);

/// Simulated lidar: per sensor pose, `rays_per_scan` uniformly random
/// directions; each hit becomes a PointSample with oracle normal and class.
/// Rays whose surface point sits on a union seam are dropped along with the
/// misses. Deterministic: ray (pose_idx, ray_idx) draws from its own
/// sub-seeded stream.
std::vector<PointSample> sample_surface_scans(const Scene& scene, const std::vector<Vec3>& sensor_poses,
                                              int rays_per_scan, std::uint64_t rng_seed);

// ------------------------------------------------------------- grids

/// Labels a voxel Occupied iff any of its probe_factor^3 sub-cell-center
/// probes has negative oracle SDF; the class comes from the deepest probe.
OccupancyGrid voxelize_occupancy(const Scene& scene, const GridSpec& spec, int probe_factor);

/// Relabels unseen voxels Unobserved: free voxels whose center no sensor
/// reaches unobstructed, and occupied voxels containing no surface sample.
void visibility_mask(OccupancyGrid& grid, const Scene& scene, const std::vector<Vec3>& sensor_poses,
                     const std::vector<PointSample>& samples);

}  // namespace sdfit
