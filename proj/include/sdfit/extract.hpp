#pragma once

#include <array>
#include <functional>
#include <vector>

#include "sdfit/field.hpp"
#include "sdfit/scene.hpp"
#include "sdfit/supervision.hpp"

// Inference-side outputs of a fitted field: marching-cubes semantic meshes,
// per-voxel occupancy prediction from the joint logits, depth rendering of a
// mesh through a pinhole camera, and momentum fusion of per-frame fields
// into a persistent world grid.

namespace sdfit {

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<int> vertex_class;  // one class per vertex
};

using ScalarField = std::function<double(const Vec3&)>;

/// Marching cubes over field values at the nodes of `spec`, with linear
/// edge interpolation to the iso level and shared vertices per grid edge.
/// Triangles wind so right-hand normals point toward increasing field values.
/// Throws EmptyMesh when no cell crosses the level.
Mesh marching_cubes(const ScalarField& field, const GridSpec& spec, double iso);

/// marching_cubes over phi plus a semantic argmax query per vertex.
Mesh extract_mesh(const FieldParams& params, const GridSpec& spec, double iso);

/// Sum of signed tetrahedron volumes; positive for outward-wound closed meshes.
double mesh_signed_volume(const Mesh& mesh);

/// Drops triangles with area <= `min_area` (and unused vertices stay).
void drop_degenerate_triangles(Mesh& mesh, double min_area = 1e-12);

/// Per voxel: min phi over subgrid probes becomes the free logit, semantic
/// logits are read at the argmin probe, and the argmax over the s+1 joint
/// logits labels the voxel (last index = free).
OccupancyGrid predict_occupancy(const FieldParams& params, const GridSpec& spec, const LossWeights& w,
                                int subgrid_factor);

/// Joint argmax of Eq.-style concatenated logits; returns s for free.
int occupancy_argmax(std::span<const double> sem_logits, double l_free);

// ------------------------------------------------------------- depth

/// Camera-to-world pose; the optical axis is local +z, image x right and
/// image y down. Rays pass through pixel centers.
struct PinholeCamera {
    int width = 0, height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    RigidTransform pose;

    void validate() const;
};

/// Depth along the optical axis (z-depth), 0 marks a miss.
struct DepthMap {
    PinholeCamera camera;
    std::vector<double> depth;  // row-major, y * width + x

    void init(const PinholeCamera& cam) {
        camera = cam;
        depth.assign(std::size_t(cam.width) * cam.height, 0.0);
    }
};

/// Nearest ray-triangle intersection per pixel.
DepthMap render_depth(const Mesh& mesh, const PinholeCamera& camera);

/// Ground-truth depth by sphere tracing the scene oracle.
DepthMap oracle_depth_map(const Scene& scene, const PinholeCamera& camera);

// ------------------------------------------------------------- fusion

struct FusedScene {
    GridSpec spec;  // world grid, dims count cells
    int num_classes = 1;
    std::vector<double> sdf;       // per cell
    std::vector<double> logits;    // per cell, num_classes entries
    std::vector<std::uint32_t> counts;

    void init(const GridSpec& s, int nc);
};

/// Queries the frame field at world cell centers inside the frame's grid
/// box (mapped through frame_to_world). First observation writes through;
/// overlaps blend v <- m*v_old + (1-m)*v_new for SDF and logits alike.
void fuse_frame(FusedScene& history, const FieldParams& frame, const RigidTransform& frame_to_world,
                double momentum);

/// Classifies each observed cell from its fused SDF/logits (free logit from
/// the cell SDF); unobserved cells stay Unobserved.
OccupancyGrid fused_occupancy(const FusedScene& fused, const LossWeights& w);

}  // namespace sdfit
