#pragma once

#include <vector>

#include "sdfit/extract.hpp"
#include "sdfit/scene.hpp"

// Evaluation: per-class voxel IoU and mIoU, geometric (occupied-vs-free)
// IoU, depth-map error metrics, symmetric Chamfer distance against the
// analytic surface, and the Eikonal residual diagnostic.

namespace sdfit {

struct MiouResult {
    std::vector<double> per_class;  // NaN for classes absent from pred and gt
    double miou = 0.0;              // mean over present classes
    double geometric_iou = 0.0;     // binary occupied-vs-free
};

/// Voxel-label agreement over observed ground-truth voxels. Unobserved GT
/// voxels are excluded from every count; unobserved prediction voxels count
/// as free. Classes absent from both sides are excluded from the mean.
MiouResult miou(const OccupancyGrid& pred, const OccupancyGrid& gt);

struct DepthMetricsResult {
    double abs_rel = 0.0;
    double sq_rel = 0.0;
    double rmse = 0.0;
    double delta_1_25 = 0.0;
};

/// Evaluated on pixels where both maps hit. Throws NoValidPixels.
DepthMetricsResult depth_metrics(const DepthMap& pred, const DepthMap& gt);

/// Symmetric Chamfer distance (meters): mean |oracle sdf| over points
/// sampled uniformly on the mesh, plus mean point-to-mesh distance over
/// points sampled uniformly on the analytic union surface inside the scene
/// bounds. Deterministic per seed.
double chamfer(const Mesh& mesh, const Scene& scene, int n_samples, std::uint64_t seed = 7);

/// mean | ||grad phi|| - 1 | over the given positions.
double eikonal_residual(const FieldParams& params, const std::vector<Vec3>& positions);

/// Same residual through an injectable gradient field.
using GradientField = std::function<Vec3(const Vec3&)>;
double eikonal_residual(const GradientField& gradient, const std::vector<Vec3>& positions);

/// Squared distance from a point to a triangle.
double point_triangle_dist2(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Distance from a point to the nearest mesh triangle.
double point_mesh_distance(const Vec3& p, const Mesh& mesh);

/// Uniform-by-area surface samples of a mesh.
std::vector<Vec3> sample_mesh_surface(const Mesh& mesh, int n_samples, Rng& rng);

/// Uniform samples of the analytic union surface inside the scene bounds.
std::vector<Vec3> sample_scene_surface(const Scene& scene, int n_samples, Rng& rng);

struct EvalReport {
    std::vector<double> per_class_iou;
    double miou = 0.0;
    double geometric_iou = 0.0;
    double abs_rel = 0.0, sq_rel = 0.0, rmse = 0.0, delta_1_25 = 0.0;
    bool has_depth = false;
    double chamfer = 0.0;
    bool has_chamfer = false;
    double eikonal_residual = 0.0;
};

}  // namespace sdfit
