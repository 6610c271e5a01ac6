#pragma once

#include <string>
#include <vector>

#include "sdfit/extract.hpp"
#include "sdfit/metrics.hpp"
#include "sdfit/train.hpp"

// On-disk formats. Everything round-trips byte-identically (write -> read ->
// write) and floating point text uses shortest-round-trip formatting.
//
//   scans     ASCII PLY with x,y,z,nx,ny,nz,class vertex properties
//   mesh      ASCII PLY with x,y,z,class vertices and triangle faces
//   grid      one-line JSON header + little-endian binary payloads
//             (labels: 1 byte per voxel, 0 = free, 255 = unobserved,
//              otherwise class_id + 1; fused grids append sdf/logits as
//              float32 and counts as uint32)
//   ckpt      one-line JSON header + float64 parameters, optionally followed
//             by Adam moments, the sampler RNG state, and the step counter
//   depth     16-bit big-endian PGM in millimeters (0 = miss) plus a JSON
//             camera sidecar at <path>.camera.json

namespace sdfit {

void write_point_cloud_ply(const std::string& path, const std::vector<PointSample>& samples);
std::vector<PointSample> read_point_cloud_ply(const std::string& path);

void write_mesh_ply(const std::string& path, const Mesh& mesh);
Mesh read_mesh_ply(const std::string& path);

struct GridFileData {
    OccupancyGrid grid;
    std::vector<std::string> class_names;
};

void write_occupancy_grid(const std::string& path, const OccupancyGrid& grid,
                          const std::vector<std::string>& class_names = {});
GridFileData read_occupancy_grid(const std::string& path);

struct FusedFileData {
    FusedScene fused;
    OccupancyGrid labels;
    std::vector<std::string> class_names;
};

void write_fused_scene(const std::string& path, const FusedScene& fused, const OccupancyGrid& labels,
                       const std::vector<std::string>& class_names = {});
FusedFileData read_fused_scene(const std::string& path);

struct CheckpointData {
    FieldParams params;
    bool has_optimizer = false;
    std::vector<double> moment1, moment2;
    long step = 0;
    std::array<std::uint64_t, 4> rng_state{};

    TrainState to_train_state() const;
};

void write_checkpoint(const std::string& path, const FieldParams& params);
void write_checkpoint(const std::string& path, const TrainState& state);
CheckpointData read_checkpoint(const std::string& path);

void write_depth_pgm(const std::string& path, const DepthMap& map);
DepthMap read_depth_pgm(const std::string& path);

void write_eval_report_json(const std::string& path, const EvalReport& report);
void write_eval_report_csv(const std::string& path, const EvalReport& report);
EvalReport read_eval_report_json(const std::string& path);

std::string slurp_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace sdfit
