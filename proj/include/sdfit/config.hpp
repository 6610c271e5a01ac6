#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sdfit/extract.hpp"
#include "sdfit/train.hpp"

// One JSON config file drives a whole experiment. Parsing materializes every
// default, and the echoed config (experiment_config_json) round-trips, so a
// run can always be reproduced from its echo alone.

namespace sdfit {

struct FusionFrame {
    RigidTransform pose;            // frame-local to world
    std::string checkpoint_path;    // empty: reuse the trained checkpoint
};

struct ExperimentConfig {
    Scene scene;
    std::vector<std::string> class_names;

    std::vector<Vec3> sensor_poses;
    int rays_per_scan = 4096;

    GridSpec occupancy_grid;
    int probe_factor = 2;

    GridSpec field_grid;  // node grid of the learnable features
    int channels = 4;
    int pe_freqs = 2;
    int hidden = 24;
    double omega0 = 30.0;
    double phi_scale = 1.0;
    double grid_init_std = 0.01;

    TrainConfig train;

    GridSpec mesh_grid;
    double iso = 0.0;
    int occ_subgrid = 2;
    std::vector<PinholeCamera> cameras;
    double fusion_momentum = 0.9;
    std::vector<FusionFrame> fusion_frames;

    int chamfer_samples = 8192;
    std::string out_dir = "out";
    std::uint64_t seed = 1;

    FieldShape field_shape() const;
    void validate() const;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);
nlohmann::json experiment_config_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::string& path);

}  // namespace sdfit
