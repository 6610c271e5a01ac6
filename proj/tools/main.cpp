#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sdfit/config.hpp"
#include "sdfit/io.hpp"
#include "sdfit/metrics.hpp"

namespace fs = std::filesystem;
using namespace sdfit;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool has_seed = false;
};

ExperimentConfig load(const CommonArgs& args) {
    ExperimentConfig cfg = load_experiment_config(args.config_path);
    if (args.has_seed) {
        cfg.seed = args.seed_override;
        cfg.train.seed = args.seed_override;
    }
    if (!args.out_override.empty()) cfg.out_dir = args.out_override;
    return cfg;
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
    fs::create_directories(cfg.out_dir);
    return (fs::path(cfg.out_dir) / name).string();
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")->required();
    cmd->add_option("--out", args.out_override, "output directory override");
    cmd->add_option("--seed", args.seed_override, "seed override")->each([&](const std::string&) {
        args.has_seed = true;
    });
}

void write_config_echo(const ExperimentConfig& cfg) {
    write_file(out_path(cfg, "config_echo.json"), experiment_config_json(cfg).dump(2) + "\n");
}

void cmd_generate(const ExperimentConfig& cfg) {
    write_config_echo(cfg);
    auto scans = sample_surface_scans(cfg.scene, cfg.sensor_poses, cfg.rays_per_scan, cfg.seed);
    write_point_cloud_ply(out_path(cfg, "scans.ply"), scans);
    OccupancyGrid grid = voxelize_occupancy(cfg.scene, cfg.occupancy_grid, cfg.probe_factor);
    visibility_mask(grid, cfg.scene, cfg.sensor_poses, scans);
    write_occupancy_grid(out_path(cfg, "occupancy_gt.grid"), grid, cfg.class_names);
    std::cout << "generated " << scans.size() << " surface samples, " << grid.count(VoxelLabel::Occupied)
              << " occupied / " << grid.count(VoxelLabel::Free) << " free / "
              << grid.count(VoxelLabel::Unobserved) << " unobserved voxels\n";
}

std::string checkpoint_name(long step, bool is_final) {
    if (is_final) return "checkpoint_final.ckpt";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "checkpoint_%06ld.ckpt", step);
    return buf;
}

void cmd_train(const ExperimentConfig& cfg, const std::string& resume_path) {
    write_config_echo(cfg);
    auto scans = read_point_cloud_ply(out_path(cfg, "scans.ply"));
    GridFileData gt = read_occupancy_grid(out_path(cfg, "occupancy_gt.grid"));

    TrainState state = resume_path.empty() ? TrainState::fresh(cfg.field_shape(), cfg.train)
                                           : read_checkpoint(resume_path).to_train_state();
    std::ofstream log(out_path(cfg, "train_log.csv"),
                      resume_path.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw ConfigError("cannot write the training log");

    auto sink = [&](const TrainState& s, bool is_final) {
        write_checkpoint(out_path(cfg, checkpoint_name(s.step, is_final)), s);
    };
    train_steps(state, scans, gt.grid, cfg.train, &log, sink,
                cfg.train.mode == SupervisionMode::Oracle ? &cfg.scene : nullptr);
    std::cout << "trained " << state.step << " steps (" << to_string(cfg.train.mode) << ")\n";
}

FieldParams load_params(const ExperimentConfig& cfg, const std::string& checkpoint) {
    std::string path = checkpoint.empty() ? out_path(cfg, "checkpoint_final.ckpt") : checkpoint;
    return read_checkpoint(path).params;
}

void cmd_extract_mesh(const ExperimentConfig& cfg, const std::string& checkpoint, double iso_override,
                      bool has_iso) {
    FieldParams params = load_params(cfg, checkpoint);
    Mesh mesh = extract_mesh(params, cfg.mesh_grid, has_iso ? iso_override : cfg.iso);
    write_mesh_ply(out_path(cfg, "mesh.ply"), mesh);
    std::cout << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
              << " triangles\n";
}

void cmd_extract_occ(const ExperimentConfig& cfg, const std::string& checkpoint) {
    FieldParams params = load_params(cfg, checkpoint);
    OccupancyGrid pred = predict_occupancy(params, cfg.occupancy_grid, cfg.train.weights, cfg.occ_subgrid);
    write_occupancy_grid(out_path(cfg, "pred_occupancy.grid"), pred, cfg.class_names);
    std::cout << "predicted occupancy: " << pred.count(VoxelLabel::Occupied) << " occupied voxels\n";
}

void cmd_extract_fuse(const ExperimentConfig& cfg, const std::string& checkpoint) {
    if (cfg.fusion_frames.empty()) throw ConfigError("config lists no fusion frames");
    FusedScene fused;
    fused.init(cfg.occupancy_grid, cfg.scene.num_classes);
    for (const auto& frame : cfg.fusion_frames) {
        FieldParams params = frame.checkpoint_path.empty() ? load_params(cfg, checkpoint)
                                                           : read_checkpoint(frame.checkpoint_path).params;
        fuse_frame(fused, params, frame.pose, cfg.fusion_momentum);
    }
    OccupancyGrid labels = fused_occupancy(fused, cfg.train.weights);
    write_fused_scene(out_path(cfg, "fused.grid"), fused, labels, cfg.class_names);
    std::cout << "fused " << cfg.fusion_frames.size() << " frames\n";
}

EvalReport evaluate(const ExperimentConfig& cfg, const FieldParams& params, const OccupancyGrid& gt,
                    const OccupancyGrid& pred, const Mesh& mesh) {
    EvalReport report;
    MiouResult mi = miou(pred, gt);
    report.per_class_iou = mi.per_class;
    report.miou = mi.miou;
    report.geometric_iou = mi.geometric_iou;
    report.chamfer = chamfer(mesh, cfg.scene, cfg.chamfer_samples, cfg.seed);
    report.has_chamfer = true;

    // Eikonal diagnostic over the observed region (the space the
    // supervision actually constrains).
    Rng rng(cfg.seed, 0xE1C0);
    std::vector<std::int64_t> observed;
    for (std::int64_t v = 0; v < std::int64_t(gt.labels.size()); ++v)
        if (gt.labels[std::size_t(v)] != VoxelLabel::Unobserved) observed.push_back(v);
    std::vector<Vec3> interior;
    for (int i = 0; i < 2048 && !observed.empty(); ++i) {
        std::int64_t v = observed[std::size_t(rng.below(observed.size()))];
        auto ijk = gt.spec.unflatten(v);
        Vec3 base = gt.spec.origin + Vec3{ijk[0] * gt.spec.voxel_size, ijk[1] * gt.spec.voxel_size,
                                          ijk[2] * gt.spec.voxel_size};
        Vec3 p = base + Vec3{rng.uniform() * gt.spec.voxel_size, rng.uniform() * gt.spec.voxel_size,
                             rng.uniform() * gt.spec.voxel_size};
        interior.push_back(jitter_into_cell(params.shape.grid, p, 1e-4));
    }
    report.eikonal_residual = eikonal_residual(params, interior);

    if (!cfg.cameras.empty()) {
        double abs_rel = 0, sq_rel = 0, rmse = 0, delta = 0;
        int n = 0;
        for (std::size_t c = 0; c < cfg.cameras.size(); ++c) {
            DepthMap pred_depth = render_depth(mesh, cfg.cameras[c]);
            DepthMap gt_depth = oracle_depth_map(cfg.scene, cfg.cameras[c]);
            write_depth_pgm(out_path(cfg, "depth_cam" + std::to_string(c) + ".pgm"), pred_depth);
            write_depth_pgm(out_path(cfg, "depth_gt_cam" + std::to_string(c) + ".pgm"), gt_depth);
            DepthMetricsResult dm = depth_metrics(pred_depth, gt_depth);
            abs_rel += dm.abs_rel;
            sq_rel += dm.sq_rel;
            rmse += dm.rmse;
            delta += dm.delta_1_25;
            ++n;
        }
        report.abs_rel = abs_rel / n;
        report.sq_rel = sq_rel / n;
        report.rmse = rmse / n;
        report.delta_1_25 = delta / n;
        report.has_depth = true;
    }
    return report;
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint) {
    GridFileData gt = read_occupancy_grid(out_path(cfg, "occupancy_gt.grid"));
    GridFileData pred = read_occupancy_grid(out_path(cfg, "pred_occupancy.grid"));
    Mesh mesh = read_mesh_ply(out_path(cfg, "mesh.ply"));
    FieldParams params = load_params(cfg, checkpoint);
    EvalReport report = evaluate(cfg, params, gt.grid, pred.grid, mesh);
    write_eval_report_json(out_path(cfg, "eval_report.json"), report);
    write_eval_report_csv(out_path(cfg, "eval_report.csv"), report);
    std::cout << "miou " << report.miou << ", geometric iou " << report.geometric_iou << ", chamfer "
              << report.chamfer << ", eikonal " << report.eikonal_residual << "\n";
}

struct CompareRow {
    std::string label;
    SupervisionMode mode;
    bool joint;
};

void cmd_compare(const ExperimentConfig& base) {
    // Table-style ablation: one row per supervision paradigm, shared scene.
    const std::vector<CompareRow> rows = {{"siren", SupervisionMode::Siren, false},
                                          {"lode", SupervisionMode::Lode, false},
                                          {"sandwich", SupervisionMode::Sandwich, false},
                                          {"sandwich_joint", SupervisionMode::Sandwich, true}};
    auto scans = sample_surface_scans(base.scene, base.sensor_poses, base.rays_per_scan, base.seed);
    OccupancyGrid grid = voxelize_occupancy(base.scene, base.occupancy_grid, base.probe_factor);
    visibility_mask(grid, base.scene, base.sensor_poses, scans);

    std::ostringstream csv;
    csv << "model,mode,joint,chamfer,miou,geometric_iou,eikonal_residual\n";
    for (const auto& row : rows) {
        ExperimentConfig cfg = base;
        cfg.train.mode = row.mode;
        if (!row.joint) cfg.train.weights.gamma[7] = 0.0;
        TrainState state = train(cfg.field_shape(), scans, grid, cfg.train, nullptr, {},
                                 cfg.train.mode == SupervisionMode::Oracle ? &cfg.scene : nullptr);
        Mesh mesh = extract_mesh(state.params, cfg.mesh_grid, cfg.iso);
        OccupancyGrid pred =
            predict_occupancy(state.params, cfg.occupancy_grid, cfg.train.weights, cfg.occ_subgrid);
        EvalReport report = evaluate(cfg, state.params, grid, pred, mesh);
        csv << row.label << ',' << to_string(row.mode) << ',' << (row.joint ? 1 : 0) << ','
            << format_double(report.chamfer) << ',' << format_double(report.miou) << ','
            << format_double(report.geometric_iou) << ',' << format_double(report.eikonal_residual) << '\n';
        std::cout << row.label << ": chamfer " << report.chamfer << ", miou " << report.miou << "\n";
    }
    write_file(out_path(base, "compare.csv"), csv.str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"implicit semantic SDF scene fitting"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, extract_args, eval_args, compare_args;
    std::string resume_path, checkpoint_path, train_mode;
    double iso_override = 0.0;
    bool has_iso = false;

    CLI::App* generate = app.add_subcommand("generate", "write scans and occupancy ground truth");
    add_common(generate, gen_args);

    CLI::App* train_cmd = app.add_subcommand("train", "fit the field to the generated artifacts");
    add_common(train_cmd, train_args);
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
    train_cmd->add_option("--mode", train_mode, "supervision mode override (sandwich|siren|lode|oracle)");

    CLI::App* extract = app.add_subcommand("extract", "inference outputs from a checkpoint");
    extract->require_subcommand(1);
    CLI::App* mesh_cmd = extract->add_subcommand("mesh", "marching-cubes semantic mesh");
    CLI::App* occ_cmd = extract->add_subcommand("occ", "occupancy prediction");
    CLI::App* fuse_cmd = extract->add_subcommand("fuse", "momentum-fused scene grid");
    for (CLI::App* sub : {mesh_cmd, occ_cmd, fuse_cmd}) {
        sub->add_option("--checkpoint", checkpoint_path, "checkpoint path (default: out/checkpoint_final.ckpt)");
    }
    add_common(mesh_cmd, extract_args);
    add_common(occ_cmd, extract_args);
    add_common(fuse_cmd, extract_args);
    mesh_cmd->add_option("--iso", iso_override, "iso level override")->each([&](const std::string&) {
        has_iso = true;
    });

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate artifacts against ground truth");
    add_common(eval_cmd, eval_args);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint path");

    CLI::App* compare = app.add_subcommand("compare", "run all supervision paradigms and tabulate");
    add_common(compare, compare_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) cmd_generate(load(gen_args));
        if (train_cmd->parsed()) {
            ExperimentConfig cfg = load(train_args);
            if (!train_mode.empty()) cfg.train.mode = supervision_mode_from(train_mode);
            cmd_train(cfg, resume_path);
        }
        if (extract->parsed()) {
            ExperimentConfig cfg = load(extract_args);
            if (mesh_cmd->parsed()) cmd_extract_mesh(cfg, checkpoint_path, iso_override, has_iso);
            if (occ_cmd->parsed()) cmd_extract_occ(cfg, checkpoint_path);
            if (fuse_cmd->parsed()) cmd_extract_fuse(cfg, checkpoint_path);
        }
        if (eval_cmd->parsed()) cmd_eval(load(eval_args), checkpoint_path);
        if (compare->parsed()) cmd_compare(load(compare_args));
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
