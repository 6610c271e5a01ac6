#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "sdfit/config.hpp"
#include "sdfit/io.hpp"
#include "test_util.hpp"

using namespace sdfit;
using testutil::tiny_shape;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("point cloud ply round-trips byte for byte") {
    Rng rng(1);
    std::vector<PointSample> samples;
    for (int i = 0; i < 40; ++i) {
        PointSample s;
        s.position = rng.point_in({{-2, -2, -2}, {2, 2, 2}});
        s.normal = rng.unit_vector();
        s.class_id = int(rng.below(4));
        samples.push_back(s);
    }
    TempFile f("roundtrip_scan.ply"), f2("roundtrip_scan2.ply");
    write_point_cloud_ply(f.path, samples);
    auto loaded = read_point_cloud_ply(f.path);
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(loaded[i].position == samples[i].position);
        CHECK(loaded[i].normal == samples[i].normal);
        CHECK(loaded[i].class_id == samples[i].class_id);
    }
    write_point_cloud_ply(f2.path, loaded);
    CHECK(slurp_file(f.path) == slurp_file(f2.path));
}

TEST_CASE("mesh ply round-trips byte for byte") {
    Mesh mesh;
    Rng rng(2);
    for (int i = 0; i < 17; ++i) {
        mesh.vertices.push_back(rng.point_in({{-1, -1, -1}, {1, 1, 1}}));
        mesh.vertex_class.push_back(int(rng.below(3)));
    }
    for (int i = 0; i + 2 < 17; i += 3) mesh.triangles.push_back({i, i + 1, i + 2});
    TempFile f("roundtrip_mesh.ply"), f2("roundtrip_mesh2.ply");
    write_mesh_ply(f.path, mesh);
    Mesh loaded = read_mesh_ply(f.path);
    CHECK(loaded.vertices.size() == mesh.vertices.size());
    CHECK(loaded.triangles == mesh.triangles);
    CHECK(loaded.vertex_class == mesh.vertex_class);
    write_mesh_ply(f2.path, loaded);
    CHECK(slurp_file(f.path) == slurp_file(f2.path));
}

TEST_CASE("grid file uses the documented byte encoding and round-trips") {
    GridSpec spec;
    spec.origin = {0.5, -1.5, 2.0};
    spec.voxel_size = 0.4;
    spec.dims = {3, 2, 2};
    OccupancyGrid grid;
    grid.init(spec, 4);
    grid.labels[0] = VoxelLabel::Occupied;
    grid.classes[0] = 0;
    grid.labels[1] = VoxelLabel::Occupied;
    grid.classes[1] = 3;
    grid.labels[2] = VoxelLabel::Unobserved;
    // remaining voxels stay free

    TempFile f("roundtrip_grid.grid"), f2("roundtrip_grid2.grid");
    write_occupancy_grid(f.path, grid, {"a", "b", "c", "d"});
    std::string raw = slurp_file(f.path);
    std::size_t header_end = raw.find('\n');
    REQUIRE(header_end != std::string::npos);
    const char* payload = raw.data() + header_end + 1;
    REQUIRE(raw.size() - header_end - 1 == std::size_t(spec.cell_count()));
    CHECK(std::uint8_t(payload[0]) == 1);    // class 0 -> byte 1
    CHECK(std::uint8_t(payload[1]) == 4);    // class 3 -> byte 4
    CHECK(std::uint8_t(payload[2]) == 255);  // unobserved
    CHECK(std::uint8_t(payload[3]) == 0);    // free

    GridFileData loaded = read_occupancy_grid(f.path);
    CHECK(loaded.grid.labels == grid.labels);
    CHECK(loaded.grid.classes == grid.classes);
    CHECK(loaded.class_names == std::vector<std::string>{"a", "b", "c", "d"});
    CHECK(loaded.grid.spec == spec);
    write_occupancy_grid(f2.path, loaded.grid, loaded.class_names);
    CHECK(slurp_file(f.path) == slurp_file(f2.path));
}

TEST_CASE("fused grid file round-trips") {
    GridSpec spec;
    spec.origin = {0, 0, 0};
    spec.voxel_size = 0.5;
    spec.dims = {2, 2, 2};
    FusedScene fused;
    fused.init(spec, 2);
    Rng rng(3);
    for (auto& v : fused.sdf) v = rng.uniform(-1, 1);
    for (auto& v : fused.logits) v = rng.uniform(-2, 2);
    for (std::size_t i = 0; i < fused.counts.size(); ++i) fused.counts[i] = std::uint32_t(i % 3);
    LossWeights w;
    OccupancyGrid labels = fused_occupancy(fused, w);

    TempFile f("roundtrip_fused.grid"), f2("roundtrip_fused2.grid");
    write_fused_scene(f.path, fused, labels, {"x", "y"});
    FusedFileData loaded = read_fused_scene(f.path);
    CHECK(loaded.fused.counts == fused.counts);
    CHECK(loaded.labels.labels == labels.labels);
    for (std::size_t i = 0; i < fused.sdf.size(); ++i)
        CHECK(loaded.fused.sdf[i] == doctest::Approx(fused.sdf[i]).epsilon(1e-6));
    write_fused_scene(f2.path, loaded.fused, loaded.labels, loaded.class_names);
    CHECK(slurp_file(f.path) == slurp_file(f2.path));
}

TEST_CASE("checkpoints restore parameters and optimizer state") {
    FieldShape shape = tiny_shape();
    FieldParams p = FieldParams::init(shape, 7);
    TempFile f("roundtrip_plain.ckpt");
    write_checkpoint(f.path, p);
    CheckpointData plain = read_checkpoint(f.path);
    CHECK_FALSE(plain.has_optimizer);
    CHECK(plain.params.values == p.values);
    CHECK(plain.params.shape == shape);
    CHECK_THROWS_AS((void)plain.to_train_state(), ConfigError);

    TrainState state;
    state.params = p;
    state.moment1.assign(p.values.size(), 0.25);
    state.moment2.assign(p.values.size(), 0.5);
    state.step = 42;
    state.sampler_rng = Rng(99);
    state.sampler_rng.next_u64();
    TempFile g("roundtrip_opt.ckpt"), g2("roundtrip_opt2.ckpt");
    write_checkpoint(g.path, state);
    CheckpointData full = read_checkpoint(g.path);
    REQUIRE(full.has_optimizer);
    TrainState restored = full.to_train_state();
    CHECK(restored.params.values == state.params.values);
    CHECK(restored.moment1 == state.moment1);
    CHECK(restored.moment2 == state.moment2);
    CHECK(restored.step == 42);
    CHECK(restored.sampler_rng.state() == state.sampler_rng.state());
    write_checkpoint(g2.path, restored);
    CHECK(slurp_file(g.path) == slurp_file(g2.path));
}

TEST_CASE("depth pgm is 16-bit millimeters with a camera sidecar") {
    DepthMap map;
    PinholeCamera cam;
    cam.width = 3;
    cam.height = 2;
    cam.fx = cam.fy = 12.0;
    cam.cx = 1.5;
    cam.cy = 1.0;
    cam.pose.translation = {1, 2, 3};
    map.init(cam);
    map.depth = {0.0, 1.234, 0.5, 65.0, 0.0001, 2.5};

    TempFile f("roundtrip_depth.pgm"), fs("roundtrip_depth.pgm.camera.json");
    TempFile f2("roundtrip_depth2.pgm"), fs2("roundtrip_depth2.pgm.camera.json");
    write_depth_pgm(f.path, map);
    std::string raw = slurp_file(f.path);
    CHECK(raw.rfind("P5\n3 2\n65535\n", 0) == 0);
    DepthMap loaded = read_depth_pgm(f.path);
    CHECK(loaded.depth[0] == 0.0);                              // miss stays miss
    CHECK(loaded.depth[1] == doctest::Approx(1.234));           // mm quantization
    CHECK(loaded.depth[4] == doctest::Approx(0.001));           // sub-mm hit clamps up, not to miss
    CHECK(loaded.camera.pose.translation == cam.pose.translation);
    write_depth_pgm(f2.path, loaded);
    CHECK(slurp_file(f.path) == slurp_file(f2.path));
    CHECK(slurp_file(fs.path) == slurp_file(fs2.path));
}

TEST_CASE("eval report json round-trips") {
    EvalReport r;
    r.per_class_iou = {0.5, std::numeric_limits<double>::quiet_NaN(), 1.0};
    r.miou = 0.75;
    r.geometric_iou = 0.9;
    r.eikonal_residual = 0.05;
    r.has_depth = true;
    r.abs_rel = 0.1;
    r.sq_rel = 0.02;
    r.rmse = 0.3;
    r.delta_1_25 = 0.97;
    r.has_chamfer = true;
    r.chamfer = 0.04;

    TempFile f("roundtrip_report.json"), f2("roundtrip_report2.json"), c("roundtrip_report.csv");
    write_eval_report_json(f.path, r);
    EvalReport loaded = read_eval_report_json(f.path);
    CHECK(loaded.miou == r.miou);
    CHECK(loaded.chamfer == r.chamfer);
    CHECK(std::isnan(loaded.per_class_iou[1]));
    write_eval_report_json(f2.path, loaded);
    CHECK(slurp_file(f.path) == slurp_file(f2.path));

    write_eval_report_csv(c.path, r);
    std::string csv = slurp_file(c.path);
    CHECK(csv.find("miou,geometric_iou,chamfer") == 0);
    CHECK(csv.find("0.75") != std::string::npos);
}

TEST_CASE("experiment config echo is fully materialized and stable") {
    nlohmann::json j = {
        {"scene",
         {{"bounds", {{"lo", {-4.0, -4.0, 0.0}}, {"hi", {4.0, 4.0, 4.0}}}},
          {"num_classes", 3},
          {"class_names", {"ball_a", "ball_b", "ground"}},
          {"primitives",
           {{{"kind", "sphere"}, {"center", {-1.2, -0.8, 1.1}}, {"radius", 1.0}, {"class", 0}},
            {{"kind", "sphere"}, {"center", {1.5, 1.2, 0.9}}, {"radius", 0.8}, {"class", 1}},
            {{"kind", "half_space"}, {"center", {0.0, 0.0, 0.1}}, {"class", 2}}}}}},
        {"sensors", {{"poses", {{-3.0, 2.8, 1.8}, {3.2, -2.6, 2.0}}}, {"rays_per_scan", 512}}},
        {"occupancy",
         {{"origin", {-4.0, -4.0, 0.0}}, {"voxel_size", 0.4}, {"dims", {20, 20, 10}}, {"probe_factor", 2}}},
        {"field",
         {{"origin", {-4.0, -4.0, 0.0}}, {"voxel_size", 0.5}, {"dims", {17, 17, 9}}, {"channels", 4}}},
        {"train", {{"steps", 100}}},
        {"out_dir", "out_test"},
        {"seed", 3}};
    ExperimentConfig cfg = parse_experiment_config(j);
    CHECK(cfg.train.steps == 100);
    CHECK(cfg.train.seed == 3);
    CHECK(cfg.scene.primitives.size() == 3);
    CHECK(cfg.rays_per_scan == 512);

    // Defaults materialize into the echo, and the echo round-trips.
    nlohmann::json echo = experiment_config_json(cfg);
    CHECK(echo.at("train").at("learning_rate").get<double>() == 1e-4);
    CHECK(echo.at("train").at("weights").at("alpha").get<double>() == 100.0);
    CHECK(echo.at("train").at("weights").at("gamma").at(2).get<double>() == 30.0);
    CHECK(echo.at("extract").at("fusion").at("momentum").get<double>() == 0.9);
    ExperimentConfig cfg2 = parse_experiment_config(echo);
    CHECK(experiment_config_json(cfg2).dump() == echo.dump());
}

TEST_CASE("config validation catches a feature grid that does not cover the voxels") {
    nlohmann::json j = {
        {"scene",
         {{"bounds", {{"lo", {-4.0, -4.0, 0.0}}, {"hi", {4.0, 4.0, 4.0}}}},
          {"num_classes", 1},
          {"primitives", {{{"kind", "sphere"}, {"center", {0.0, 0.0, 1.0}}, {"radius", 1.0}, {"class", 0}}}}}},
        {"sensors", {{"poses", {{-3.0, 2.8, 1.8}}}}},
        {"occupancy", {{"origin", {-4.0, -4.0, 0.0}}, {"voxel_size", 0.4}, {"dims", {20, 20, 10}}}},
        {"field", {{"origin", {-4.0, -4.0, 0.0}}, {"voxel_size", 0.5}, {"dims", {9, 17, 9}}}}};
    CHECK_THROWS_AS((void)parse_experiment_config(j), ConfigError);
}
