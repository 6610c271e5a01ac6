#include "sdfit/config.hpp"

#include <fstream>

#include "sdfit/io.hpp"

namespace sdfit {

using nlohmann::json;

namespace {

Vec3 vec3_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-element array");
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json vec3_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Mat3 rotation_from(const json& j) {
    if (!j.is_array() || j.size() != 4) throw ConfigError("rotation must be a quaternion [w,x,y,z]");
    return quat_to_mat(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
                       j.at(3).get<double>());
}

json mat3_json(const Mat3& m) { return json(m.m); }

Mat3 mat3_from(const json& j) {
    Mat3 m;
    for (int i = 0; i < 9; ++i) m.m[std::size_t(i)] = j.at(std::size_t(i)).get<double>();
    return m;
}

GridSpec grid_spec_from(const json& j) {
    GridSpec s;
    s.origin = vec3_from(j.at("origin"));
    s.voxel_size = j.at("voxel_size").get<double>();
    for (int a = 0; a < 3; ++a) s.dims[std::size_t(a)] = j.at("dims").at(std::size_t(a)).get<int>();
    s.validate();
    return s;
}

json grid_spec_json(const GridSpec& s) {
    return json{{"origin", vec3_json(s.origin)},
                {"voxel_size", s.voxel_size},
                {"dims", {s.dims[0], s.dims[1], s.dims[2]}}};
}

PrimitiveKind kind_from(const std::string& name) {
    if (name == "sphere") return PrimitiveKind::Sphere;
    if (name == "box") return PrimitiveKind::Box;
    if (name == "capsule") return PrimitiveKind::Capsule;
    if (name == "half_space") return PrimitiveKind::HalfSpace;
    throw ConfigError("unknown primitive kind: " + name);
}

const char* kind_name(PrimitiveKind k) {
    switch (k) {
        case PrimitiveKind::Sphere: return "sphere";
        case PrimitiveKind::Box: return "box";
        case PrimitiveKind::Capsule: return "capsule";
        case PrimitiveKind::HalfSpace: return "half_space";
    }
    return "?";
}

ScenePrimitive primitive_from(const json& j) {
    ScenePrimitive p;
    p.kind = kind_from(j.at("kind").get<std::string>());
    p.pose.translation = vec3_from(j.at("center"));
    if (j.contains("rotation")) p.pose.rotation = rotation_from(j.at("rotation"));
    p.class_id = j.at("class").get<int>();
    switch (p.kind) {
        case PrimitiveKind::Sphere:
            p.radius = j.at("radius").get<double>();
            break;
        case PrimitiveKind::Box:
            p.half_extents = vec3_from(j.at("half_extents"));
            break;
        case PrimitiveKind::Capsule:
            p.radius = j.at("radius").get<double>();
            p.half_length = j.at("half_length").get<double>();
            break;
        case PrimitiveKind::HalfSpace:
            break;
    }
    return p;
}

json primitive_json(const ScenePrimitive& p) {
    json j{{"kind", kind_name(p.kind)}, {"center", vec3_json(p.pose.translation)}, {"class", p.class_id}};
    // Echo the rotation as a quaternion only when it is identity-free is
    // hard to recover from the matrix; store the matrix verbatim instead.
    j["rotation_matrix"] = mat3_json(p.pose.rotation);
    switch (p.kind) {
        case PrimitiveKind::Sphere:
            j["radius"] = p.radius;
            break;
        case PrimitiveKind::Box:
            j["half_extents"] = vec3_json(p.half_extents);
            break;
        case PrimitiveKind::Capsule:
            j["radius"] = p.radius;
            j["half_length"] = p.half_length;
            break;
        case PrimitiveKind::HalfSpace:
            break;
    }
    return j;
}

PinholeCamera camera_from(const json& j) {
    PinholeCamera cam;
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.value("cx", cam.width / 2.0);
    cam.cy = j.value("cy", cam.height / 2.0);
    cam.pose.translation = vec3_from(j.at("position"));
    if (j.contains("look_at")) {
        Vec3 up = j.contains("up") ? vec3_from(j.at("up")) : Vec3{0, 0, 1};
        Vec3 f = normalized(vec3_from(j.at("look_at")) - cam.pose.translation);
        Vec3 r = normalized(cross(f, up));
        if (norm(r) < 0.5) throw ConfigError("camera look direction is parallel to up");
        Vec3 d = cross(f, r);
        Mat3 rot;
        for (int i = 0; i < 3; ++i) {
            rot(i, 0) = r[i];
            rot(i, 1) = d[i];
            rot(i, 2) = f[i];
        }
        cam.pose.rotation = rot;
    } else if (j.contains("rotation")) {
        cam.pose.rotation = rotation_from(j.at("rotation"));
    } else if (j.contains("rotation_matrix")) {
        cam.pose.rotation = mat3_from(j.at("rotation_matrix"));
    }
    cam.validate();
    return cam;
}

json camera_json(const PinholeCamera& cam) {
    return json{{"width", cam.width},   {"height", cam.height},
                {"fx", cam.fx},         {"fy", cam.fy},
                {"cx", cam.cx},         {"cy", cam.cy},
                {"position", vec3_json(cam.pose.translation)},
                {"rotation_matrix", mat3_json(cam.pose.rotation)}};
}

}  // namespace

FieldShape ExperimentConfig::field_shape() const {
    FieldShape s;
    s.grid = field_grid;
    s.channels = channels;
    s.pe_freqs = pe_freqs;
    s.hidden = hidden;
    s.num_classes = scene.num_classes;
    s.omega0 = omega0;
    s.phi_scale = phi_scale;
    s.normalization = scene.bounds;
    return s;
}

void ExperimentConfig::validate() const {
    scene.validate();
    if (scene.primitives.empty()) throw ConfigError("scene needs at least one primitive");
    if (sensor_poses.empty()) throw ConfigError("at least one sensor pose is required");
    if (rays_per_scan < 1) throw ConfigError("rays_per_scan must be >= 1");
    occupancy_grid.validate();
    if (probe_factor < 1) throw ConfigError("probe_factor must be >= 1");
    field_shape().validate();
    train.validate();
    mesh_grid.validate();
    if (occ_subgrid < 1) throw ConfigError("occ_subgrid must be >= 1");
    if (fusion_momentum < 0.0 || fusion_momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
    if (chamfer_samples < 1) throw ConfigError("chamfer_samples must be >= 1");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");

    // Training samples live in the occupancy box; the feature grid must
    // cover it so gradient evaluations never sit on a clamped boundary.
    Bounds occ_box = occupancy_grid.cell_box();
    Bounds node_box = field_grid.node_box();
    const double slack = 1e-9;
    for (int a = 0; a < 3; ++a)
        if (node_box.lo[a] > occ_box.lo[a] + slack || node_box.hi[a] < occ_box.hi[a] - slack)
            throw ConfigError("feature grid must cover the occupancy grid box");
}

ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig cfg;

    const json& sc = j.at("scene");
    cfg.scene.bounds.lo = vec3_from(sc.at("bounds").at("lo"));
    cfg.scene.bounds.hi = vec3_from(sc.at("bounds").at("hi"));
    cfg.scene.num_classes = sc.at("num_classes").get<int>();
    for (const auto& p : sc.at("primitives")) {
        ScenePrimitive prim = primitive_from(p);
        if (p.contains("rotation_matrix")) prim.pose.rotation = mat3_from(p.at("rotation_matrix"));
        cfg.scene.primitives.push_back(prim);
    }
    if (sc.contains("class_names"))
        for (const auto& n : sc.at("class_names")) cfg.class_names.push_back(n.get<std::string>());

    const json& se = j.at("sensors");
    for (const auto& p : se.at("poses")) cfg.sensor_poses.push_back(vec3_from(p));
    cfg.rays_per_scan = se.value("rays_per_scan", cfg.rays_per_scan);

    const json& oc = j.at("occupancy");
    cfg.occupancy_grid = grid_spec_from(oc);
    cfg.probe_factor = oc.value("probe_factor", cfg.probe_factor);

    const json& fe = j.at("field");
    cfg.field_grid = grid_spec_from(fe);
    cfg.channels = fe.value("channels", cfg.channels);
    cfg.pe_freqs = fe.value("pe_freqs", cfg.pe_freqs);
    cfg.hidden = fe.value("hidden", cfg.hidden);
    cfg.omega0 = fe.value("omega0", cfg.omega0);
    cfg.phi_scale = fe.value("phi_scale", cfg.phi_scale);
    cfg.grid_init_std = fe.value("grid_init_std", cfg.grid_init_std);

    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);

    if (j.contains("train")) {
        const json& tr = j.at("train");
        cfg.train.mode = supervision_mode_from(tr.value("mode", "sandwich"));
        cfg.train.steps = tr.value("steps", cfg.train.steps);
        cfg.train.learning_rate = tr.value("learning_rate", cfg.train.learning_rate);
        cfg.train.subgrid_factor = tr.value("subgrid_factor", cfg.train.subgrid_factor);
        cfg.train.checkpoint_every = tr.value("checkpoint_every", cfg.train.checkpoint_every);
        if (tr.contains("adam")) {
            cfg.train.adam.beta1 = tr.at("adam").value("beta1", cfg.train.adam.beta1);
            cfg.train.adam.beta2 = tr.at("adam").value("beta2", cfg.train.adam.beta2);
            cfg.train.adam.eps = tr.at("adam").value("eps", cfg.train.adam.eps);
        }
        if (tr.contains("weights")) {
            const json& w = tr.at("weights");
            if (w.contains("gamma")) {
                if (w.at("gamma").size() != 8) throw ConfigError("weights.gamma must have 8 entries");
                for (int i = 0; i < 8; ++i)
                    cfg.train.weights.gamma[std::size_t(i)] = w.at("gamma").at(std::size_t(i)).get<double>();
            }
            cfg.train.weights.alpha = w.value("alpha", cfg.train.weights.alpha);
            cfg.train.weights.beta = w.value("beta", cfg.train.weights.beta);
            cfg.train.weights.t = w.value("t", cfg.train.weights.t);
        }
        if (tr.contains("batch")) {
            const json& b = tr.at("batch");
            cfg.train.batch.surface = b.value("surface", cfg.train.batch.surface);
            cfg.train.batch.occupied = b.value("occupied", cfg.train.batch.occupied);
            cfg.train.batch.free_space = b.value("free", cfg.train.batch.free_space);
            cfg.train.batch.uniform = b.value("uniform", cfg.train.batch.uniform);
        }
    }
    cfg.train.seed = cfg.seed;

    if (j.contains("extract")) {
        const json& ex = j.at("extract");
        cfg.mesh_grid = ex.contains("mesh") ? grid_spec_from(ex.at("mesh")) : cfg.field_grid;
        cfg.iso = ex.value("iso", cfg.iso);
        cfg.occ_subgrid = ex.value("occ_subgrid", cfg.occ_subgrid);
        if (ex.contains("cameras"))
            for (const auto& c : ex.at("cameras")) cfg.cameras.push_back(camera_from(c));
        if (ex.contains("fusion")) {
            const json& fu = ex.at("fusion");
            cfg.fusion_momentum = fu.value("momentum", cfg.fusion_momentum);
            if (fu.contains("frames"))
                for (const auto& f : fu.at("frames")) {
                    FusionFrame frame;
                    if (f.contains("rotation")) frame.pose.rotation = rotation_from(f.at("rotation"));
                    if (f.contains("rotation_matrix")) frame.pose.rotation = mat3_from(f.at("rotation_matrix"));
                    if (f.contains("translation")) frame.pose.translation = vec3_from(f.at("translation"));
                    frame.checkpoint_path = f.value("checkpoint", std::string());
                    cfg.fusion_frames.push_back(frame);
                }
        }
    } else {
        cfg.mesh_grid = cfg.field_grid;
    }

    if (j.contains("eval")) cfg.chamfer_samples = j.at("eval").value("chamfer_samples", cfg.chamfer_samples);

    cfg.validate();
    return cfg;
}

json experiment_config_json(const ExperimentConfig& cfg) {
    json prims = json::array();
    for (const auto& p : cfg.scene.primitives) prims.push_back(primitive_json(p));
    json names = json::array();
    for (int c = 0; c < cfg.scene.num_classes; ++c)
        names.push_back(c < int(cfg.class_names.size()) ? cfg.class_names[std::size_t(c)]
                                                        : "class_" + std::to_string(c));
    json poses = json::array();
    for (const auto& p : cfg.sensor_poses) poses.push_back(vec3_json(p));
    json cams = json::array();
    for (const auto& c : cfg.cameras) cams.push_back(camera_json(c));
    json frames = json::array();
    for (const auto& f : cfg.fusion_frames)
        frames.push_back(json{{"rotation_matrix", mat3_json(f.pose.rotation)},
                              {"translation", vec3_json(f.pose.translation)},
                              {"checkpoint", f.checkpoint_path}});

    json occ = grid_spec_json(cfg.occupancy_grid);
    occ["probe_factor"] = cfg.probe_factor;
    json field = grid_spec_json(cfg.field_grid);
    field["channels"] = cfg.channels;
    field["pe_freqs"] = cfg.pe_freqs;
    field["hidden"] = cfg.hidden;
    field["omega0"] = cfg.omega0;
    field["phi_scale"] = cfg.phi_scale;
    field["grid_init_std"] = cfg.grid_init_std;

    const TrainConfig& t = cfg.train;
    json train{{"mode", to_string(t.mode)},
               {"steps", t.steps},
               {"learning_rate", t.learning_rate},
               {"adam", {{"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}},
               {"weights",
                {{"gamma", t.weights.gamma},
                 {"alpha", t.weights.alpha},
                 {"beta", t.weights.beta},
                 {"t", t.weights.t}}},
               {"batch",
                {{"surface", t.batch.surface},
                 {"occupied", t.batch.occupied},
                 {"free", t.batch.free_space},
                 {"uniform", t.batch.uniform}}},
               {"subgrid_factor", t.subgrid_factor},
               {"checkpoint_every", t.checkpoint_every}};

    return json{{"scene",
                 {{"bounds", {{"lo", vec3_json(cfg.scene.bounds.lo)}, {"hi", vec3_json(cfg.scene.bounds.hi)}}},
                  {"num_classes", cfg.scene.num_classes},
                  {"class_names", names},
                  {"primitives", prims}}},
                {"sensors", {{"poses", poses}, {"rays_per_scan", cfg.rays_per_scan}}},
                {"occupancy", occ},
                {"field", field},
                {"train", train},
                {"extract",
                 {{"iso", cfg.iso},
                  {"mesh", grid_spec_json(cfg.mesh_grid)},
                  {"occ_subgrid", cfg.occ_subgrid},
                  {"cameras", cams},
                  {"fusion", {{"momentum", cfg.fusion_momentum}, {"frames", frames}}}}},
                {"eval", {{"chamfer_samples", cfg.chamfer_samples}}},
                {"out_dir", cfg.out_dir},
                {"seed", cfg.seed}};
}

ExperimentConfig load_experiment_config(const std::string& path) {
    json j;
    try {
        j = json::parse(slurp_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    try {
        return parse_experiment_config(j);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace sdfit
