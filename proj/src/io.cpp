#include "sdfit/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sdfit {

using nlohmann::json;

namespace {

constexpr std::uint8_t kFreeByte = 0;
constexpr std::uint8_t kUnobservedByte = 255;

void append_le(std::string& out, const void* data, std::size_t n) {
    out.append(reinterpret_cast<const char*>(data), n);
}

template <typename T>
void append_values(std::string& out, const T* data, std::size_t n) {
    append_le(out, data, n * sizeof(T));
}

template <typename T>
void read_values(const std::string& buf, std::size_t& off, T* data, std::size_t n) {
    if (off + n * sizeof(T) > buf.size()) throw ConfigError("file payload truncated");
    std::memcpy(data, buf.data() + off, n * sizeof(T));
    off += n * sizeof(T);
}

json vec3_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec3_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json grid_spec_json(const GridSpec& s) {
    return json{{"dims", {s.dims[0], s.dims[1], s.dims[2]}},
                {"origin", vec3_json(s.origin)},
                {"voxel_size", s.voxel_size}};
}

GridSpec grid_spec_from(const json& j) {
    GridSpec s;
    s.origin = vec3_from(j.at("origin"));
    s.voxel_size = j.at("voxel_size").get<double>();
    for (int a = 0; a < 3; ++a) s.dims[std::size_t(a)] = j.at("dims").at(std::size_t(a)).get<int>();
    s.validate();
    return s;
}

}  // namespace

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path);
    out.write(contents.data(), std::streamsize(contents.size()));
    if (!out) throw ConfigError("short write: " + path);
}

// ------------------------------------------------------------- PLY

void write_point_cloud_ply(const std::string& path, const std::vector<PointSample>& samples) {
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\nelement vertex " << samples.size()
        << "\nproperty double x\nproperty double y\nproperty double z\nproperty double nx\nproperty double "
           "ny\nproperty double nz\nproperty int class\nend_header\n";
    for (const auto& s : samples) {
        out << format_double(s.position.x) << ' ' << format_double(s.position.y) << ' '
            << format_double(s.position.z) << ' ' << format_double(s.normal.x) << ' '
            << format_double(s.normal.y) << ' ' << format_double(s.normal.z) << ' ' << s.class_id << '\n';
    }
    write_file(path, out.str());
}

namespace {

struct PlyHeader {
    std::size_t vertex_count = 0;
    std::size_t face_count = 0;
    std::vector<std::string> vertex_properties;
};

PlyHeader parse_ply_header(std::istream& in, const std::string& path) {
    PlyHeader h;
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw ConfigError("not a PLY file: " + path);
    std::string element;
    while (std::getline(in, line)) {
        if (line == "end_header") return h;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "element") {
            std::size_t count;
            ls >> element >> count;
            if (element == "vertex") h.vertex_count = count;
            if (element == "face") h.face_count = count;
        } else if (word == "property" && element == "vertex") {
            std::string type, name;
            ls >> type;
            if (type == "list") ls >> name >> name;
            ls >> name;
            h.vertex_properties.push_back(name);
        }
    }
    throw ConfigError("PLY header has no end_header: " + path);
}

}  // namespace

std::vector<PointSample> read_point_cloud_ply(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path);
    PlyHeader h = parse_ply_header(in, path);
    std::vector<PointSample> samples(h.vertex_count);
    for (auto& s : samples) {
        if (!(in >> s.position.x >> s.position.y >> s.position.z >> s.normal.x >> s.normal.y >>
              s.normal.z >> s.class_id))
            throw ConfigError("truncated PLY vertex data: " + path);
    }
    return samples;
}

void write_mesh_ply(const std::string& path, const Mesh& mesh) {
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\nelement vertex " << mesh.vertices.size()
        << "\nproperty double x\nproperty double y\nproperty double z\nproperty int class\nelement face "
        << mesh.triangles.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& v = mesh.vertices[i];
        int cls = i < mesh.vertex_class.size() ? mesh.vertex_class[i] : 0;
        out << format_double(v.x) << ' ' << format_double(v.y) << ' ' << format_double(v.z) << ' ' << cls
            << '\n';
    }
    for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    write_file(path, out.str());
}

Mesh read_mesh_ply(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path);
    PlyHeader h = parse_ply_header(in, path);
    Mesh mesh;
    mesh.vertices.resize(h.vertex_count);
    mesh.vertex_class.resize(h.vertex_count, 0);
    for (std::size_t i = 0; i < h.vertex_count; ++i) {
        if (!(in >> mesh.vertices[i].x >> mesh.vertices[i].y >> mesh.vertices[i].z >> mesh.vertex_class[i]))
            throw ConfigError("truncated PLY vertex data: " + path);
    }
    mesh.triangles.resize(h.face_count);
    for (auto& t : mesh.triangles) {
        int n;
        if (!(in >> n >> t[0] >> t[1] >> t[2]) || n != 3)
            throw ConfigError("mesh faces must be triangles: " + path);
    }
    return mesh;
}

// ------------------------------------------------------------- grid

namespace {

std::string labels_payload(const OccupancyGrid& grid) {
    std::string bytes;
    bytes.reserve(grid.labels.size());
    for (std::size_t i = 0; i < grid.labels.size(); ++i) {
        switch (grid.labels[i]) {
            case VoxelLabel::Free: bytes.push_back(char(kFreeByte)); break;
            case VoxelLabel::Unobserved: bytes.push_back(char(kUnobservedByte)); break;
            case VoxelLabel::Occupied: {
                int b = grid.classes[i] + 1;
                if (b < 1 || b > 254) throw ConfigError("class id does not fit the label byte encoding");
                bytes.push_back(char(std::uint8_t(b)));
                break;
            }
        }
    }
    return bytes;
}

void decode_labels(const std::string& buf, std::size_t& off, OccupancyGrid& grid) {
    std::size_t n = grid.labels.size();
    if (off + n > buf.size()) throw ConfigError("grid label payload truncated");
    for (std::size_t i = 0; i < n; ++i) {
        std::uint8_t b = std::uint8_t(buf[off + i]);
        if (b == kFreeByte) {
            grid.labels[i] = VoxelLabel::Free;
        } else if (b == kUnobservedByte) {
            grid.labels[i] = VoxelLabel::Unobserved;
        } else {
            grid.labels[i] = VoxelLabel::Occupied;
            grid.classes[i] = std::int16_t(b - 1);
        }
    }
    off += n;
}

json grid_header(const OccupancyGrid& grid, const std::vector<std::string>& class_names,
                 const std::vector<std::string>& payloads) {
    json names = json::array();
    for (int c = 0; c < grid.num_classes; ++c)
        names.push_back(c < int(class_names.size()) ? class_names[std::size_t(c)]
                                                    : "class_" + std::to_string(c));
    return json{{"magic", "sdfit.grid"}, {"version", 1},          {"grid", grid_spec_json(grid.spec)},
                {"num_classes", grid.num_classes}, {"class_names", names}, {"payloads", payloads}};
}

}  // namespace

void write_occupancy_grid(const std::string& path, const OccupancyGrid& grid,
                          const std::vector<std::string>& class_names) {
    std::string out = grid_header(grid, class_names, {"labels"}).dump();
    out.push_back('\n');
    out += labels_payload(grid);
    write_file(path, out);
}

namespace {

json parse_header_line(const std::string& buf, std::size_t& off, const std::string& magic,
                       const std::string& path) {
    std::size_t nl = buf.find('\n');
    if (nl == std::string::npos) throw ConfigError("missing header line: " + path);
    json header = json::parse(buf.substr(0, nl));
    if (header.value("magic", "") != magic) throw ConfigError("wrong file magic: " + path);
    off = nl + 1;
    return header;
}

}  // namespace

GridFileData read_occupancy_grid(const std::string& path) {
    std::string buf = slurp_file(path);
    std::size_t off = 0;
    json header = parse_header_line(buf, off, "sdfit.grid", path);
    GridFileData out;
    out.grid.init(grid_spec_from(header.at("grid")), header.at("num_classes").get<int>());
    for (const auto& n : header.at("class_names")) out.class_names.push_back(n.get<std::string>());
    decode_labels(buf, off, out.grid);
    return out;
}

void write_fused_scene(const std::string& path, const FusedScene& fused, const OccupancyGrid& labels,
                       const std::vector<std::string>& class_names) {
    if (!(labels.spec == fused.spec)) throw SpecMismatch("fused labels grid spec mismatch");
    std::string out =
        grid_header(labels, class_names, {"labels", "sdf", "logits", "counts"}).dump();
    out.push_back('\n');
    out += labels_payload(labels);
    std::vector<float> tmp(fused.sdf.begin(), fused.sdf.end());
    append_values(out, tmp.data(), tmp.size());
    tmp.assign(fused.logits.begin(), fused.logits.end());
    append_values(out, tmp.data(), tmp.size());
    append_values(out, fused.counts.data(), fused.counts.size());
    write_file(path, out);
}

FusedFileData read_fused_scene(const std::string& path) {
    std::string buf = slurp_file(path);
    std::size_t off = 0;
    json header = parse_header_line(buf, off, "sdfit.grid", path);
    FusedFileData out;
    int nc = header.at("num_classes").get<int>();
    GridSpec spec = grid_spec_from(header.at("grid"));
    out.labels.init(spec, nc);
    for (const auto& n : header.at("class_names")) out.class_names.push_back(n.get<std::string>());
    decode_labels(buf, off, out.labels);
    out.fused.init(spec, nc);
    std::vector<float> tmp(out.fused.sdf.size());
    read_values(buf, off, tmp.data(), tmp.size());
    std::copy(tmp.begin(), tmp.end(), out.fused.sdf.begin());
    tmp.resize(out.fused.logits.size());
    read_values(buf, off, tmp.data(), tmp.size());
    std::copy(tmp.begin(), tmp.end(), out.fused.logits.begin());
    read_values(buf, off, out.fused.counts.data(), out.fused.counts.size());
    return out;
}

// ------------------------------------------------------------- checkpoint

namespace {

json checkpoint_header(const FieldParams& params, bool has_optimizer, long step) {
    const FieldShape& s = params.shape;
    return json{{"magic", "sdfit.ckpt"},
                {"version", 1},
                {"grid", grid_spec_json(s.grid)},
                {"channels", s.channels},
                {"pe_freqs", s.pe_freqs},
                {"hidden", s.hidden},
                {"num_classes", s.num_classes},
                {"omega0", s.omega0},
                {"phi_scale", s.phi_scale},
                {"normalization", {{"lo", vec3_json(s.normalization.lo)}, {"hi", vec3_json(s.normalization.hi)}}},
                {"param_count", s.param_count()},
                {"has_optimizer", has_optimizer},
                {"step", step}};
}

void write_checkpoint_impl(const std::string& path, const FieldParams& params, const TrainState* state) {
    std::string out = checkpoint_header(params, state != nullptr, state ? state->step : 0).dump();
    out.push_back('\n');
    append_values(out, params.values.data(), params.values.size());
    if (state) {
        append_values(out, state->moment1.data(), state->moment1.size());
        append_values(out, state->moment2.data(), state->moment2.size());
        auto rng = state->sampler_rng.state();
        append_values(out, rng.data(), rng.size());
    }
    write_file(path, out);
}

}  // namespace

void write_checkpoint(const std::string& path, const FieldParams& params) {
    write_checkpoint_impl(path, params, nullptr);
}

void write_checkpoint(const std::string& path, const TrainState& state) {
    write_checkpoint_impl(path, state.params, &state);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::string buf = slurp_file(path);
    std::size_t off = 0;
    json header = parse_header_line(buf, off, "sdfit.ckpt", path);
    CheckpointData out;
    FieldShape& s = out.params.shape;
    s.grid = grid_spec_from(header.at("grid"));
    s.channels = header.at("channels").get<int>();
    s.pe_freqs = header.at("pe_freqs").get<int>();
    s.hidden = header.at("hidden").get<int>();
    s.num_classes = header.at("num_classes").get<int>();
    s.omega0 = header.at("omega0").get<double>();
    s.phi_scale = header.value("phi_scale", 1.0);
    s.normalization.lo = vec3_from(header.at("normalization").at("lo"));
    s.normalization.hi = vec3_from(header.at("normalization").at("hi"));
    s.validate();
    std::int64_t count = header.at("param_count").get<std::int64_t>();
    if (count != s.param_count()) throw ConfigError("checkpoint parameter count mismatch: " + path);
    out.params.values.resize(std::size_t(count));
    read_values(buf, off, out.params.values.data(), out.params.values.size());
    out.has_optimizer = header.at("has_optimizer").get<bool>();
    out.step = header.at("step").get<long>();
    if (out.has_optimizer) {
        out.moment1.resize(std::size_t(count));
        out.moment2.resize(std::size_t(count));
        read_values(buf, off, out.moment1.data(), out.moment1.size());
        read_values(buf, off, out.moment2.data(), out.moment2.size());
        read_values(buf, off, out.rng_state.data(), out.rng_state.size());
    }
    return out;
}

TrainState CheckpointData::to_train_state() const {
    if (!has_optimizer) throw ConfigError("checkpoint has no optimizer state to resume from");
    TrainState s;
    s.params = params;
    s.moment1 = moment1;
    s.moment2 = moment2;
    s.step = step;
    s.sampler_rng.set_state(rng_state);
    return s;
}

// ------------------------------------------------------------- depth

void write_depth_pgm(const std::string& path, const DepthMap& map) {
    std::string out = "P5\n" + std::to_string(map.camera.width) + " " + std::to_string(map.camera.height) +
                      "\n65535\n";
    out.reserve(out.size() + map.depth.size() * 2);
    for (double d : map.depth) {
        double mm = std::clamp(std::round(d * 1000.0), 0.0, 65535.0);
        std::uint16_t v = std::uint16_t(d > 0.0 ? std::max(1.0, mm) : 0.0);
        out.push_back(char(v >> 8));
        out.push_back(char(v & 0xff));
    }
    write_file(path, out);

    const RigidTransform& pose = map.camera.pose;
    json cam{{"width", map.camera.width},
             {"height", map.camera.height},
             {"fx", map.camera.fx},
             {"fy", map.camera.fy},
             {"cx", map.camera.cx},
             {"cy", map.camera.cy},
             {"rotation", pose.rotation.m},
             {"translation", vec3_json(pose.translation)}};
    write_file(path + ".camera.json", cam.dump(2) + "\n");
}

DepthMap read_depth_pgm(const std::string& path) {
    std::string buf = slurp_file(path);
    std::istringstream in(buf);
    std::string magic;
    int w, h, maxval;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 65535) throw ConfigError("expected a 16-bit P5 PGM: " + path);
    in.get();  // single whitespace after maxval
    std::size_t off = std::size_t(in.tellg());
    if (off + std::size_t(w) * h * 2 > buf.size()) throw ConfigError("PGM payload truncated: " + path);

    json cam = json::parse(slurp_file(path + ".camera.json"));
    DepthMap out;
    out.camera.width = cam.at("width").get<int>();
    out.camera.height = cam.at("height").get<int>();
    out.camera.fx = cam.at("fx").get<double>();
    out.camera.fy = cam.at("fy").get<double>();
    out.camera.cx = cam.at("cx").get<double>();
    out.camera.cy = cam.at("cy").get<double>();
    for (int i = 0; i < 9; ++i) out.camera.pose.rotation.m[std::size_t(i)] = cam.at("rotation").at(std::size_t(i)).get<double>();
    out.camera.pose.translation = vec3_from(cam.at("translation"));
    if (out.camera.width != w || out.camera.height != h)
        throw ConfigError("PGM size disagrees with the camera sidecar: " + path);
    out.depth.assign(std::size_t(w) * h, 0.0);
    for (std::size_t i = 0; i < out.depth.size(); ++i) {
        std::uint16_t v = std::uint16_t((std::uint8_t(buf[off + 2 * i]) << 8) | std::uint8_t(buf[off + 2 * i + 1]));
        out.depth[i] = v / 1000.0;
    }
    return out;
}

// ------------------------------------------------------------- reports

namespace {

json report_json(const EvalReport& r) {
    json per = json::array();
    for (double v : r.per_class_iou) {
        if (std::isnan(v))
            per.push_back(nullptr);
        else
            per.push_back(v);
    }
    json j{{"per_class_iou", per},
           {"miou", r.miou},
           {"geometric_iou", r.geometric_iou},
           {"eikonal_residual", r.eikonal_residual}};
    if (r.has_depth) {
        j["abs_rel"] = r.abs_rel;
        j["sq_rel"] = r.sq_rel;
        j["rmse"] = r.rmse;
        j["delta_1_25"] = r.delta_1_25;
    }
    if (r.has_chamfer) j["chamfer"] = r.chamfer;
    return j;
}

}  // namespace

void write_eval_report_json(const std::string& path, const EvalReport& report) {
    write_file(path, report_json(report).dump(2) + "\n");
}

void write_eval_report_csv(const std::string& path, const EvalReport& report) {
    std::ostringstream out;
    out << "miou,geometric_iou,chamfer,eikonal_residual,abs_rel,sq_rel,rmse,delta_1_25";
    for (std::size_t c = 0; c < report.per_class_iou.size(); ++c) out << ",iou_class_" << c;
    out << '\n';
    auto cell = [&](double v, bool present) { return present ? format_double(v) : std::string(); };
    out << format_double(report.miou) << ',' << format_double(report.geometric_iou) << ','
        << cell(report.chamfer, report.has_chamfer) << ',' << format_double(report.eikonal_residual) << ','
        << cell(report.abs_rel, report.has_depth) << ',' << cell(report.sq_rel, report.has_depth) << ','
        << cell(report.rmse, report.has_depth) << ',' << cell(report.delta_1_25, report.has_depth);
    for (double v : report.per_class_iou) out << ',' << (std::isnan(v) ? std::string() : format_double(v));
    out << '\n';
    write_file(path, out.str());
}

EvalReport read_eval_report_json(const std::string& path) {
    json j = json::parse(slurp_file(path));
    EvalReport r;
    for (const auto& v : j.at("per_class_iou"))
        r.per_class_iou.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
    r.miou = j.at("miou").get<double>();
    r.geometric_iou = j.at("geometric_iou").get<double>();
    r.eikonal_residual = j.at("eikonal_residual").get<double>();
    if (j.contains("abs_rel")) {
        r.has_depth = true;
        r.abs_rel = j.at("abs_rel").get<double>();
        r.sq_rel = j.at("sq_rel").get<double>();
        r.rmse = j.at("rmse").get<double>();
        r.delta_1_25 = j.at("delta_1_25").get<double>();
    }
    if (j.contains("chamfer")) {
        r.has_chamfer = true;
        r.chamfer = j.at("chamfer").get<double>();
    }
    return r;
}

}  // namespace sdfit
