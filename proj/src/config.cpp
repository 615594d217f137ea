#include "roadsynth/config.hpp"

#include "roadsynth/error.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace roadsynth {

using nlohmann::ordered_json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::size_t kInfinitePoints = std::numeric_limits<std::size_t>::max();

// Reads an object, remembering which keys were consumed so leftovers can be
// reported as unknown.
class Reader {
public:
    Reader(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_, "expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        used_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            fail(sub(key), e.what());
        }
    }

    void get_vec(const char* key, Vec3& out) {
        if (!j_.contains(key)) return;
        used_.insert(key);
        const auto& a = j_.at(key);
        if (!a.is_array() || a.size() != 3 || !a[0].is_number() || !a[1].is_number() || !a[2].is_number()) {
            fail(sub(key), "expected 3 numbers");
        }
        out = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    }

    bool has(const char* key) const { return j_.contains(key); }

    Reader child(const char* key) {
        used_.insert(key);
        return Reader(j_.at(key), sub(key));
    }

    const ordered_json& raw(const char* key) {
        used_.insert(key);
        return j_.at(key);
    }

    std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!used_.count(k)) fail(sub(k), "unknown key");
        }
    }

    [[noreturn]] static void fail(const std::string& path, const std::string& msg) {
        throw Error(ErrorCode::InvalidArgument, "config " + (path.empty() ? std::string("<root>") : path) + ": " + msg);
    }

private:
    const ordered_json& j_;
    std::string path_;
    std::set<std::string> used_;
};

ordered_json vec_json(const Vec3& v) { return ordered_json::array({v.x(), v.y(), v.z()}); }

ordered_json trace_json(const TraceOptions& t) {
    return {{"eps", t.eps}, {"max_steps", t.max_steps}, {"blind_step", t.blind_step}, {"refine", t.refine}};
}

void read_trace(Reader r, TraceOptions& t) {
    r.get("eps", t.eps);
    r.get("max_steps", t.max_steps);
    r.get("blind_step", t.blind_step);
    r.get("refine", t.refine);
    r.finish();
}

ordered_json fit_json(const FitConfig& f) {
    return {{"iterations", f.iterations},
            {"learning_rate", f.learning_rate},
            {"drop_lr_multiplier", f.drop_lr_multiplier},
            {"batch_size", f.batch_size},
            {"eikonal_samples", f.eikonal_samples},
            {"voxel_size", f.voxel_size},
            {"truncation_voxels", f.truncation_voxels},
            {"trace", trace_json(f.loss.trace)},
            {"drop_probe_samples", f.loss.drop_probe_samples},
            {"min_grazing_slope", f.loss.min_grazing_slope}};
}

void read_fit(Reader r, FitConfig& f) {
    r.get("iterations", f.iterations);
    r.get("learning_rate", f.learning_rate);
    r.get("drop_lr_multiplier", f.drop_lr_multiplier);
    r.get("batch_size", f.batch_size);
    r.get("eikonal_samples", f.eikonal_samples);
    r.get("voxel_size", f.voxel_size);
    r.get("truncation_voxels", f.truncation_voxels);
    if (r.has("trace")) read_trace(r.child("trace"), f.loss.trace);
    r.get("drop_probe_samples", f.loss.drop_probe_samples);
    r.get("min_grazing_slope", f.loss.min_grazing_slope);
    r.finish();
}

ordered_json pattern_json(const SensorModel& s) {
    return {{"channels", s.channels},
            {"vertical_fov_deg", {s.vertical_fov_min_deg, s.vertical_fov_max_deg}},
            {"horizontal_fov_deg", {s.horizontal_fov_min_deg, s.horizontal_fov_max_deg}},
            {"horizontal_resolution_deg", s.horizontal_resolution_deg},
            {"max_range", s.max_range}};
}

void read_range(Reader& r, const char* key, double& lo, double& hi) {
    if (!r.has(key)) return;
    const auto& a = r.raw(key);
    if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number()) {
        Reader::fail(r.sub(key), "expected [min, max]");
    }
    lo = a[0].get<double>();
    hi = a[1].get<double>();
}

ordered_json pose_json(const RigidTransform& t) {
    ordered_json a = ordered_json::array();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) a.push_back(r == 3 ? (c == 3 ? 1.0 : 0.0) : c == 3 ? t.translation()[r] : t.rotation()(r, c));
    return a;
}

ordered_json sensor_json(const SensorConfig& s) {
    ordered_json j = {{"name", s.name},
                      {"position", vec_json(s.position)},
                      {"yaw_deg", s.yaw_deg},
                      {"pitch_deg", s.pitch_deg},
                      {"roll_deg", s.roll_deg}};
    if (s.pose) j["pose"] = pose_json(*s.pose);
    const ordered_json pattern = pattern_json(s.pattern);
    for (const auto& [k, v] : pattern.items()) j[k] = v;
    return j;
}

SensorConfig read_sensor(Reader r, const SensorConfig& base) {
    SensorConfig s = base;
    r.get("name", s.name);
    r.get_vec("position", s.position);
    r.get("yaw_deg", s.yaw_deg);
    r.get("pitch_deg", s.pitch_deg);
    r.get("roll_deg", s.roll_deg);
    if (r.has("pose")) {
        const auto& a = r.raw("pose");
        if (!a.is_array() || a.size() != 16) Reader::fail(r.sub("pose"), "expected 16 numbers (row-major 4x4)");
        Mat3 rot;
        Vec3 t;
        for (int i = 0; i < 3; ++i) {
            for (int c = 0; c < 3; ++c) rot(i, c) = a[4 * i + c].get<double>();
            t[i] = a[4 * i + 3].get<double>();
        }
        s.pose = RigidTransform(rot, t);
    }
    r.get("channels", s.pattern.channels);
    read_range(r, "vertical_fov_deg", s.pattern.vertical_fov_min_deg, s.pattern.vertical_fov_max_deg);
    read_range(r, "horizontal_fov_deg", s.pattern.horizontal_fov_min_deg, s.pattern.horizontal_fov_max_deg);
    r.get("horizontal_resolution_deg", s.pattern.horizontal_resolution_deg);
    r.get("max_range", s.pattern.max_range);
    r.finish();
    return s;
}

ordered_json decompose_json(const DecomposeConfig& d) {
    ordered_json min_points = d.min_points == kInfinitePoints ? ordered_json("inf") : ordered_json(d.min_points);
    return {{"min_points", min_points},
            {"ground_band", d.ground_band},
            {"box_margin", d.box_margin},
            {"pseudo_margin", d.pseudo_margin},
            {"align", d.align},
            {"alignment",
             {{"voxel", d.alignment.voxel},
              {"max_iterations", d.alignment.max_iterations},
              {"max_correspondence", d.alignment.max_correspondence},
              {"min_correspondences", d.alignment.min_correspondences},
              {"convergence", d.alignment.convergence}}},
            {"completion", d.completion == CompletionMode::Aggregate ? "aggregate" : "best_frame"},
            {"mirror_dedup", d.mirror_dedup}};
}

ordered_json to_ordered(const PipelineConfig& c) {
    ordered_json sensors = ordered_json::array();
    for (const auto& s : c.render.sensors) sensors.push_back(sensor_json(s));
    return {
        {"dataset_root", c.dataset_root.string()},
        {"output_root", c.output_root.string()},
        {"seed", c.seed},
        {"decompose", decompose_json(c.decompose)},
        {"background", {{"fit", fit_json(c.background.fit)}, {"padding", c.background.padding}, {"max_rays", c.background.max_rays}}},
        {"vehicles",
         {{"fit", fit_json(c.vehicles.fit)},
          {"ring",
           {{"radii", c.vehicles.ring.radii},
            {"heights", c.vehicles.ring.heights},
            {"rays_per_origin", c.vehicles.ring.rays_per_origin},
            {"origins_per_ring", c.vehicles.ring.origins_per_ring}}},
          {"hit_threshold", c.vehicles.hit_threshold},
          {"field_margin", c.vehicles.field_margin},
          {"max_real_rays", c.vehicles.max_real_rays}}},
        {"occupancy", {{"voxel", c.occupancy.voxel}, {"dilation", c.occupancy.dilation}}},
        {"loss_weights",
         {{"w_zeta", c.loss_weights.w_zeta},
          {"w_s", c.loss_weights.w_s},
          {"w_eik", c.loss_weights.w_eik},
          {"w_drop", c.loss_weights.w_drop}}},
        {"render",
         {{"sensors", sensors},
          {"frames", c.render.frames},
          {"trace", trace_json(c.render.options.trace)},
          {"box_margin", c.render.options.box_margin}}},
        {"eval", {{"reference_root", c.reference_root.string()}}},
    };
}

void check(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, "config: " + what);
}

void check_fit(const FitConfig& f, const std::string& where) {
    check(f.iterations >= 0, where + ".iterations must be >= 0");
    check(f.learning_rate > 0.0 && std::isfinite(f.learning_rate), where + ".learning_rate must be > 0");
    check(f.drop_lr_multiplier > 0.0, where + ".drop_lr_multiplier must be > 0");
    check(f.batch_size >= 1, where + ".batch_size must be >= 1");
    check(f.voxel_size > 0.0, where + ".voxel_size must be > 0");
    check(f.truncation_voxels >= 1.0, where + ".truncation_voxels must be >= 1");
    check(f.loss.trace.eps > 0.0 && f.loss.trace.max_steps >= 1 && f.loss.trace.blind_step > 0.0,
          where + ".trace needs eps > 0, max_steps >= 1, blind_step > 0");
    check(f.loss.drop_probe_samples >= 1, where + ".drop_probe_samples must be >= 1");
}

} // namespace

SensorModel SensorConfig::model() const {
    SensorModel m = pattern;
    if (pose) {
        m.pose = *pose;
    } else {
        const Mat3 r = (Eigen::AngleAxisd(yaw_deg * kDeg, Vec3::UnitZ()) *
                        Eigen::AngleAxisd(pitch_deg * kDeg, Vec3::UnitY()) *
                        Eigen::AngleAxisd(roll_deg * kDeg, Vec3::UnitX()))
                           .toRotationMatrix();
        m.pose = RigidTransform(r, position);
    }
    return m;
}

PipelineConfig PipelineConfig::defaults() {
    PipelineConfig c;
    c.dataset_root = "data";
    c.output_root = "out";

    c.background.fit.voxel_size = 0.2;
    c.background.fit.iterations = 400;
    c.background.fit.batch_size = 2048;
    c.background.fit.eikonal_samples = 1024;
    c.background.fit.learning_rate = 1e-2;

    c.vehicles.fit.voxel_size = 0.05;
    c.vehicles.fit.iterations = 600;
    c.vehicles.fit.batch_size = 1024;
    c.vehicles.fit.learning_rate = 2e-3;

    c.render.sensors.push_back(SensorConfig{});
    c.render.options.trace.max_steps = 512;
    c.render.options.trace.eps = 1e-6;
    return c;
}

std::string config_to_json(const PipelineConfig& config, int indent) { return to_ordered(config).dump(indent); }

PipelineConfig config_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("config is not valid JSON: ") + e.what());
    }
    PipelineConfig c = PipelineConfig::defaults();
    Reader r(j, "");
    std::string s;
    if (r.has("dataset_root")) {
        r.get("dataset_root", s);
        c.dataset_root = s;
    }
    if (r.has("output_root")) {
        r.get("output_root", s);
        c.output_root = s;
    }
    r.get("seed", c.seed);

    if (r.has("decompose")) {
        Reader d = r.child("decompose");
        if (d.has("min_points")) {
            const auto& v = d.raw("min_points");
            if (v.is_string() && (v == "inf" || v == "infinity")) c.decompose.min_points = kInfinitePoints;
            else if (v.is_number_unsigned()) c.decompose.min_points = v.get<std::size_t>();
            else Reader::fail(d.sub("min_points"), "expected a non-negative integer or \"inf\"");
        }
        d.get("ground_band", c.decompose.ground_band);
        d.get("box_margin", c.decompose.box_margin);
        d.get("pseudo_margin", c.decompose.pseudo_margin);
        d.get("align", c.decompose.align);
        if (d.has("alignment")) {
            Reader a = d.child("alignment");
            a.get("voxel", c.decompose.alignment.voxel);
            a.get("max_iterations", c.decompose.alignment.max_iterations);
            a.get("max_correspondence", c.decompose.alignment.max_correspondence);
            a.get("min_correspondences", c.decompose.alignment.min_correspondences);
            a.get("convergence", c.decompose.alignment.convergence);
            a.finish();
        }
        if (d.has("completion")) {
            std::string mode;
            d.get("completion", mode);
            if (mode == "aggregate") c.decompose.completion = CompletionMode::Aggregate;
            else if (mode == "best_frame") c.decompose.completion = CompletionMode::BestFrame;
            else Reader::fail(d.sub("completion"), "expected \"aggregate\" or \"best_frame\"");
        }
        d.get("mirror_dedup", c.decompose.mirror_dedup);
        d.finish();
    }
    if (r.has("background")) {
        Reader b = r.child("background");
        if (b.has("fit")) read_fit(b.child("fit"), c.background.fit);
        b.get("padding", c.background.padding);
        b.get("max_rays", c.background.max_rays);
        b.finish();
    }
    if (r.has("vehicles")) {
        Reader v = r.child("vehicles");
        if (v.has("fit")) read_fit(v.child("fit"), c.vehicles.fit);
        if (v.has("ring")) {
            Reader g = v.child("ring");
            g.get("radii", c.vehicles.ring.radii);
            g.get("heights", c.vehicles.ring.heights);
            g.get("rays_per_origin", c.vehicles.ring.rays_per_origin);
            g.get("origins_per_ring", c.vehicles.ring.origins_per_ring);
            g.finish();
        }
        v.get("hit_threshold", c.vehicles.hit_threshold);
        v.get("field_margin", c.vehicles.field_margin);
        v.get("max_real_rays", c.vehicles.max_real_rays);
        v.finish();
    }
    if (r.has("occupancy")) {
        Reader o = r.child("occupancy");
        o.get("voxel", c.occupancy.voxel);
        o.get("dilation", c.occupancy.dilation);
        o.finish();
    }
    if (r.has("loss_weights")) {
        Reader w = r.child("loss_weights");
        w.get("w_zeta", c.loss_weights.w_zeta);
        w.get("w_s", c.loss_weights.w_s);
        w.get("w_eik", c.loss_weights.w_eik);
        w.get("w_drop", c.loss_weights.w_drop);
        w.finish();
    }
    if (r.has("render")) {
        Reader rr = r.child("render");
        if (rr.has("sensors")) {
            const auto& arr = rr.raw("sensors");
            if (!arr.is_array()) Reader::fail(rr.sub("sensors"), "expected an array");
            const SensorConfig base = PipelineConfig::defaults().render.sensors.front();
            c.render.sensors.clear();
            for (std::size_t i = 0; i < arr.size(); ++i) {
                c.render.sensors.push_back(read_sensor(Reader(arr[i], rr.sub("sensors[" + std::to_string(i) + "]")), base));
            }
        }
        rr.get("frames", c.render.frames);
        if (rr.has("trace")) read_trace(rr.child("trace"), c.render.options.trace);
        rr.get("box_margin", c.render.options.box_margin);
        rr.finish();
    }
    if (r.has("eval")) {
        Reader e = r.child("eval");
        if (e.has("reference_root")) {
            e.get("reference_root", s);
            c.reference_root = s;
        }
        e.finish();
    }
    r.finish();
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingFile, path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    PipelineConfig c = config_from_json(ss.str());
    const std::filesystem::path base = path.parent_path();
    for (auto* p : {&c.dataset_root, &c.output_root, &c.reference_root}) {
        if (!p->empty() && p->is_relative()) *p = base / *p;
    }
    return c;
}

void validate_config(const PipelineConfig& c, bool check_paths) {
    check(!c.output_root.empty(), "output_root must be set");
    const auto& d = c.decompose;
    check(d.ground_band >= 0.0, "decompose.ground_band must be >= 0");
    check(d.box_margin >= 0.0 && d.pseudo_margin >= 0.0, "decompose margins must be >= 0");
    check(d.alignment.voxel > 0.0 && d.alignment.max_iterations >= 0 && d.alignment.max_correspondence > 0.0,
          "decompose.alignment needs voxel > 0, max_iterations >= 0, max_correspondence > 0");
    check(d.mirror_dedup >= 0.0, "decompose.mirror_dedup must be >= 0");
    check_fit(c.background.fit, "background.fit");
    check(c.background.padding >= 0.0, "background.padding must be >= 0");
    check(c.background.max_rays >= 1, "background.max_rays must be >= 1");
    check_fit(c.vehicles.fit, "vehicles.fit");
    check(!c.vehicles.ring.radii.empty() && !c.vehicles.ring.heights.empty() && c.vehicles.ring.rays_per_origin >= 1 &&
              c.vehicles.ring.origins_per_ring >= 1,
          "vehicles.ring needs radii, heights, rays_per_origin >= 1, origins_per_ring >= 1");
    for (double r : c.vehicles.ring.radii) check(r > 0.0, "vehicles.ring.radii must be > 0");
    check(c.vehicles.hit_threshold > 0.0, "vehicles.hit_threshold must be > 0");
    check(c.vehicles.field_margin >= 0.0, "vehicles.field_margin must be >= 0");
    check(c.occupancy.voxel > 0.0, "occupancy.voxel must be > 0");
    check(c.occupancy.dilation >= 0, "occupancy.dilation must be >= 0");
    check(c.loss_weights.is_valid(), "loss_weights must be finite and >= 0");
    check(!c.render.sensors.empty(), "render.sensors must not be empty");
    std::set<std::string> names;
    for (const auto& s : c.render.sensors) {
        check(!s.name.empty() && s.name.find('/') == std::string::npos && s.name != "." && s.name != "..",
              "render sensor names must be plain directory names");
        check(names.insert(s.name).second, "duplicate render sensor name " + s.name);
        check(s.model().is_valid(), "render sensor " + s.name + " has an invalid pattern or pose");
    }
    check(c.render.options.trace.eps > 0.0 && c.render.options.trace.max_steps >= 1 && c.render.options.box_margin >= 0.0,
          "render.trace needs eps > 0, max_steps >= 1; box_margin >= 0");
    if (check_paths) {
        check(std::filesystem::is_directory(c.dataset_root), "dataset_root " + c.dataset_root.string() + " does not exist");
        if (!c.reference_root.empty()) {
            check(std::filesystem::is_directory(c.reference_root),
                  "eval.reference_root " + c.reference_root.string() + " does not exist");
        }
    }
}

std::string stage_config_json(const PipelineConfig& config, const std::string& stage) {
    const ordered_json j = to_ordered(config);
    ordered_json out = {{"seed", config.seed}};
    if (stage == "decompose" || stage == "complete") {
        out["decompose"] = j["decompose"];
        out["background_max_rays"] = j["background"]["max_rays"];
        out["vehicles_max_real_rays"] = j["vehicles"]["max_real_rays"];
    } else if (stage == "fit-background") {
        out["background"] = j["background"];
        out["loss_weights"] = j["loss_weights"];
    } else if (stage == "fit-vehicles") {
        out["vehicles"] = j["vehicles"];
        out["loss_weights"] = j["loss_weights"];
    } else if (stage == "occupancy") {
        out["occupancy"] = j["occupancy"];
    } else if (stage == "render") {
        out["render"] = j["render"];
    } else if (stage == "eval") {
        out["eval"] = j["eval"];
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown stage " + stage);
    }
    return out.dump();
}

} // namespace roadsynth
