#include "roadsynth/pipeline.hpp"

#include "roadsynth/error.hpp"
#include "roadsynth/io.hpp"
#include "roadsynth/occupancy.hpp"
#include "roadsynth/raysample.hpp"
#include "roadsynth/rng.hpp"

#include "json.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace roadsynth {

using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot open " + p.string() + " for writing");
    out << text;
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) { return mix_seed(seed, fnv1a(stage)); }

// ---------------------------------------------------------------- lock

class DirLock {
public:
    explicit DirLock(const fs::path& root) : path_(root / ".lock") {
        fs::create_directories(root);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            if (errno == EEXIST) {
                throw Error(ErrorCode::InvalidArgument, "output root " + root.string() +
                                                            " is locked by another run (remove " + path_.string() +
                                                            " if it is stale)");
            }
            throw Error(ErrorCode::MissingFile, "cannot create " + path_.string() + ": " + std::strerror(errno));
        }
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] const auto n = ::write(fd_, pid.data(), pid.size());
    }
    ~DirLock() {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

// ---------------------------------------------------------------- scene records

ordered_json vec_json(const Vec3& v) { return ordered_json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const ordered_json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

ordered_json pose_json(const RigidTransform& t) {
    ordered_json a = ordered_json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) a.push_back(t.rotation()(r, c));
        a.push_back(t.translation()[r]);
    }
    for (double v : {0.0, 0.0, 0.0, 1.0}) a.push_back(v);
    return a;
}

RigidTransform pose_from(const ordered_json& j) {
    Mat3 r;
    Vec3 t;
    for (int i = 0; i < 3; ++i) {
        for (int c = 0; c < 3; ++c) r(i, c) = j.at(4 * i + c).get<double>();
        t[i] = j.at(4 * i + 3).get<double>();
    }
    return {r, t};
}

ordered_json box_json(const OrientedBox& b) {
    return {{"center", vec_json(b.center)}, {"size", vec_json(b.size)}, {"yaw", b.yaw}};
}

OrientedBox box_from(const ordered_json& j) {
    return {vec_from(j.at("center")), vec_from(j.at("size")), j.at("yaw").get<double>()};
}

struct SceneFrame {
    std::string fragment;
    std::int64_t frame_id = 0;
    RigidTransform sensor_pose;
    std::vector<TrackedBox> boxes; // aligned world frame
};

struct SceneTrack {
    TrackId track_id = 0;
    bool reconstructable = false;
    OrientedBox canonical_box;
    std::vector<std::int64_t> frame_ids;
    std::vector<std::size_t> point_counts;
    std::size_t best_frame = 0;
};

struct SceneRecord {
    std::vector<SceneFrame> frames;
    std::vector<SceneTrack> tracks;
};

void write_scene(const fs::path& path, const SceneRecord& s, const std::vector<std::pair<std::string, RigidTransform>>& corrections) {
    ordered_json frames = ordered_json::array();
    for (const auto& f : s.frames) {
        ordered_json boxes = ordered_json::array();
        for (const auto& b : f.boxes) {
            ordered_json o = box_json(b.box);
            o["track_id"] = b.track_id;
            o["type"] = b.type;
            boxes.push_back(o);
        }
        frames.push_back({{"fragment", f.fragment}, {"frame_id", f.frame_id}, {"pose", pose_json(f.sensor_pose)}, {"boxes", boxes}});
    }
    ordered_json tracks = ordered_json::array();
    for (const auto& t : s.tracks) {
        tracks.push_back({{"track_id", t.track_id},
                          {"reconstructable", t.reconstructable},
                          {"canonical_box", box_json(t.canonical_box)},
                          {"frame_ids", t.frame_ids},
                          {"point_counts", t.point_counts},
                          {"best_frame", t.best_frame}});
    }
    ordered_json corr = ordered_json::array();
    for (const auto& [name, c] : corrections) corr.push_back({{"fragment", name}, {"correction", pose_json(c)}});
    spit(path, ordered_json{{"alignment", corr}, {"frames", frames}, {"tracks", tracks}}.dump(1) + "\n");
}

SceneRecord read_scene(const fs::path& path) {
    const std::string text = slurp(path);
    try {
        const ordered_json j = ordered_json::parse(text);
        SceneRecord s;
        for (const auto& f : j.at("frames")) {
            SceneFrame sf;
            sf.fragment = f.at("fragment").get<std::string>();
            sf.frame_id = f.at("frame_id").get<std::int64_t>();
            sf.sensor_pose = pose_from(f.at("pose"));
            for (const auto& b : f.at("boxes")) {
                sf.boxes.push_back({b.at("track_id").get<TrackId>(), b.at("type").get<std::string>(), box_from(b)});
            }
            s.frames.push_back(std::move(sf));
        }
        for (const auto& t : j.at("tracks")) {
            SceneTrack st;
            st.track_id = t.at("track_id").get<TrackId>();
            st.reconstructable = t.at("reconstructable").get<bool>();
            st.canonical_box = box_from(t.at("canonical_box"));
            st.frame_ids = t.at("frame_ids").get<std::vector<std::int64_t>>();
            st.point_counts = t.at("point_counts").get<std::vector<std::size_t>>();
            st.best_frame = t.at("best_frame").get<std::size_t>();
            s.tracks.push_back(std::move(st));
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
    }
}

// Deterministic subset of k indices out of n, returned sorted.
std::vector<std::size_t> subsample(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (k >= n) return idx;
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& v, std::size_t k, std::uint64_t seed) {
    std::vector<T> out;
    for (std::size_t i : subsample(v.size(), k, seed)) out.push_back(v[i]);
    return out;
}

std::string track_file(TrackId id, const char* ext) { return std::to_string(id) + ext; }

bool in_any(const std::vector<OrientedBox>& boxes, const Vec3& p, double margin) {
    return std::any_of(boxes.begin(), boxes.end(), [&](const OrientedBox& b) { return b.contains(p, margin); });
}

// ---------------------------------------------------------------- stages

struct Context {
    const PipelineConfig& config;
    fs::path root;
    LogFn log;

    fs::path dir(const std::string& stage) const { return root / stage; }
};

void stage_decompose(const Context& ctx, StageReport& rep) {
    const PipelineConfig& cfg = ctx.config;
    const fs::path out = ctx.dir("decompose");
    auto fragments = read_dataset(cfg.dataset_root);
    std::set<std::int64_t> ids;
    for (const auto& frag : fragments) {
        for (const auto& f : frag.frames) {
            if (!ids.insert(f.frame_id).second) {
                throw Error(ErrorCode::FormatError, "frame id " + std::to_string(f.frame_id) +
                                                        " appears in more than one fragment");
            }
        }
    }

    // Fragment alignment on the static part of each fragment.
    std::vector<std::pair<std::string, RigidTransform>> corrections;
    if (cfg.decompose.align && fragments.size() > 1) {
        std::vector<BackgroundCloud> clouds(fragments.size());
        for (std::size_t k = 0; k < fragments.size(); ++k) {
            for (const auto& f : fragments[k].frames) {
                std::vector<OrientedBox> movers;
                for (const auto& b : f.boxes) movers.push_back(b.box);
                for (std::size_t i = 0; i < f.points.size(); ++i) {
                    const Vec3 p = f.world_point(i);
                    if (!in_any(movers, p, cfg.decompose.box_margin)) clouds[k].points.push_back(p);
                }
            }
        }
        const auto corr = align_fragments(clouds, cfg.decompose.alignment);
        for (std::size_t k = 0; k < fragments.size(); ++k) {
            corrections.emplace_back(fragments[k].name, corr[k]);
            for (auto& f : fragments[k].frames) {
                f.sensor_pose = compose(corr[k], f.sensor_pose);
                for (auto& b : f.boxes) b.box = transform_box(corr[k], b.box);
            }
            for (auto& [id, boxes] : fragments[k].pseudo_boxes) {
                for (auto& b : boxes) b = transform_box(corr[k], b);
            }
        }
        ctx.log("decompose: aligned " + std::to_string(fragments.size()) + " fragments");
    }

    std::vector<Frame> frames;
    std::map<std::int64_t, std::vector<OrientedBox>> pseudo;
    SceneRecord scene;
    for (const auto& frag : fragments) {
        for (const auto& f : frag.frames) {
            frames.push_back(f);
            scene.frames.push_back({frag.name, f.frame_id, f.sensor_pose, f.boxes});
        }
        for (const auto& [id, boxes] : frag.pseudo_boxes) pseudo[id] = boxes;
    }
    if (frames.empty()) throw Error(ErrorCode::EmptyInput, "dataset has no frames");

    auto tracks = build_tracks(frames, {cfg.decompose.box_margin});
    std::map<TrackId, OrientedBox> canonical;
    fs::create_directories(out / "vehicles");
    std::size_t reconstructable = 0;
    for (auto& [id, v] : tracks) {
        filter_unreconstructable(v, cfg.decompose.min_points);
        canonical[id] = v.canonical_box();
        SceneTrack st;
        st.track_id = id;
        st.reconstructable = v.reconstructable;
        st.canonical_box = v.canonical_box();
        st.best_frame = select_best_frame(v);
        const fs::path tdir = out / "vehicles" / std::to_string(id);
        fs::create_directories(tdir);
        for (const auto& tf : v.frames) {
            st.frame_ids.push_back(tf.frame_id);
            st.point_counts.push_back(tf.points.size());
            write_points(tdir / frame_file_name(tf.frame_id), tf.points);
        }
        reconstructable += v.reconstructable ? 1 : 0;
        scene.tracks.push_back(std::move(st));
    }

    // Background cloud and training rays; vehicle rays go to canonical space.
    std::vector<Vec3> background;
    std::vector<RaySample> background_rays;
    std::map<TrackId, std::vector<RaySample>> vehicle_rays;
    for (const Frame& f : frames) {
        const auto pit = pseudo.find(f.frame_id);
        const std::vector<OrientedBox> no_boxes;
        const auto& pboxes = pit != pseudo.end() ? pit->second : no_boxes;

        const Extraction ex = extract_vehicle_points(f, canonical, {cfg.decompose.box_margin});
        BackgroundCloud bg{ex.background, {}};
        bg = remove_dynamic_background(bg, pboxes, cfg.decompose.pseudo_margin);
        background.insert(background.end(), bg.points.begin(), bg.points.end());

        const auto rays = scan_to_rays(f);
        const RayAssignment as = assign_rays(rays, f.boxes, cfg.decompose.box_margin);
        for (const auto& r : as.background) {
            if (r.range && in_any(pboxes, r.endpoint(), cfg.decompose.pseudo_margin)) continue;
            background_rays.push_back(r);
        }
        for (const auto& tb : f.boxes) {
            const auto it = as.vehicles.find(tb.track_id);
            if (it == as.vehicles.end()) continue;
            const OrientedBox& b1 = canonical.at(tb.track_id);
            const RigidTransform to_local = canonical_local_transform(b1, tb.box);
            const OrientedBox local{Vec3::Zero(), b1.size, 0.0};
            auto& dst = vehicle_rays[tb.track_id];
            for (const auto& r : it->second) {
                RaySample s{to_local.apply(r.origin), to_local.apply_direction(r.direction), std::nullopt};
                if (r.range) {
                    const Vec3 p = s.origin + *r.range * s.direction;
                    const bool on_body = local.contains(p, cfg.decompose.box_margin) &&
                                         p.z() + 0.5 * b1.size.z() >= cfg.decompose.ground_band;
                    if (on_body) s.range = *r.range;
                }
                dst.push_back(s);
            }
        }
    }
    const std::uint64_t seed = stage_seed(cfg.seed, "decompose");
    const std::size_t all_bg_rays = background_rays.size();
    background_rays = pick(background_rays, cfg.background.max_rays, mix_seed(seed, 1));
    write_points(out / "background.bin", background);
    write_rays(out / "background_rays.rray", background_rays);
    for (const auto& [id, rays] : vehicle_rays) {
        write_rays(out / "vehicles" / track_file(id, ".rray"),
                   pick(rays, ctx.config.vehicles.max_real_rays, mix_seed(seed, static_cast<std::uint64_t>(id))));
    }
    write_scene(out / "scene.json", scene, corrections);

    rep.stats["frames"] = static_cast<double>(frames.size());
    rep.stats["tracks"] = static_cast<double>(tracks.size());
    rep.stats["reconstructable_tracks"] = static_cast<double>(reconstructable);
    rep.stats["background_points"] = static_cast<double>(background.size());
    rep.stats["background_rays"] = static_cast<double>(background_rays.size());
    rep.stats["background_rays_available"] = static_cast<double>(all_bg_rays);
    ctx.log("decompose: " + std::to_string(frames.size()) + " frames, " + std::to_string(tracks.size()) + " tracks (" +
            std::to_string(reconstructable) + " reconstructable), " + std::to_string(background.size()) +
            " background points");
}

void stage_complete(const Context& ctx, StageReport& rep) {
    const PipelineConfig& cfg = ctx.config;
    const fs::path in = ctx.dir("decompose");
    const fs::path out = ctx.dir("complete");
    const SceneRecord scene = read_scene(in / "scene.json");

    // Imported clouds, keyed by track, from every fragment that has them.
    std::map<TrackId, std::vector<Vec3>> imported;
    std::set<std::string> fragments;
    for (const auto& f : scene.frames) fragments.insert(f.fragment);
    for (const auto& name : fragments) {
        for (auto& [id, pts] : read_completed_clouds(cfg.dataset_root / name)) imported[id] = std::move(pts);
    }

    std::size_t done = 0;
    std::size_t n_imported = 0;
    for (const auto& t : scene.tracks) {
        if (!t.reconstructable) continue;
        std::vector<Vec3> cloud;
        if (auto it = imported.find(t.track_id); it != imported.end()) {
            cloud = it->second;
            ++n_imported;
        } else {
            const OrientedBox local{Vec3::Zero(), t.canonical_box.size, 0.0};
            const fs::path tdir = in / "vehicles" / std::to_string(t.track_id);
            std::vector<Vec3> raw;
            if (cfg.decompose.completion == CompletionMode::BestFrame) {
                raw = read_points(tdir / frame_file_name(t.frame_ids.at(t.best_frame)));
            } else {
                for (const auto id : t.frame_ids) {
                    const auto pts = read_points(tdir / frame_file_name(id));
                    raw.insert(raw.end(), pts.begin(), pts.end());
                }
            }
            const auto body = filter_ground_points(raw, local, cfg.decompose.ground_band);
            cloud = mirror_augment(body, local, cfg.decompose.mirror_dedup);
        }
        if (cloud.empty()) {
            ctx.log("complete: track " + std::to_string(t.track_id) + " has no body points left; it will be substituted");
            continue;
        }
        write_points(out / track_file(t.track_id, ".bin"), cloud);
        rep.stats["points_" + std::to_string(t.track_id)] = static_cast<double>(cloud.size());
        ++done;
    }
    rep.stats["completed_tracks"] = static_cast<double>(done);
    rep.stats["imported_tracks"] = static_cast<double>(n_imported);
    ctx.log("complete: " + std::to_string(done) + " vehicle clouds (" + std::to_string(n_imported) + " imported)");
}

ordered_json fit_report_json(const FitReport& r) {
    return {{"iterations", r.loss_history.size()},
            {"first_loss", r.loss_history.empty() ? 0.0 : r.loss_history.front()},
            {"last_loss", r.loss_history.empty() ? 0.0 : r.loss_history.back()},
            {"final",
             {{"total", r.final_loss.total},
              {"range_l1", r.final_loss.range_l1},
              {"surface", r.final_loss.surface},
              {"eikonal", r.final_loss.eikonal},
              {"drop", r.final_loss.drop},
              {"converged_rays", r.final_loss.converged_rays},
              {"hit_rays", r.final_loss.hit_rays}}}};
}

void stage_fit_background(const Context& ctx, StageReport& rep) {
    const PipelineConfig& cfg = ctx.config;
    const auto rays = read_rays(ctx.dir("decompose") / "background_rays.rray");
    FitConfig fit = cfg.background.fit;
    fit.seed = stage_seed(cfg.seed, "fit-background");
    const Aabb bounds = sample_bounds(rays, cfg.background.padding);
    FitReport report;
    const SdfGridField field = fit_field(rays, bounds, fit, cfg.loss_weights, &report);
    save_field(ctx.dir("fit-background") / "background.rsdf", field);
    spit(ctx.dir("fit-background") / "report.json", fit_report_json(report).dump(1) + "\n");
    rep.stats["rays"] = static_cast<double>(rays.size());
    rep.stats["nodes"] = static_cast<double>(field.lattice().node_count());
    rep.stats["final_loss"] = report.final_loss.total;
    ctx.log("fit-background: " + std::to_string(rays.size()) + " rays, " + std::to_string(field.lattice().node_count()) +
            " nodes, final loss " + std::to_string(report.final_loss.total));
}

void stage_fit_vehicles(const Context& ctx, StageReport& rep) {
    const PipelineConfig& cfg = ctx.config;
    const SceneRecord scene = read_scene(ctx.dir("decompose") / "scene.json");
    const std::uint64_t seed = stage_seed(cfg.seed, "fit-vehicles");
    ordered_json reports = ordered_json::object();
    std::size_t fitted = 0;
    for (const auto& t : scene.tracks) {
        const fs::path cloud_path = ctx.dir("complete") / track_file(t.track_id, ".bin");
        if (!t.reconstructable || !fs::exists(cloud_path)) continue;
        const auto cloud = read_points(cloud_path);
        const OrientedBox local{Vec3::Zero(), t.canonical_box.size, 0.0};
        const std::uint64_t track_seed = mix_seed(seed, static_cast<std::uint64_t>(t.track_id));
        auto rays = sample_vehicle_rays(cloud, local, cfg.vehicles.ring, {cfg.vehicles.hit_threshold, track_seed});
        const std::size_t synthetic = rays.size();
        const fs::path real_path = ctx.dir("decompose") / "vehicles" / track_file(t.track_id, ".rray");
        if (fs::exists(real_path)) {
            const auto real = read_rays(real_path);
            rays.insert(rays.end(), real.begin(), real.end());
        }
        FitConfig fit = cfg.vehicles.fit;
        fit.seed = mix_seed(track_seed, 1);
        const Vec3 half = 0.5 * local.size + Vec3::Constant(cfg.vehicles.field_margin);
        FitReport report;
        const SdfGridField field = fit_field(rays, Aabb{-half, half}, fit, cfg.loss_weights, &report);
        save_field(ctx.dir("fit-vehicles") / track_file(t.track_id, ".rsdf"), field);
        ordered_json r = fit_report_json(report);
        r["synthetic_rays"] = synthetic;
        r["real_rays"] = rays.size() - synthetic;
        reports[std::to_string(t.track_id)] = r;
        ctx.log("fit-vehicles: track " + std::to_string(t.track_id) + ", " + std::to_string(rays.size()) +
                " rays, final loss " + std::to_string(report.final_loss.total));
        ++fitted;
    }
    spit(ctx.dir("fit-vehicles") / "report.json", reports.dump(1) + "\n");
    rep.stats["fitted_tracks"] = static_cast<double>(fitted);
}

void stage_occupancy(const Context& ctx, StageReport& rep) {
    const PipelineConfig& cfg = ctx.config;
    const auto points = read_points(ctx.dir("decompose") / "background.bin");
    const OccupancyGrid grid = dilate(build_occupancy(points, cfg.occupancy.voxel), cfg.occupancy.dilation);
    save_occupancy(ctx.dir("occupancy") / "occupancy.rocc", grid);
    rep.stats["occupied_voxels"] = static_cast<double>(grid.count_occupied());
    ctx.log("occupancy: " + std::to_string(grid.count_occupied()) + " occupied voxels after dilation");
}

SceneGraph assemble_scene(const fs::path& root, std::uint64_t seed) {
    const SceneRecord scene = read_scene(root / "decompose" / "scene.json");
    SceneGraph graph;
    graph.background = load_field(root / "fit-background" / "background.rsdf");
    graph.occupancy = load_occupancy(root / "occupancy" / "occupancy.rocc");
    std::map<TrackId, OrientedBox> canonical;
    std::vector<TrackId> all;
    std::vector<TrackId> fitted;
    for (const auto& t : scene.tracks) {
        canonical[t.track_id] = t.canonical_box;
        all.push_back(t.track_id);
        const fs::path p = root / "fit-vehicles" / track_file(t.track_id, ".rsdf");
        if (fs::exists(p)) {
            graph.vehicles[t.track_id] = VehicleModel{load_field(p), t.canonical_box.size};
            fitted.push_back(t.track_id);
        }
    }
    graph.substitutions = substitute_missing(all, fitted, stage_seed(seed, "render"));
    for (const auto& f : scene.frames) {
        auto& states = graph.timeline[f.frame_id];
        for (const auto& b : f.boxes) {
            if (!canonical.count(b.track_id)) continue;
            states.push_back({b.track_id, b.box, canonical_local_transform(canonical.at(b.track_id), b.box)});
        }
    }
    return graph;
}

void stage_render(const Context& ctx, StageReport& rep) {
    const PipelineConfig& cfg = ctx.config;
    const SceneGraph graph = assemble_scene(ctx.root, cfg.seed);
    std::vector<std::int64_t> frame_ids = cfg.render.frames;
    if (frame_ids.empty()) {
        for (const auto& [id, states] : graph.timeline) frame_ids.push_back(id);
    }
    ordered_json subs = ordered_json::object();
    for (const auto& [r, d] : graph.substitutions) subs[std::to_string(r)] = d;
    spit(ctx.dir("render") / "substitutions.json", subs.dump(1) + "\n");

    std::size_t points = 0;
    for (const auto& sc : cfg.render.sensors) {
        const SensorModel sensor = sc.model();
        std::vector<RenderedFrame> frames;
        for (const auto id : frame_ids) {
            frames.push_back(render_frame(graph, sensor, id, cfg.render.options));
            points += frames.back().points.size();
        }
        write_rendered(ctx.dir("render") / sc.name, sensor, frames);
        ctx.log("render: sensor " + sc.name + ", " + std::to_string(frames.size()) + " frames");
    }
    rep.stats["frames"] = static_cast<double>(frame_ids.size());
    rep.stats["points"] = static_cast<double>(points);
    rep.stats["substituted_tracks"] = static_cast<double>(graph.substitutions.size());
}

void stage_eval(const Context& ctx, StageReport& rep, PipelineReport* full) {
    const PipelineConfig& cfg = ctx.config;
    ordered_json out = ordered_json::object();
    if (cfg.reference_root.empty()) {
        ctx.log("eval: no reference configured, nothing to compare");
    } else {
        for (const auto& sc : cfg.render.sensors) {
            const fs::path ref_dir = cfg.reference_root / sc.name;
            if (!fs::is_directory(ref_dir)) {
                ctx.log("eval: no reference for sensor " + sc.name);
                continue;
            }
            const auto rendered = read_rendered(ctx.dir("render") / sc.name);
            std::map<std::int64_t, RenderedFrame> refs;
            for (auto& f : read_rendered(ref_dir)) refs.emplace(f.frame_id, std::move(f));
            std::vector<MetricsReport> per_frame;
            for (const auto& f : rendered) {
                const auto it = refs.find(f.frame_id);
                if (it == refs.end()) continue;
                per_frame.push_back(evaluate(f, it->second));
            }
            if (per_frame.empty()) {
                ctx.log("eval: sensor " + sc.name + " shares no frame with its reference");
                continue;
            }
            const MetricsReport m = aggregate(per_frame);
            out[sc.name] = ordered_json::parse(metrics_to_json(m));
            rep.stats["chamfer_" + sc.name] = m.chamfer;
            rep.stats["range_mae_" + sc.name] = m.range_mae;
            if (full) full->metrics[sc.name] = m;
            ctx.log("eval: sensor " + sc.name + " chamfer " + std::to_string(m.chamfer) + " m, range MAE " +
                    std::to_string(m.range_mae) + " m, drop accuracy " + std::to_string(m.drop_accuracy()));
        }
    }
    spit(ctx.dir("eval") / "metrics.json", out.dump(1) + "\n");
}

// ---------------------------------------------------------------- orchestration

const std::map<std::string, std::vector<std::string>>& upstream() {
    static const std::map<std::string, std::vector<std::string>> deps{
        {"decompose", {}},
        {"complete", {"decompose"}},
        {"fit-background", {"decompose"}},
        {"fit-vehicles", {"decompose", "complete"}},
        {"occupancy", {"decompose"}},
        {"render", {"decompose", "fit-background", "fit-vehicles", "occupancy"}},
        {"eval", {"render"}},
    };
    return deps;
}

std::string read_done(const Context& ctx, const std::string& stage) {
    const fs::path p = ctx.dir(stage) / ".done";
    if (!fs::exists(p)) return {};
    std::string s = slurp(p);
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

std::string fingerprint(const Context& ctx, const std::string& stage) {
    std::uint64_t h = fnv1a(stage);
    h = fnv1a(stage_config_json(ctx.config, stage), h);
    if (stage == "decompose" || stage == "complete") h = fnv1a(tree_digest(ctx.config.dataset_root), h);
    if (stage == "eval" && !ctx.config.reference_root.empty() && fs::is_directory(ctx.config.reference_root)) {
        h = fnv1a(tree_digest(ctx.config.reference_root), h);
    }
    for (const auto& up : upstream().at(stage)) {
        const std::string fp = read_done(ctx, up);
        if (fp.empty()) {
            throw Error(ErrorCode::MissingFile, "stage " + stage + " needs the output of " + up + ", which has not completed");
        }
        h = fnv1a(fp, h);
    }
    return hex(h);
}

StageReport execute(const Context& ctx, const std::string& stage, bool force, PipelineReport* full) {
    StageReport rep;
    rep.name = stage;
    try {
        rep.fingerprint = fingerprint(ctx, stage);
        if (!force && read_done(ctx, stage) == rep.fingerprint) {
            rep.reused = true;
            ctx.log(stage + ": up to date, reusing " + ctx.dir(stage).string());
            if (stage == "eval" && full) {
                // Metrics are cheap to reload for the report.
                const auto j = ordered_json::parse(slurp(ctx.dir("eval") / "metrics.json"));
                for (const auto& [name, m] : j.items()) {
                    MetricsReport r;
                    r.chamfer = m.at("chamfer").get<double>();
                    r.range_mae = m.at("range_mae").get<double>();
                    r.matched_rays = m.at("matched_rays").get<std::size_t>();
                    r.true_positive = m.at("true_positive").get<std::size_t>();
                    r.false_positive = m.at("false_positive").get<std::size_t>();
                    r.true_negative = m.at("true_negative").get<std::size_t>();
                    r.false_negative = m.at("false_negative").get<std::size_t>();
                    full->metrics[name] = r;
                }
            }
            return rep;
        }
        const fs::path dir = ctx.dir(stage);
        fs::remove_all(dir);
        fs::create_directories(dir);
        ctx.log(stage + ": running");
        if (stage == "decompose") stage_decompose(ctx, rep);
        else if (stage == "complete") stage_complete(ctx, rep);
        else if (stage == "fit-background") stage_fit_background(ctx, rep);
        else if (stage == "fit-vehicles") stage_fit_vehicles(ctx, rep);
        else if (stage == "occupancy") stage_occupancy(ctx, rep);
        else if (stage == "render") stage_render(ctx, rep);
        else if (stage == "eval") stage_eval(ctx, rep, full);
        else throw Error(ErrorCode::InvalidArgument, "unknown stage " + stage);
        spit(dir / ".done", rep.fingerprint + "\n");
    } catch (const Error& e) {
        if (e.code() == ErrorCode::StageFailed) throw;
        throw Error(ErrorCode::StageFailed, "[" + stage + "] " + e.what());
    } catch (const std::exception& e) {
        throw Error(ErrorCode::StageFailed, "[" + stage + "] " + e.what());
    }
    return rep;
}

LogFn default_log(const LogFn& log) {
    if (log) return log;
    return [](const std::string& msg) { std::cerr << "[roadsynth] " << msg << std::endl; };
}

} // namespace

SceneGraph load_scene_graph(const PipelineConfig& config) { return assemble_scene(config.output_root, config.seed); }

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"decompose", "complete", "fit-background", "fit-vehicles",
                                                "occupancy", "render",   "eval"};
    return names;
}

PipelineReport run_pipeline(const PipelineConfig& config, const RunOptions& opt) {
    validate_config(config, true);
    const DirLock lock(config.output_root);
    const Context ctx{config, config.output_root, default_log(opt.log)};
    PipelineReport report;
    for (const auto& stage : stage_names()) report.stages.push_back(execute(ctx, stage, opt.force, &report));
    return report;
}

StageReport run_stage(const PipelineConfig& config, const std::string& stage, const RunOptions& opt) {
    if (!upstream().count(stage)) throw Error(ErrorCode::InvalidArgument, "unknown stage " + stage);
    validate_config(config, true);
    const DirLock lock(config.output_root);
    const Context ctx{config, config.output_root, default_log(opt.log)};
    return execute(ctx, stage, opt.force, nullptr);
}

std::string metrics_to_json(const MetricsReport& m) {
    ordered_json frames = ordered_json::array();
    for (const auto& f : m.frames) {
        frames.push_back({{"frame_id", f.frame_id},
                          {"rendered_points", f.rendered_points},
                          {"reference_points", f.reference_points},
                          {"matched_rays", f.matched_rays}});
    }
    return ordered_json{{"chamfer", m.chamfer},
                        {"range_mae", m.range_mae},
                        {"matched_rays", m.matched_rays},
                        {"true_positive", m.true_positive},
                        {"false_positive", m.false_positive},
                        {"true_negative", m.true_negative},
                        {"false_negative", m.false_negative},
                        {"drop_accuracy", m.drop_accuracy()},
                        {"drop_precision", m.drop_precision()},
                        {"drop_recall", m.drop_recall()},
                        {"frames", frames}}
        .dump();
}

std::string report_to_json(const PipelineReport& report) {
    ordered_json stages = ordered_json::array();
    for (const auto& s : report.stages) {
        ordered_json stats = ordered_json::object();
        for (const auto& [k, v] : s.stats) stats[k] = v;
        stages.push_back({{"stage", s.name}, {"reused", s.reused}, {"fingerprint", s.fingerprint}, {"stats", stats}});
    }
    ordered_json metrics = ordered_json::object();
    for (const auto& [name, m] : report.metrics) metrics[name] = ordered_json::parse(metrics_to_json(m));
    return ordered_json{{"status", "ok"}, {"stages", stages}, {"metrics", metrics}}.dump(2);
}

std::string tree_digest(const fs::path& root) {
    if (!fs::is_directory(root)) throw Error(ErrorCode::MissingFile, root.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = kFnvOffset;
    for (const auto& rel : files) {
        if (rel.filename() == ".lock") continue;
        h = fnv1a(rel.generic_string(), h);
        h = fnv1a(std::string_view("\0", 1), h);
        h = fnv1a(slurp(root / rel), h);
    }
    return hex(h);
}

} // namespace roadsynth
