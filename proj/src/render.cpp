#include "roadsynth/render.hpp"

#include "roadsynth/error.hpp"
#include "roadsynth/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace roadsynth {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kDropThreshold = 0.5;
} // namespace

bool SensorModel::is_valid() const {
    return channels >= 1 && vertical_fov_min_deg <= vertical_fov_max_deg &&
           horizontal_fov_min_deg <= horizontal_fov_max_deg && horizontal_resolution_deg > 0.0 && max_range > 0.0 &&
           pose.is_valid(1e-6);
}

std::size_t SensorModel::azimuth_steps() const {
    const double span = horizontal_fov_max_deg - horizontal_fov_min_deg;
    return static_cast<std::size_t>(std::llround(std::max(0.0, span) / horizontal_resolution_deg));
}

Vec3 SensorModel::direction(std::size_t index) const {
    const std::size_t n_az = azimuth_steps();
    const std::size_t ch = index / n_az;
    const std::size_t az = index % n_az;
    const double el = channels > 1 ? vertical_fov_min_deg + (vertical_fov_max_deg - vertical_fov_min_deg) *
                                                                static_cast<double>(ch) / (channels - 1)
                                   : 0.5 * (vertical_fov_min_deg + vertical_fov_max_deg);
    const double a = horizontal_fov_min_deg + horizontal_resolution_deg * static_cast<double>(az);
    const double ce = std::cos(el * kDeg);
    return {ce * std::cos(a * kDeg), ce * std::sin(a * kDeg), std::sin(el * kDeg)};
}

std::optional<Measurement> composite(std::span<const Candidate> candidates) {
    std::optional<Measurement> best;
    for (const Candidate& c : candidates) {
        if (c.drop_probability > kDropThreshold || !c.range) continue;
        if (!best || *c.range < best->range) best = Measurement{*c.range, c.source};
    }
    return best;
}

const VehicleModel* SceneGraph::model_for(TrackId track) const {
    if (auto it = vehicles.find(track); it != vehicles.end()) return &it->second;
    if (auto s = substitutions.find(track); s != substitutions.end()) {
        if (auto it = vehicles.find(s->second); it != vehicles.end()) return &it->second;
    }
    return nullptr;
}

Candidate render_candidate_vehicle(const VehicleModel& model, const TrackState& state, const Ray& ray,
                                   const Interval& box_interval, const RenderOptions& opt) {
    Candidate out;
    out.source = state.track_id;
    const Vec3 scale = model.size.cwiseQuotient(state.box.size);
    const Vec3 o = state.world_to_canonical.apply(ray.origin).cwiseProduct(scale);
    const Vec3 d = state.world_to_canonical.apply_direction(ray.direction).cwiseProduct(scale);
    const auto hit = trace_segment(model.field, o, d, box_interval.t_near, box_interval.t_far, opt.trace);
    if (!hit) return out;
    out.range = hit->t;
    out.drop_probability = model.field.query_drop(hit->point);
    return out;
}

Candidate render_candidate_background(const SdfGridField& field, const OccupancyGrid& occupancy, const Ray& ray,
                                      const RenderOptions& opt) {
    Candidate out;
    TraceOptions topt = opt.trace;
    topt.blind_step = 0.5 * occupancy.voxel_size();
    const auto hit = trace_segment(field, ray.origin, ray.direction, 0.0, ray.max_range, topt,
                                   [&](const Vec3& p) { return occupancy.is_observed(p); });
    if (!hit) return out;
    const ConstrainedSample cs =
        constrain_background_sample(occupancy, hit->point, field.query_sdf(hit->point), field.query_drop(hit->point));
    if (!cs.surface_allowed) return out;
    out.range = hit->t;
    out.drop_probability = cs.drop_probability;
    return out;
}

std::map<TrackId, TrackId> substitute_missing(std::span<const TrackId> tracks, std::span<const TrackId> fitted,
                                              std::uint64_t seed) {
    std::vector<TrackId> donors(fitted.begin(), fitted.end());
    std::sort(donors.begin(), donors.end());
    donors.erase(std::unique(donors.begin(), donors.end()), donors.end());
    std::vector<TrackId> missing;
    for (TrackId t : tracks) {
        if (!std::binary_search(donors.begin(), donors.end(), t)) missing.push_back(t);
    }
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::map<TrackId, TrackId> out;
    if (missing.empty()) return out;
    if (donors.empty()) throw Error(ErrorCode::NoFields, "no reconstructed vehicle field to substitute from");
    Rng rng(seed, 0x5b5);
    for (TrackId t : missing) out[t] = donors[rng.index(donors.size())];
    return out;
}

RayRender render_ray(const SceneGraph& scene, const std::vector<TrackState>& tracks, const Ray& world_ray,
                     const RenderOptions& opt) {
    RayRender rr;
    rr.candidates.push_back(render_candidate_background(scene.background, scene.occupancy, world_ray, opt));
    for (const TrackState& ts : tracks) {
        const auto interval = ray_box_intersect(world_ray, ts.box.inflated(opt.box_margin));
        if (!interval) continue;
        const VehicleModel* model = scene.model_for(ts.track_id);
        if (model == nullptr) continue;
        rr.candidates.push_back(render_candidate_vehicle(*model, ts, world_ray, *interval, opt));
    }
    rr.result = composite(rr.candidates);
    return rr;
}

namespace {

RenderedFrame assemble(const SceneGraph& scene, const SensorModel& sensor, std::int64_t frame_id,
                       const std::vector<std::optional<Measurement>>& results) {
    RenderedFrame out;
    out.frame_id = frame_id;
    out.dropped.assign(results.size(), 1);
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (!results[i]) continue;
        out.dropped[i] = 0;
        out.points.push_back(sensor.direction(i) * results[i]->range);
        out.labels.push_back(results[i]->source);
        out.ray_index.push_back(static_cast<std::uint32_t>(i));
    }
    const RigidTransform world_to_sensor = sensor.pose.inverse();
    if (auto it = scene.timeline.find(frame_id); it != scene.timeline.end()) {
        for (const TrackState& ts : it->second) {
            out.boxes.push_back({ts.track_id, "car", transform_box(world_to_sensor, ts.box)});
            out.box_rotations.push_back(world_to_sensor.rotation() * ts.box.pose().rotation());
        }
    }
    return out;
}

const std::vector<TrackState>& tracks_at(const SceneGraph& scene, std::int64_t frame_id) {
    static const std::vector<TrackState> kNone;
    auto it = scene.timeline.find(frame_id);
    return it != scene.timeline.end() ? it->second : kNone;
}

std::optional<Measurement> render_pattern_ray(const SceneGraph& scene, const std::vector<TrackState>& tracks,
                                              const SensorModel& sensor, std::size_t i, const RenderOptions& opt) {
    const Ray ray{sensor.pose.translation(), sensor.pose.apply_direction(sensor.direction(i)), sensor.max_range};
    auto result = render_ray(scene, tracks, ray, opt).result;
    if (result && result->range > sensor.max_range) result.reset();
    return result;
}

} // namespace

RenderedFrame render_frame(const SceneGraph& scene, const SensorModel& sensor, std::int64_t frame_id,
                           const RenderOptions& opt) {
    if (!sensor.is_valid()) throw Error(ErrorCode::InvalidArgument, "invalid sensor model");
    const auto& tracks = tracks_at(scene, frame_id);
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(sensor.ray_count());
    std::vector<std::optional<Measurement>> results(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 256)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        results[static_cast<std::size_t>(i)] = render_pattern_ray(scene, tracks, sensor, static_cast<std::size_t>(i), opt);
    }
    return assemble(scene, sensor, frame_id, results);
}

RenderedFrame render_frame_serial(const SceneGraph& scene, const SensorModel& sensor, std::int64_t frame_id,
                                  const RenderOptions& opt) {
    if (!sensor.is_valid()) throw Error(ErrorCode::InvalidArgument, "invalid sensor model");
    const auto& tracks = tracks_at(scene, frame_id);
    std::vector<std::optional<Measurement>> results(sensor.ray_count());
    for (std::size_t i = 0; i < results.size(); ++i) results[i] = render_pattern_ray(scene, tracks, sensor, i, opt);
    return assemble(scene, sensor, frame_id, results);
}

} // namespace roadsynth
