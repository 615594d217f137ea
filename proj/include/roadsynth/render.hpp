#pragma once

#include "roadsynth/decomp.hpp"
#include "roadsynth/field.hpp"
#include "roadsynth/geom.hpp"
#include "roadsynth/occupancy.hpp"
#include "roadsynth/trace.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace roadsynth {

struct SensorModel {
    RigidTransform pose; ///< sensor -> world
    std::size_t channels = 64;
    double vertical_fov_min_deg = -25.0;
    double vertical_fov_max_deg = 15.0;
    double horizontal_fov_min_deg = -180.0;
    double horizontal_fov_max_deg = 180.0;
    double horizontal_resolution_deg = 0.2;
    double max_range = 200.0;

    bool is_valid() const;
    std::size_t azimuth_steps() const;
    std::size_t ray_count() const { return channels * azimuth_steps(); }
    /// Sensor-frame unit direction of pattern ray `index` (channel-major).
    Vec3 direction(std::size_t index) const;
};

inline constexpr TrackId kBackgroundLabel = -1;

/// A per-field measurement proposal for one ray.
struct Candidate {
    std::optional<double> range;
    double drop_probability = 1.0;
    TrackId source = kBackgroundLabel;
};

struct Measurement {
    double range = 0.0;
    TrackId source = kBackgroundLabel;
};

/// Drop when every candidate has p_d > 0.5; otherwise the smallest range
/// among candidates with p_d <= 0.5.
std::optional<Measurement> composite(std::span<const Candidate> candidates);

struct VehicleModel {
    SdfGridField field;
    Vec3 size = Vec3::Ones(); ///< canonical box size the field was fitted for
};

struct TrackState {
    TrackId track_id = 0;
    OrientedBox box;                ///< world frame at this frame
    RigidTransform world_to_canonical;
};

struct SceneGraph {
    SdfGridField background;
    OccupancyGrid occupancy;
    std::map<TrackId, VehicleModel> vehicles;
    std::map<TrackId, TrackId> substitutions; ///< recipient -> donor
    std::map<std::int64_t, std::vector<TrackState>> timeline;

    /// Field used for a track (own or donor); nullptr when unresolved.
    const VehicleModel* model_for(TrackId track) const;
};

struct RenderOptions {
    TraceOptions trace;
    double box_margin = 0.1;
};

/// Traces the ray mapped into canonical space (with per-axis scaling when the
/// model comes from a donor of a different size), restricted to the box
/// interval. No convergence means p_d = 1.
Candidate render_candidate_vehicle(const VehicleModel& model, const TrackState& state, const Ray& ray,
                                   const Interval& box_interval, const RenderOptions& opt = {});

/// Background trace where every sample passes through the visibility constraint.
Candidate render_candidate_background(const SdfGridField& field, const OccupancyGrid& occupancy, const Ray& ray,
                                      const RenderOptions& opt = {});

/// Maps every track without a model to a uniformly drawn donor among the fitted
/// ones. Throws Error(NoFields) when there is no fitted model.
std::map<TrackId, TrackId> substitute_missing(std::span<const TrackId> tracks, std::span<const TrackId> fitted,
                                              std::uint64_t seed);

struct RenderedFrame {
    std::int64_t frame_id = 0;
    std::vector<Vec3> points;             ///< sensor frame
    std::vector<TrackId> labels;          ///< per point
    std::vector<std::uint32_t> ray_index; ///< per point
    std::vector<std::uint8_t> dropped;    ///< per pattern ray
    std::vector<TrackedBox> boxes;        ///< sensor frame
    /// Full sensor-frame rotation of each box; differs from the yaw-only box
    /// when the sensor is pitched or rolled.
    std::vector<Mat3> box_rotations;

    std::size_t ray_count() const { return dropped.size(); }
    bool operator==(const RenderedFrame&) const = default;
};

/// Per-ray result of rendering with every candidate kept (diagnostics, tests).
struct RayRender {
    std::vector<Candidate> candidates;
    std::optional<Measurement> result;
};
RayRender render_ray(const SceneGraph& scene, const std::vector<TrackState>& tracks, const Ray& world_ray,
                     const RenderOptions& opt = {});

/// Renders the full scan pattern; rays are processed in parallel and written by index.
RenderedFrame render_frame(const SceneGraph& scene, const SensorModel& sensor, std::int64_t frame_id,
                           const RenderOptions& opt = {});

/// Single-threaded reference of render_frame.
RenderedFrame render_frame_serial(const SceneGraph& scene, const SensorModel& sensor, std::int64_t frame_id,
                                  const RenderOptions& opt = {});

} // namespace roadsynth
