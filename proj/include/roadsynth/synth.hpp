#pragma once

#include "roadsynth/decomp.hpp"
#include "roadsynth/field.hpp"
#include "roadsynth/render.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace roadsynth {

/// Box-shaped car on a straight constant-velocity track. The annotation box
/// reaches the ground; the body starts `clearance` above it.
struct ToyCar {
    TrackId track_id = 1;
    Vec3 size{4.5, 1.9, 1.6};
    double clearance = 0.25;
    Vec3 start = Vec3::Zero(); ///< ground-level box center at frame 0
    Vec3 velocity = Vec3::Zero();
    double yaw = 0.0;
};

/// Ground plane z = 0 plus box cars, observed by a moving vehicle-side sensor.
struct ToyScene {
    std::vector<ToyCar> cars;
    std::size_t frames = 20;
    double dt = 0.1;
    Vec3 ego_start = Vec3::Zero();
    Vec3 ego_velocity{8.0, 0.0, 0.0};
    double ego_height = 2.4;
    SensorModel ego_sensor; ///< pose is replaced per frame
    double range_noise = 0.0;
    std::uint64_t seed = 0;

    /// Two cars in adjacent lanes, one overtaking the ego vehicle and one being
    /// overtaken, so every car face is seen at some frame.
    static ToyScene standard();

    OrientedBox car_box(std::size_t car, std::size_t frame) const;
    OrientedBox car_body(std::size_t car, std::size_t frame) const;
    RigidTransform ego_pose(std::size_t frame) const;
    double timestamp(std::size_t frame) const { return dt * static_cast<double>(frame); }
};

struct AnalyticHit {
    double range = 0.0;
    TrackId source = kBackgroundLabel;
};

/// Nearest intersection with the ground plane or any car body at the frame.
std::optional<AnalyticHit> raycast_toy(const ToyScene& scene, std::size_t frame, const Ray& ray);

/// Vehicle-side capture of the scene; points are rounded to float precision.
Fragment generate_toy_fragment(const ToyScene& scene, const std::string& name = "toy");

/// Ray-cast render of the analytic scene with the given pattern (no occupancy,
/// no drop model).
RenderedFrame render_reference(const ToyScene& scene, const SensorModel& sensor, std::size_t frame);

/// Signed distance to an axis-aligned box centered at the origin.
double box_sdf(const Vec3& half_size, const Vec3& p);

/// Exact grid field of a car body in its canonical box-local frame. Drop logits
/// are strongly negative everywhere.
SdfGridField analytic_body_field(const ToyCar& car, double voxel, double margin);

/// Exact grid field of the plane z = 0 over the given bounds.
SdfGridField analytic_ground_field(const Aabb& bounds, double voxel, double truncation);

/// Roadside sensor at `position` looking along `yaw` and pitched down by
/// `pitch_down_deg`.
RigidTransform roadside_pose(const Vec3& position, double yaw_deg, double pitch_down_deg);

} // namespace roadsynth
