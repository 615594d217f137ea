#include "roadsynth/synth.hpp"

#include "roadsynth/rng.hpp"

#include <cmath>
#include <numbers>

namespace roadsynth {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
} // namespace

ToyScene ToyScene::standard() {
    ToyScene s;
    s.cars.push_back({1, Vec3(4.5, 1.9, 1.6), 0.25, Vec3(-7.0, 3.5, 0.8), Vec3(14.0, 0.0, 0.0), 0.0});
    s.cars.push_back({2, Vec3(4.2, 1.8, 1.5), 0.25, Vec3(6.0, -3.5, 0.75), Vec3(2.0, 0.0, 0.0), 0.0});
    s.ego_sensor.channels = 96;
    s.ego_sensor.vertical_fov_min_deg = -30.0;
    s.ego_sensor.vertical_fov_max_deg = 0.0;
    s.ego_sensor.horizontal_fov_min_deg = -180.0;
    s.ego_sensor.horizontal_fov_max_deg = 180.0;
    s.ego_sensor.horizontal_resolution_deg = 0.25;
    s.ego_sensor.max_range = 30.0;
    return s;
}

OrientedBox ToyScene::car_box(std::size_t car, std::size_t frame) const {
    const ToyCar& c = cars.at(car);
    return {c.start + c.velocity * timestamp(frame), c.size, c.yaw};
}

OrientedBox ToyScene::car_body(std::size_t car, std::size_t frame) const {
    OrientedBox b = car_box(car, frame);
    const double clearance = cars.at(car).clearance;
    b.size.z() -= clearance;
    b.center.z() += 0.5 * clearance;
    return b;
}

RigidTransform ToyScene::ego_pose(std::size_t frame) const {
    const Vec3 p = ego_start + ego_velocity * timestamp(frame) + Vec3(0, 0, ego_height);
    return RigidTransform::rot_z(std::atan2(ego_velocity.y(), ego_velocity.x()), p);
}

std::optional<AnalyticHit> raycast_toy(const ToyScene& scene, std::size_t frame, const Ray& ray) {
    std::optional<AnalyticHit> best;
    if (ray.direction.z() < 0.0 && ray.origin.z() > 0.0) {
        const double t = -ray.origin.z() / ray.direction.z();
        if (t <= ray.max_range) best = AnalyticHit{t, kBackgroundLabel};
    }
    for (std::size_t c = 0; c < scene.cars.size(); ++c) {
        const auto iv = ray_box_intersect(ray, scene.car_body(c, frame));
        if (!iv) continue;
        if (!best || iv->t_near < best->range) best = AnalyticHit{iv->t_near, scene.cars[c].track_id};
    }
    return best;
}

Fragment generate_toy_fragment(const ToyScene& scene, const std::string& name) {
    Fragment frag;
    frag.name = name;
    for (std::size_t f = 0; f < scene.frames; ++f) {
        Frame fr;
        fr.frame_id = static_cast<std::int64_t>(f);
        fr.timestamp = scene.timestamp(f);
        fr.sensor_pose = scene.ego_pose(f);
        Rng rng(scene.seed, f);
        const std::size_t n = scene.ego_sensor.ray_count();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 d_local = scene.ego_sensor.direction(i);
            const Ray ray{fr.sensor_pose.translation(), fr.sensor_pose.apply_direction(d_local),
                          scene.ego_sensor.max_range};
            const auto hit = raycast_toy(scene, f, ray);
            if (!hit) continue;
            double r = hit->range;
            if (scene.range_noise > 0.0) r += scene.range_noise * (2.0 * rng.uniform() - 1.0);
            const Vec3 p = d_local * r;
            fr.points.push_back(round_to_float(p));
        }
        for (std::size_t c = 0; c < scene.cars.size(); ++c) {
            fr.boxes.push_back({scene.cars[c].track_id, "car", scene.car_box(c, f)});
        }
        frag.frames.push_back(std::move(fr));
    }
    return frag;
}

RenderedFrame render_reference(const ToyScene& scene, const SensorModel& sensor, std::size_t frame) {
    RenderedFrame out;
    out.frame_id = static_cast<std::int64_t>(frame);
    const std::size_t n = sensor.ray_count();
    out.dropped.assign(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 d_local = sensor.direction(i);
        const Ray ray{sensor.pose.translation(), sensor.pose.apply_direction(d_local), sensor.max_range};
        const auto hit = raycast_toy(scene, frame, ray);
        if (!hit) continue;
        out.dropped[i] = 0;
        out.points.push_back(d_local * hit->range);
        out.labels.push_back(hit->source);
        out.ray_index.push_back(static_cast<std::uint32_t>(i));
    }
    const RigidTransform world_to_sensor = sensor.pose.inverse();
    for (std::size_t c = 0; c < scene.cars.size(); ++c) {
        const OrientedBox box = scene.car_box(c, frame);
        out.boxes.push_back({scene.cars[c].track_id, "car", transform_box(world_to_sensor, box)});
        out.box_rotations.push_back(world_to_sensor.rotation() * box.pose().rotation());
    }
    return out;
}

double box_sdf(const Vec3& half_size, const Vec3& p) {
    const Vec3 q = p.cwiseAbs() - half_size;
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    return outside + inside;
}

SdfGridField analytic_body_field(const ToyCar& car, double voxel, double margin) {
    const Vec3 half = 0.5 * car.size;
    const Aabb bounds{-half - Vec3::Constant(margin), half + Vec3::Constant(margin)};
    SdfGridField f(GridLattice::covering(bounds, voxel), 4.0 * voxel);
    const Vec3 body_half(half.x(), half.y(), half.z() - 0.5 * car.clearance);
    const Vec3 body_center(0.0, 0.0, 0.5 * car.clearance);
    f.fill_sdf([&](const Vec3& p) { return box_sdf(body_half, p - body_center); });
    for (auto& v : f.drop_logits()) v = -10.0;
    f.snap_to_float();
    return f;
}

SdfGridField analytic_ground_field(const Aabb& bounds, double voxel, double truncation) {
    SdfGridField f(GridLattice::covering(bounds, voxel), truncation);
    f.fill_sdf([](const Vec3& p) { return p.z(); });
    for (auto& v : f.drop_logits()) v = -10.0;
    f.snap_to_float();
    return f;
}

RigidTransform roadside_pose(const Vec3& position, double yaw_deg, double pitch_down_deg) {
    const Mat3 r = (Eigen::AngleAxisd(yaw_deg * kDeg, Vec3::UnitZ()) *
                    Eigen::AngleAxisd(pitch_down_deg * kDeg, Vec3::UnitY()))
                       .toRotationMatrix();
    return {r, position};
}

} // namespace roadsynth
