#include "roadsynth/error.hpp"
#include "roadsynth/kdtree.hpp"
#include "roadsynth/render.hpp"
#include "roadsynth/rng.hpp"
#include "roadsynth/synth.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace roadsynth;

namespace {

OccupancyGrid full_occupancy(const Aabb& box, double voxel) {
    const Vec3 ext = box.extent() / voxel;
    OccupancyGrid g(box.lo, voxel,
                    {static_cast<std::uint32_t>(std::ceil(ext.x())), static_cast<std::uint32_t>(std::ceil(ext.y())),
                     static_cast<std::uint32_t>(std::ceil(ext.z()))});
    for (std::uint32_t k = 0; k < g.dims()[2]; ++k)
        for (std::uint32_t j = 0; j < g.dims()[1]; ++j)
            for (std::uint32_t i = 0; i < g.dims()[0]; ++i) g.set(i, j, k);
    return g;
}

SensorModel small_sensor(const RigidTransform& pose) {
    SensorModel s;
    s.pose = pose;
    s.channels = 16;
    s.vertical_fov_min_deg = -30.0;
    s.vertical_fov_max_deg = 5.0;
    s.horizontal_fov_min_deg = -40.0;
    s.horizontal_fov_max_deg = 40.0;
    s.horizontal_resolution_deg = 1.0;
    s.max_range = 60.0;
    return s;
}

/// Ground plane plus one car sitting at `car_center`, exact fields.
SceneGraph ground_and_car(const ToyCar& car, const OrientedBox& box_world) {
    SceneGraph scene;
    const Aabb bounds{Vec3(-30, -30, -1), Vec3(40, 30, 1)};
    scene.background = analytic_ground_field(bounds, 0.2, 0.8);
    scene.occupancy = full_occupancy({Vec3(-30, -30, -1), Vec3(40, 30, 3)}, 0.4);
    scene.vehicles[car.track_id] = {analytic_body_field(car, 0.05, 0.2), car.size};
    TrackState ts{car.track_id, box_world, compose(box_world.pose().inverse(), RigidTransform::identity())};
    scene.timeline[0].push_back(ts);
    return scene;
}

} // namespace

TEST(Composite, Examples) {
    const std::vector<Candidate> a{{10.0, 0.1, -1}, {8.0, 0.2, 3}};
    EXPECT_DOUBLE_EQ(composite(a)->range, 8.0);
    EXPECT_EQ(composite(a)->source, 3);
    const std::vector<Candidate> b{{10.0, 0.9, -1}, {8.0, 0.6, 3}};
    EXPECT_FALSE(composite(b));
    const std::vector<Candidate> c{{12.0, 0.4, -1}, {6.0, 0.6, 3}};
    EXPECT_DOUBLE_EQ(composite(c)->range, 12.0);
    const std::vector<Candidate> at_threshold{{7.0, 0.5, -1}};
    EXPECT_TRUE(composite(at_threshold));
    const std::vector<Candidate> no_range{{std::nullopt, 0.0, -1}};
    EXPECT_FALSE(composite(no_range));
}

TEST(SubstituteMissing, Examples) {
    const std::vector<TrackId> tracks{1, 2, 3};
    const std::vector<TrackId> all{1, 2, 3};
    EXPECT_TRUE(substitute_missing(tracks, all, 5).empty());
    const std::vector<TrackId> one{2};
    const auto m = substitute_missing(tracks, one, 5);
    EXPECT_EQ(m.size(), 2u);
    EXPECT_EQ(m.at(1), 2);
    EXPECT_EQ(m.at(3), 2);
    const std::vector<TrackId> two{1, 2};
    const std::vector<TrackId> many{1, 2, 3, 4, 5, 6, 7, 8};
    EXPECT_EQ(substitute_missing(many, two, 17), substitute_missing(many, two, 17));
    try {
        substitute_missing(tracks, {}, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoFields);
    }
}

TEST(SubstituteMissing, DonorsAreDrawnUniformly) {
    std::vector<TrackId> tracks;
    for (TrackId t = 100; t < 4100; ++t) tracks.push_back(t);
    const std::vector<TrackId> donors{1, 2, 3, 4};
    std::map<TrackId, int> counts;
    for (const auto& [_, d] : substitute_missing(tracks, donors, 3)) ++counts[d];
    for (TrackId d : donors) EXPECT_NEAR(counts[d], 1000, 120);
}

TEST(RenderFrame, FlatGroundMatchesAnalyticPlane) {
    SceneGraph scene;
    scene.background = analytic_ground_field({Vec3(-40, -40, -1), Vec3(40, 40, 1)}, 0.2, 0.8);
    scene.occupancy = full_occupancy({Vec3(-40, -40, -1), Vec3(40, 40, 3)}, 0.4);
    const SensorModel sensor = small_sensor(roadside_pose(Vec3(0, 0, 6), 0.0, 20.0));
    const RenderedFrame f = render_frame(scene, sensor, 0);
    ASSERT_EQ(f.ray_count(), sensor.ray_count());
    EXPECT_EQ(f.points.size() + std::count(f.dropped.begin(), f.dropped.end(), 1), f.ray_count());
    std::size_t expect_hits = 0;
    for (std::size_t i = 0; i < sensor.ray_count(); ++i) {
        const Vec3 d = sensor.pose.apply_direction(sensor.direction(i));
        if (d.z() < 0 && -6.0 / d.z() <= 60.0) {
            const Vec3 p = sensor.pose.translation() - 6.0 / d.z() * d;
            if (std::abs(p.x()) < 39.5 && std::abs(p.y()) < 39.5) ++expect_hits;
        }
    }
    EXPECT_EQ(f.points.size(), expect_hits);
    for (std::size_t k = 0; k < f.points.size(); ++k) {
        const Vec3 d = sensor.pose.apply_direction(sensor.direction(f.ray_index[k]));
        const double analytic = -6.0 / d.z();
        EXPECT_LT(std::abs(f.points[k].norm() - analytic), 2 * 0.2);
        EXPECT_EQ(f.labels[k], kBackgroundLabel);
    }
}

TEST(RenderFrame, CarOccludesWall) {
    SceneGraph scene;
    // Wall x = 12 facing the sensor.
    scene.background = SdfGridField(GridLattice::covering({Vec3(-2, -10, -1), Vec3(14, 10, 6)}, 0.2), 0.8);
    scene.background.fill_sdf([](const Vec3& p) { return 12.0 - p.x(); });
    for (auto& v : scene.background.drop_logits()) v = -10.0;
    scene.occupancy = full_occupancy({Vec3(-2, -10, -1), Vec3(14, 10, 6)}, 0.4);
    ToyCar car;
    car.track_id = 5;
    car.clearance = 0.0;
    const OrientedBox box{Vec3(6, 0, 0.8), car.size, 0.3};
    scene.vehicles[5] = {analytic_body_field(car, 0.05, 0.2), car.size};
    scene.timeline[0].push_back({5, box, box.pose().inverse()});

    const SensorModel sensor = small_sensor(RigidTransform::translation({0, 0, 1.0}));
    const RenderedFrame f = render_frame(scene, sensor, 0);
    std::size_t car_points = 0;
    for (std::size_t k = 0; k < f.points.size(); ++k) {
        const Ray ray{sensor.pose.translation(), sensor.pose.apply_direction(sensor.direction(f.ray_index[k])), 60.0};
        // Brute-force min over the two analytic surfaces.
        double best = std::numeric_limits<double>::infinity();
        TrackId who = kBackgroundLabel;
        if (ray.direction.x() > 0) best = (12.0 - ray.origin.x()) / ray.direction.x();
        if (auto iv = ray_box_intersect(ray, box); iv && iv->t_near < best) {
            best = iv->t_near;
            who = 5;
        }
        const double margin = 1e-3;
        const auto iv = ray_box_intersect(ray, box.inflated(-margin));
        const auto iv_out = ray_box_intersect(ray, box.inflated(margin));
        const bool ambiguous = static_cast<bool>(iv_out) != static_cast<bool>(iv);
        if (!ambiguous) {
            EXPECT_EQ(f.labels[k], who) << "ray " << f.ray_index[k];
            EXPECT_NEAR(f.points[k].norm(), best, 1e-3);
        }
        if (f.labels[k] == 5) {
            ++car_points;
            EXPECT_TRUE(box.contains(sensor.pose.apply(f.points[k]), 0.1));
        }
    }
    EXPECT_GT(car_points, 20u);
}

TEST(RenderFrame, SkyIsDropped) {
    SceneGraph scene;
    scene.background = analytic_ground_field({Vec3(-40, -40, -1), Vec3(40, 40, 1)}, 0.2, 0.8);
    scene.occupancy = full_occupancy({Vec3(-40, -40, -1), Vec3(40, 40, 3)}, 0.4);
    SensorModel sensor = small_sensor(RigidTransform::translation({0, 0, 6}));
    sensor.vertical_fov_min_deg = 1.0;
    sensor.vertical_fov_max_deg = 30.0;
    const RenderedFrame f = render_frame(scene, sensor, 0);
    EXPECT_TRUE(f.points.empty());
    EXPECT_EQ(static_cast<std::size_t>(std::count(f.dropped.begin(), f.dropped.end(), 1)), sensor.ray_count());
}

TEST(RenderFrame, UnobservedGroundIsDropped) {
    SceneGraph scene;
    scene.background = analytic_ground_field({Vec3(-40, -40, -1), Vec3(40, 40, 1)}, 0.2, 0.8);
    // Only the half-space x < 10 was ever observed.
    scene.occupancy = full_occupancy({Vec3(-40, -40, -1), Vec3(10, 40, 3)}, 0.4);
    const SensorModel sensor = small_sensor(roadside_pose(Vec3(0, 0, 6), 0.0, 20.0));
    const RenderedFrame f = render_frame(scene, sensor, 0);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < sensor.ray_count(); ++i) {
        const Vec3 d = sensor.pose.apply_direction(sensor.direction(i));
        if (d.z() >= 0) continue;
        const Vec3 p = sensor.pose.translation() - 6.0 / d.z() * d;
        if (std::abs(p.x() - 10.0) < 0.05) continue;
        ++checked;
        EXPECT_EQ(f.dropped[i] == 0, p.x() < 10.0 && p.norm() <= 60.0) << "ray " << i;
    }
    EXPECT_GT(checked, 100u);
    for (const Vec3& p : f.points) EXPECT_TRUE(scene.occupancy.is_observed(sensor.pose.apply(p)));
}

TEST(RenderFrame, ParallelMatchesSerialAndIsDeterministic) {
    ToyCar car;
    car.track_id = 2;
    const OrientedBox box{Vec3(8, 1, 0.8), car.size, 0.5};
    const SceneGraph scene = ground_and_car(car, box);
    const SensorModel sensor = small_sensor(roadside_pose(Vec3(0, 0, 5), 0.0, 15.0));
    const RenderedFrame a = render_frame(scene, sensor, 0);
    const RenderedFrame b = render_frame_serial(scene, sensor, 0);
    EXPECT_TRUE(a == b);
    EXPECT_TRUE(render_frame(scene, sensor, 0) == a);
    EXPECT_GT(std::count(a.labels.begin(), a.labels.end(), 2), 10);
}

TEST(RenderFrame, ZeroFieldOfViewIsEmpty) {
    SceneGraph scene;
    scene.background = analytic_ground_field({Vec3(-5, -5, -1), Vec3(5, 5, 1)}, 0.5, 1.0);
    scene.occupancy = full_occupancy({Vec3(-5, -5, -1), Vec3(5, 5, 3)}, 0.5);
    SensorModel sensor;
    sensor.horizontal_fov_min_deg = 0.0;
    sensor.horizontal_fov_max_deg = 0.0;
    const RenderedFrame f = render_frame(scene, sensor, 0);
    EXPECT_EQ(f.ray_count(), 0u);
    EXPECT_TRUE(f.points.empty());
}

TEST(RenderFrame, CompositeEqualsMinOverNonDroppedCandidates) {
    ToyCar car;
    car.track_id = 3;
    const OrientedBox box{Vec3(9, -1, 0.8), car.size, -0.4};
    const SceneGraph scene = ground_and_car(car, box);
    const SensorModel sensor = small_sensor(roadside_pose(Vec3(0, 2, 6), 0.0, 20.0));
    const auto& tracks = scene.timeline.at(0);
    for (std::size_t i = 0; i < sensor.ray_count(); ++i) {
        const Ray ray{sensor.pose.translation(), sensor.pose.apply_direction(sensor.direction(i)), sensor.max_range};
        const RayRender rr = render_ray(scene, tracks, ray);
        std::optional<double> best;
        for (const auto& c : rr.candidates) {
            if (c.range && c.drop_probability <= 0.5 && (!best || *c.range < *best)) best = c.range;
        }
        ASSERT_EQ(rr.result.has_value(), best.has_value());
        if (best) EXPECT_EQ(rr.result->range, *best);
    }
}

TEST(VehicleCandidate, CornerClipWithoutSurfaceIsDrop) {
    ToyCar car;
    car.track_id = 1;
    const OrientedBox box{Vec3(10, 0, 0.8), car.size, 0.0};
    const VehicleModel model{analytic_body_field(car, 0.05, 0.2), car.size};
    const TrackState ts{1, box, box.pose().inverse()};
    // Passes through the inflated box just under the body (clearance gap).
    const Ray ray = make_ray(Vec3(0, 0, 0.1), Vec3::UnitX(), 50.0);
    const auto iv = ray_box_intersect(ray, box.inflated(0.1));
    ASSERT_TRUE(iv);
    const Candidate c = render_candidate_vehicle(model, ts, ray, *iv);
    EXPECT_FALSE(c.range);
    EXPECT_DOUBLE_EQ(c.drop_probability, 1.0);
}

TEST(VehicleCandidate, IdentityTransformIsDirectTrace) {
    ToyCar car;
    car.track_id = 1;
    const VehicleModel model{analytic_body_field(car, 0.05, 0.2), car.size};
    const OrientedBox box{Vec3::Zero(), car.size, 0.0};
    const TrackState ts{1, box, RigidTransform::identity()};
    const Ray ray = make_ray(Vec3(-6, 0.1, 0.5), Vec3::UnitX(), 50.0);
    const Candidate c = render_candidate_vehicle(model, ts, ray, *ray_box_intersect(ray, box.inflated(0.1)));
    const auto direct = sphere_trace(model.field, ray);
    ASSERT_TRUE(c.range && direct);
    EXPECT_DOUBLE_EQ(*c.range, direct->t);
    EXPECT_LT(c.drop_probability, 0.5);
    EXPECT_NEAR(*c.range, 6.0 - 2.25, 1e-6);
}

TEST(VehicleCandidate, DonorIsScaledToRecipientBox) {
    ToyCar donor;
    donor.track_id = 1;
    donor.clearance = 0.0;
    const VehicleModel model{analytic_body_field(donor, 0.05, 0.2), donor.size};
    const OrientedBox recipient{Vec3(10, 0, 1.0), Vec3(6.0, 2.4, 2.0), 0.0};
    const TrackState ts{7, recipient, recipient.pose().inverse()};
    const Ray front = make_ray(Vec3(0, 0.2, 1.0), Vec3::UnitX(), 50.0);
    const Candidate c = render_candidate_vehicle(model, ts, front, *ray_box_intersect(front, recipient.inflated(0.1)));
    ASSERT_TRUE(c.range);
    EXPECT_NEAR(*c.range, 7.0, 1e-3);
    const Ray side = make_ray(Vec3(10.5, -6, 1.2), Vec3::UnitY(), 50.0);
    const Candidate s = render_candidate_vehicle(model, ts, side, *ray_box_intersect(side, recipient.inflated(0.1)));
    ASSERT_TRUE(s.range);
    EXPECT_NEAR(*s.range, 6.0 - 1.2, 1e-3);
}

TEST(RenderFrame, RigidConsistencyAcrossPoses) {
    // Static scene: ground plus a parked car, rendered from two poses.
    ToyCar car;
    car.track_id = 4;
    const OrientedBox box{Vec3(10, 2, 0.8), car.size, 0.2};
    const SceneGraph scene = ground_and_car(car, box);
    SensorModel p = small_sensor(roadside_pose(Vec3(0, 0, 6), 10.0, 20.0));
    SensorModel q = small_sensor(roadside_pose(Vec3(1.0, -0.5, 6.3), 5.0, 22.0));
    p.horizontal_resolution_deg = q.horizontal_resolution_deg = 0.25;
    p.channels = q.channels = 48;
    const RenderedFrame fp = render_frame(scene, p, 0);
    const RenderedFrame fq = render_frame(scene, q, 0);
    std::vector<Vec3> wp, wq;
    for (const Vec3& x : fp.points) wp.push_back(p.pose.apply(x));
    for (const Vec3& x : fq.points) wq.push_back(q.pose.apply(x));
    // Restrict to the common footprint on the ground plus the car.
    const auto in_common = [&](const Vec3& w) { return w.x() > 8 && w.x() < 20 && std::abs(w.y()) < 4; };
    std::vector<Vec3> cp, cq;
    for (const Vec3& w : wp) if (in_common(w)) cp.push_back(w);
    for (const Vec3& w : wq) if (in_common(w)) cq.push_back(w);
    ASSERT_GT(cp.size(), 500u);
    ASSERT_GT(cq.size(), 500u);
    const KdTree tp(cp), tq(cq);
    double ab = 0.0, ba = 0.0;
    for (const Vec3& x : cp) ab += std::sqrt(tq.nearest(x).dist_sq);
    for (const Vec3& x : cq) ba += std::sqrt(tp.nearest(x).dist_sq);
    const double chamfer = 0.5 * (ab / cp.size() + ba / cq.size());
    EXPECT_LT(chamfer, 3 * 0.2);
}
