// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the exit status is nonzero when any criterion fails.
//
//   roadsynth_acceptance [scratch_dir]

#include "roadsynth/config.hpp"
#include "roadsynth/decomp.hpp"
#include "roadsynth/error.hpp"
#include "roadsynth/io.hpp"
#include "roadsynth/loss.hpp"
#include "roadsynth/occupancy.hpp"
#include "roadsynth/pipeline.hpp"
#include "roadsynth/raysample.hpp"
#include "roadsynth/render.hpp"
#include "roadsynth/rng.hpp"
#include "roadsynth/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>

using namespace roadsynth;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::infinity();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

// ------------------------------------------------------------------ shared toy scene

constexpr double kSensorHeight = 6.0;
const Vec3 kRoadsidePosition(8.0, 12.0, kSensorHeight);
constexpr double kRoadsideYaw = -90.0;
constexpr double kRoadsidePitch = 20.0;

PipelineConfig toy_config(const fs::path& root) {
    PipelineConfig c = PipelineConfig::defaults();
    c.dataset_root = root / "data";
    c.output_root = root / "run_a";
    c.seed = 20240;
    SensorConfig& s = c.render.sensors.at(0);
    s.name = "roadside";
    s.position = kRoadsidePosition;
    s.yaw_deg = kRoadsideYaw;
    s.pitch_deg = kRoadsidePitch;
    s.pattern.vertical_fov_max_deg = 5.0;
    s.pattern.horizontal_fov_min_deg = -60.0;
    s.pattern.horizontal_fov_max_deg = 60.0;
    s.pattern.max_range = 60.0;
    c.reference_root = root / "reference";
    return c;
}

struct ToyRun {
    ToyScene scene;
    PipelineConfig config;
    double seconds = 0.0;
    std::vector<RenderedFrame> rendered;
    std::vector<RenderedFrame> reference;
    std::string error;
};

ToyRun run_toy(const fs::path& root) {
    ToyRun run;
    run.scene = ToyScene::standard();
    run.scene.frames = 20;
    run.config = toy_config(root);
    fs::remove_all(root);
    fs::create_directories(root);
    const auto t0 = std::chrono::steady_clock::now();
    write_dataset(run.config.dataset_root, {generate_toy_fragment(run.scene, "toy")});
    const SensorModel sensor = run.config.render.sensors[0].model();
    for (std::size_t f = 0; f < run.scene.frames; ++f) run.reference.push_back(render_reference(run.scene, sensor, f));
    write_rendered(run.config.reference_root / "roadside", sensor, run.reference);
    try {
        RunOptions opt;
        opt.log = [](const std::string& m) { std::cerr << "  [pipeline] " << m << "\n"; };
        run_pipeline(run.config, opt);
        run.rendered = read_rendered(run.config.output_root / "render" / "roadside");
    } catch (const Error& e) {
        run.error = e.what();
    }
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

// ------------------------------------------------------------------ 1

Outcome analytic_cross_view(const ToyRun& run) {
    if (!run.error.empty()) return {false, "pipeline failed: " + run.error};
    if (run.rendered.size() != run.reference.size()) return {false, "rendered frame count differs from reference"};
    const double car_voxel = run.config.vehicles.fit.voxel_size;
    const double ground_voxel = run.config.background.fit.voxel_size;
    std::vector<double> err, car_err;
    for (std::size_t f = 0; f < run.rendered.size(); ++f) {
        const RenderedFrame& r = run.rendered[f];
        const RenderedFrame& g = run.reference[f];
        std::vector<std::ptrdiff_t> slot(r.ray_count(), -1);
        for (std::size_t k = 0; k < r.ray_index.size(); ++k) slot[r.ray_index[k]] = static_cast<std::ptrdiff_t>(k);
        for (std::size_t k = 0; k < g.ray_index.size(); ++k) {
            const double truth = g.points[k].norm();
            const bool car = g.labels[k] != kBackgroundLabel;
            const double voxel = car ? car_voxel : ground_voxel;
            const std::ptrdiff_t s = slot[g.ray_index[k]];
            const double e = s < 0 ? std::numeric_limits<double>::infinity()
                                   : std::abs(r.points[static_cast<std::size_t>(s)].norm() - truth) / voxel;
            err.push_back(e);
            if (car) car_err.push_back(e);
        }
    }
    const double med = median(err);
    const double within3 =
        static_cast<double>(std::count_if(err.begin(), err.end(), [](double e) { return e <= 3.0; })) / err.size();
    const double car_within3 =
        static_cast<double>(std::count_if(car_err.begin(), car_err.end(), [](double e) { return e <= 3.0; })) /
        std::max<std::size_t>(1, car_err.size());
    const bool pass = med < 2.0 && within3 >= 0.95 && run.seconds < 600.0;
    return {pass, fmt("%zu oracle-hit rays over %zu frames: median %.3f voxels (< 2), %.2f%% within 3 voxels (>= 95%%); "
                      "car rays only: median %.3f, %.2f%% within 3; runtime %.1f s (< 600)",
                      err.size(), run.rendered.size(), med, 100.0 * within3, median(car_err), 100.0 * car_within3,
                      run.seconds)};
}

// ------------------------------------------------------------------ 2

SceneGraph analytic_scene(const ToyScene& scene, const Vec3& sensor_position, double max_range) {
    SceneGraph g;
    const double reach = max_range + 1.0;
    const Aabb bounds{Vec3(sensor_position.x() - reach, sensor_position.y() - reach, -1.0),
                      Vec3(sensor_position.x() + reach, sensor_position.y() + reach, 1.0)};
    g.background = analytic_ground_field(bounds, 0.2, 0.8);
    const double occ_voxel = 1.0;
    const Vec3 ext = (bounds.extent() + Vec3::Constant(2.0 * occ_voxel)) / occ_voxel;
    OccupancyGrid occ(bounds.lo - Vec3::Constant(occ_voxel), occ_voxel,
                      {static_cast<std::uint32_t>(std::ceil(ext.x())), static_cast<std::uint32_t>(std::ceil(ext.y())),
                       static_cast<std::uint32_t>(std::ceil(ext.z()))});
    for (std::uint32_t k = 0; k < occ.dims()[2]; ++k)
        for (std::uint32_t j = 0; j < occ.dims()[1]; ++j)
            for (std::uint32_t i = 0; i < occ.dims()[0]; ++i) occ.set(i, j, k);
    g.occupancy = std::move(occ);
    for (std::size_t c = 0; c < scene.cars.size(); ++c) {
        const ToyCar& car = scene.cars[c];
        g.vehicles[car.track_id] = VehicleModel{analytic_body_field(car, 0.05, 0.3), car.size};
        const OrientedBox b1 = scene.car_box(c, 0);
        for (std::size_t f = 0; f < scene.frames; ++f) {
            const OrientedBox bt = scene.car_box(c, f);
            g.timeline[static_cast<std::int64_t>(f)].push_back({car.track_id, bt, canonical_local_transform(b1, bt)});
        }
    }
    return g;
}

// Hit identity: -2 drop, -1 ground, otherwise the track id.
std::int64_t identity_of(const std::optional<AnalyticHit>& h) { return h ? h->source : -2; }

Outcome occlusion_exactness(const ToyRun& run) {
    const SensorModel sensor = run.config.render.sensors[0].model();
    const SceneGraph scene = analytic_scene(run.scene, sensor.pose.translation(), sensor.max_range);
    std::size_t total = 0, agree = 0, cars = 0;
    for (std::size_t f = 0; f < run.scene.frames; ++f) {
        const RenderedFrame fr = render_frame(scene, sensor, static_cast<std::int64_t>(f), run.config.render.options);
        std::vector<std::int64_t> got(fr.ray_count(), -2);
        for (std::size_t k = 0; k < fr.ray_index.size(); ++k) got[fr.ray_index[k]] = fr.labels[k];
        for (std::size_t i = 0; i < fr.ray_count(); ++i) {
            const Ray ray{sensor.pose.translation(), sensor.pose.apply_direction(sensor.direction(i)), sensor.max_range};
            const std::int64_t want = identity_of(raycast_toy(run.scene, f, ray));
            ++total;
            agree += got[i] == want;
            cars += want >= 0;
        }
    }

    // The fitted render must follow the compositing rule ray by ray: drop iff
    // every candidate has p_d > 0.5, else the nearest admissible candidate.
    std::size_t checked = 0, consistent = 0;
    if (run.error.empty()) {
        const SceneGraph fitted = load_scene_graph(run.config);
        for (std::size_t f = 0; f < run.rendered.size(); f += 5) {
            const RenderedFrame& fr = run.rendered[f];
            const auto& states = fitted.timeline.at(fr.frame_id);
            std::vector<std::ptrdiff_t> slot(fr.ray_count(), -1);
            for (std::size_t k = 0; k < fr.ray_index.size(); ++k) slot[fr.ray_index[k]] = static_cast<std::ptrdiff_t>(k);
            for (std::size_t i = 0; i < fr.ray_count(); i += 7) {
                const Ray ray{sensor.pose.translation(), sensor.pose.apply_direction(sensor.direction(i)),
                              sensor.max_range};
                const RayRender rr = render_ray(fitted, states, ray, run.config.render.options);
                std::optional<Measurement> best;
                for (const auto& c : rr.candidates) {
                    if (!c.range || c.drop_probability > 0.5) continue;
                    if (!best || *c.range < best->range) best = Measurement{*c.range, c.source};
                }
                bool ok = best.has_value() == (slot[i] >= 0);
                if (ok && best) {
                    const auto k = static_cast<std::size_t>(slot[i]);
                    ok = fr.labels[k] == best->source &&
                         std::abs(fr.points[k].norm() - best->range) <= 1e-6 * std::max(1.0, best->range);
                }
                ++checked;
                consistent += ok;
            }
        }
    }
    const bool pass = total > 0 && agree == total && cars > 0 && checked > 0 && consistent == checked;
    return {pass, fmt("analytic fields: %zu/%zu rays match the min-over-surfaces oracle identity (%zu car rays); "
                      "fitted render: %zu/%zu sampled rays follow the 0.5/min-distance rule",
                      agree, total, cars, consistent, checked)};
}

// ------------------------------------------------------------------ 3

Outcome occupancy_constraint(const ToyRun& run) {
    if (!run.error.empty()) return {false, "pipeline failed: " + run.error};
    const SceneGraph scene = load_scene_graph(run.config);
    SensorModel sky;
    sky.pose = RigidTransform(Mat3::Identity(), kRoadsidePosition);
    sky.channels = 30;
    sky.vertical_fov_min_deg = 1.0;
    sky.vertical_fov_max_deg = 30.0;
    sky.horizontal_fov_min_deg = -180.0;
    sky.horizontal_fov_max_deg = 180.0;
    sky.horizontal_resolution_deg = 0.5;
    sky.max_range = 200.0;
    std::size_t sky_rays = 0, sky_drops = 0;
    for (const std::int64_t f : {0, 10, 19}) {
        const RenderedFrame fr = render_frame(scene, sky, f, run.config.render.options);
        sky_rays += fr.ray_count();
        sky_drops += fr.ray_count() - fr.points.size();
    }
    const SensorModel sensor = run.config.render.sensors[0].model();
    std::size_t bg_points = 0, outside = 0;
    for (const auto& fr : run.rendered) {
        for (std::size_t k = 0; k < fr.points.size(); ++k) {
            if (fr.labels[k] != kBackgroundLabel) continue;
            ++bg_points;
            outside += !scene.occupancy.is_observed(sensor.pose.apply(fr.points[k]));
        }
    }
    const double frac = static_cast<double>(sky_drops) / std::max<std::size_t>(1, sky_rays);
    return {frac >= 0.999 && outside == 0 && bg_points > 0,
            fmt("%zu/%zu above-horizon rays dropped (%.4f%%, >= 99.9%%); %zu of %zu rendered background points "
                "outside the dilated grid (must be 0)",
                sky_drops, sky_rays, 100.0 * frac, outside, bg_points)};
}

// ------------------------------------------------------------------ 4

Outcome eikonal_property() {
    const double radius = 0.6;
    Rng rng(4001);
    std::vector<RaySample> rays;
    for (int i = 0; i < 20000; ++i) {
        Vec3 o;
        do {
            o = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized() * rng.uniform(1.2, 1.9);
        } while (!std::isfinite(o.x()));
        const Vec3 target(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8));
        const Vec3 d = (target - o).normalized();
        const double b = o.dot(d);
        const double disc = b * b - (o.squaredNorm() - radius * radius);
        RaySample s{o, d, std::nullopt};
        if (disc >= 0.0) s.range = -b - std::sqrt(disc);
        rays.push_back(s);
    }
    FitConfig cfg;
    cfg.voxel_size = 0.05;
    cfg.iterations = 600;
    cfg.batch_size = 1024;
    cfg.eikonal_samples = 2048;
    cfg.learning_rate = 2e-3;
    cfg.seed = 4002;
    const Aabb bounds{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
    const SdfGridField field = fit_field(rays, bounds, cfg, LossWeights{});
    const double shell = 2.0 * cfg.voxel_size;
    double sum = 0.0;
    int n = 0;
    while (n < 10000) {
        const Vec3 p = rng.uniform_in(bounds);
        if (std::abs(p.norm() - radius) > shell) continue;
        sum += std::abs(field.query_sdf_gradient(p).norm() - 1.0);
        ++n;
    }
    const double mean = sum / n;
    return {mean < 0.1, fmt("fitted sphere (r = %.2f, voxel %.2f): mean | |grad s| - 1 | = %.4f over %d shell samples "
                            "(|r - R| <= %.2f), bound 0.1",
                            radius, cfg.voxel_size, mean, n, shell)};
}

// ------------------------------------------------------------------ 5

Outcome gradient_check() {
    const Aabb bounds{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
    const GridLattice lattice = GridLattice::covering(bounds, 2.0 / 15.0);
    SdfGridField field(lattice, 0.6);
    field.fill_sdf([](const Vec3& p) { return p.norm() - 0.55; });
    Rng rng(5001);
    for (auto& v : field.sdf()) v += rng.uniform(-0.01, 0.01);
    TraceOptions opt;
    opt.eps = 1e-12;
    const double h = 1e-6;
    double worst = 0.0;
    int rays = 0, attempts = 0;
    while (rays < 20 && attempts < 1000) {
        ++attempts;
        const Vec3 o = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized() * 0.95;
        const Vec3 target(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3));
        const Ray ray = make_ray(o, target - o, 10.0);
        const auto rg = rendered_range_with_gradient(field, ray, opt);
        if (!rg || std::abs(rg->slope) < 0.2) continue;
        double num = 0.0, den = 0.0;
        bool ok = true;
        for (int c = 0; c < 8; ++c) {
            const std::size_t node = rg->stencil.nodes[c];
            SdfGridField up = field, dn = field;
            up.sdf()[node] += h;
            dn.sdf()[node] -= h;
            const auto ru = rendered_range_with_gradient(up, ray, opt);
            const auto rd = rendered_range_with_gradient(dn, ray, opt);
            if (!ru || !rd) {
                ok = false;
                break;
            }
            const double fd = (ru->range - rd->range) / (2.0 * h);
            num += (rg->d_range[c] - fd) * (rg->d_range[c] - fd);
            den += fd * fd;
        }
        if (!ok || den == 0.0) continue;
        worst = std::max(worst, std::sqrt(num / den));
        ++rays;
    }
    return {rays == 20 && worst < 1e-3,
            fmt("16^3 grid, %d rays: worst relative error %.3e between implicit and central-difference gradients "
                "(bound 1e-3)",
                rays, worst)};
}

// ------------------------------------------------------------------ 6

Outcome hit_drop_labeling() {
    Rng rng(6001);
    const OrientedBox box{Vec3(0, 0, 0.8), Vec3(4.5, 1.9, 1.6), 0.0};
    std::vector<Vec3> cloud;
    const Vec3 half = 0.5 * box.size;
    while (cloud.size() < 1000) {
        Vec3 p(rng.uniform(-half.x(), half.x()), rng.uniform(-half.y(), half.y()), rng.uniform(-half.z(), half.z()));
        const int axis = static_cast<int>(rng.index(3));
        p[axis] = rng.uniform() < 0.5 ? -half[axis] : half[axis];
        cloud.push_back(box.center + p);
    }
    RingSpec spec;
    spec.radii = {4.0, 7.0};
    spec.heights = {0.5, 2.0};
    spec.origins_per_ring = 20;
    spec.rays_per_origin = 125;
    const auto rays = sample_vehicle_rays(cloud, box, spec, {0.05, 6002});
    std::size_t agree = 0, hits = 0;
    for (const auto& r : rays) {
        const RaySample oracle = label_ray_bruteforce(cloud, r.origin, r.direction, 0.05);
        const bool same = r.is_drop() == oracle.is_drop() && (r.is_drop() || *r.range == *oracle.range);
        agree += same;
        hits += !r.is_drop();
    }
    return {agree == rays.size() && rays.size() == 10000,
            fmt("%zu/%zu rays agree with the brute-force point-to-ray oracle at 5 cm (%zu hits), cloud of %zu points",
                agree, rays.size(), hits, cloud.size())};
}

// ------------------------------------------------------------------ 7

Outcome canonicalization() {
    Rng rng(7001);
    ToyCar car;
    const SdfGridField field = analytic_body_field(car, 0.05, 0.3);
    double worst_box = 0.0, worst_range = 0.0;
    std::size_t compared = 0;
    for (int traj = 0; traj < 10; ++traj) {
        const OrientedBox b1{Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), 0.8), car.size, rng.uniform(-3, 3)};
        const Vec3 v(rng.uniform(-12, 12), rng.uniform(-12, 12), 0.0);
        const double yaw_rate = rng.uniform(-0.3, 0.3);
        const RigidTransform to_local_1 = canonical_local_transform(b1, b1);
        for (int t = 0; t < 20; ++t) {
            const double time = 0.1 * t;
            const OrientedBox bt{b1.center + v * time, b1.size, b1.yaw + yaw_rate * time};
            const RigidTransform tt = estimate_box_transform(b1, bt);
            const Eigen::Matrix<double, 3, 8> moved = (tt.rotation() * bt.corners()).colwise() + tt.translation();
            worst_box = std::max(worst_box, (b1.corners() - moved).norm());

            // Same local ray expressed in the world at frame 1 and at frame t.
            const RigidTransform to_local_t = canonical_local_transform(b1, bt);
            for (int k = 0; k < 10; ++k) {
                const double az = rng.uniform(0, 2 * std::numbers::pi);
                const Vec3 o_local(6.0 * std::cos(az), 6.0 * std::sin(az), rng.uniform(0.0, 2.5));
                const Vec3 target(rng.uniform(-2, 2), rng.uniform(-0.8, 0.8), rng.uniform(-0.4, 0.7));
                const Ray local = make_ray(o_local, target - o_local, 30.0);
                const Ray world_1 = transform_ray(to_local_1.inverse(), local);
                const Ray world_t = transform_ray(to_local_t.inverse(), local);
                const auto h1 = canonical_query(field, to_local_1, world_1);
                const auto ht = canonical_query(field, to_local_t, world_t);
                if (h1.range.has_value() != ht.range.has_value()) {
                    worst_range = std::numeric_limits<double>::infinity();
                } else if (h1.range) {
                    worst_range = std::max(worst_range, std::abs(*h1.range - *ht.range));
                    ++compared;
                }
            }
        }
    }
    return {worst_box < 1e-6 && worst_range < 1e-6 && compared > 0,
            fmt("max ||B_1 - T_t B_t||_F = %.3e over 200 frames; max canonical range change %.3e over %zu hits "
                "(bounds 1e-6)",
                worst_box, worst_range, compared)};
}

// ------------------------------------------------------------------ 8

Outcome dilation_algebra() {
    Rng rng(8001);
    int equal = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::array<std::uint32_t, 3> dims{static_cast<std::uint32_t>(1 + rng.index(16)),
                                                static_cast<std::uint32_t>(1 + rng.index(16)),
                                                static_cast<std::uint32_t>(1 + rng.index(16))};
        OccupancyGrid g(Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)), rng.uniform(0.1, 1.0), dims);
        const double fill = rng.uniform(0.0, 0.15);
        for (std::uint32_t k = 0; k < dims[2]; ++k)
            for (std::uint32_t j = 0; j < dims[1]; ++j)
                for (std::uint32_t i = 0; i < dims[0]; ++i)
                    if (rng.uniform() < fill) g.set(i, j, k);
        const int r1 = static_cast<int>(rng.index(4));
        const int r2 = static_cast<int>(rng.index(4));
        equal += dilate(dilate(g, r1), r2) == dilate(g, r1 + r2);
    }
    OccupancyGrid single(Vec3::Zero(), 0.4, {7, 7, 7});
    single.set(3, 3, 3);
    const std::size_t n = dilate(single, 1).count_occupied();
    return {equal == 100 && n == 27,
            fmt("dilate(r1) then dilate(r2) equals dilate(r1 + r2) on %d/100 random grids; singleton at radius 1 "
                "gives %zu voxels (27)",
                equal, n)};
}

// ------------------------------------------------------------------ 9

SdfGridField plane_optimum() {
    // Plane z = 0 with drop logits that are confident on both sides of the
    // 0.1 band around the surface.
    SdfGridField f(GridLattice::covering({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, 0.05), 0.2);
    f.fill_sdf([](const Vec3& p) { return p.z(); });
    const GridLattice& l = f.lattice();
    auto drop = f.drop_logits();
    for (std::uint32_t k = 0; k < l.dims[2]; ++k)
        for (std::uint32_t j = 0; j < l.dims[1]; ++j)
            for (std::uint32_t i = 0; i < l.dims[0]; ++i)
                drop[l.index(i, j, k)] = std::abs(l.node(i, j, k).z()) < 0.1 ? -12.0 : 12.0;
    return f;
}

std::vector<RaySample> plane_batch(Rng& rng) {
    std::vector<RaySample> batch;
    for (int i = 0; i < 48; ++i) {
        const Vec3 o(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(0.4, 0.9));
        const Vec3 target(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), 0.0);
        batch.push_back({o, (target - o).normalized(), (target - o).norm()});
    }
    for (int i = 0; i < 16; ++i) {
        // Horizontal rays well above the surface: drops.
        const Vec3 o(-0.95, rng.uniform(-0.8, 0.8), rng.uniform(0.45, 0.9));
        batch.push_back({o, Vec3(1.0, rng.uniform(-0.3, 0.3), 0.0).normalized(), std::nullopt});
    }
    return batch;
}

Outcome loss_sanity() {
    Rng rng(9001);
    const LossWeights w;
    const std::vector<RaySample> batch = plane_batch(rng);
    std::vector<Vec3> eik;
    while (eik.size() < 256) {
        const Vec3 p(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.15, 0.15));
        eik.push_back(p);
    }
    LossOptions lopt;
    lopt.trace.eps = 1e-9;
    const SdfGridField opt_field = plane_optimum();
    const double l_opt = loss_total(opt_field, batch, eik, w, nullptr, lopt).total;

    SdfGridField perturbed = opt_field;
    for (auto& v : perturbed.sdf()) v = std::clamp(v + rng.uniform(-0.02, 0.02), -0.2, 0.2);
    for (auto& v : perturbed.drop_logits()) v += rng.uniform(-11.0, 11.0);
    FieldGradient grad;
    const double l0 = loss_total(perturbed, batch, eik, w, &grad, lopt).total;
    AdamOptimizer adam(perturbed.sdf().size(), 1e-4, 1e-3);
    adam.step(perturbed, grad);
    const double l1 = loss_total(perturbed, batch, eik, w, nullptr, lopt).total;

    // Single-ray drop losses against the closed forms: BCE = log(1 + e^{-x s})
    // and the one-element Lovász hinge = max(0, 1 - x s), s = +1 for drop.
    double worst = 0.0;
    int cases = 0;
    for (const std::uint8_t label : {0, 1}) {
        for (const double x : {-3.0, -1.0, -0.25, 0.0, 0.4, 1.0, 2.5}) {
            const double s = label ? 1.0 : -1.0;
            const double bce_hand = std::log1p(std::exp(-x * s));
            const double lov_hand = std::max(0.0, 1.0 - x * s);
            const double lg[1] = {x};
            const std::uint8_t lb[1] = {label};
            worst = std::max(worst, std::abs(bce_with_logits(lg, lb) - bce_hand));
            worst = std::max(worst, std::abs(lovasz_hinge(lg, lb) - lov_hand));
            ++cases;
        }
    }
    // Through the full loss: one drop ray, probe logit read back from the field.
    const RaySample drop_ray{Vec3(-0.95, 0.1, 0.5), Vec3::UnitX(), std::nullopt};
    const auto probe = drop_probe_point(perturbed, drop_ray, lopt.drop_probe_samples);
    double through = std::numeric_limits<double>::infinity();
    if (probe) {
        const double x = perturbed.query_drop_logit(*probe);
        const std::vector<RaySample> one{drop_ray};
        const auto lb = loss_total(perturbed, one, {}, w, nullptr, lopt);
        through = std::abs(lb.drop - (std::log1p(std::exp(-x)) + std::max(0.0, 1.0 - x)));
    }
    const bool pass = std::abs(l_opt) < 1e-2 && l1 < l0 && worst < 1e-12 && through < 1e-12;
    return {pass, fmt("L at optimum %.2e (< 1e-2); one Adam step %.6f -> %.6f; single-ray BCE/Lovasz vs hand: "
                      "max error %.1e over %d cases, full-loss drop term error %.1e",
                      l_opt, l0, l1, worst, cases, through)};
}

// ------------------------------------------------------------------ 10

Outcome determinism(const ToyRun& run, const fs::path& root) {
    if (!run.error.empty()) return {false, "first run failed: " + run.error};
    PipelineConfig c = run.config;
    c.output_root = root / "run_b";
    fs::remove_all(c.output_root);
    try {
        RunOptions opt;
        opt.log = [](const std::string&) {};
        run_pipeline(c, opt);
    } catch (const Error& e) {
        return {false, std::string("second run failed: ") + e.what()};
    }
    const std::string a = tree_digest(run.config.output_root);
    const std::string b = tree_digest(c.output_root);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(c.output_root)) files += e.is_regular_file();
    return {a == b, fmt("output tree digests %s vs %s over %zu files", a.c_str(), b.c_str(), files)};
}

} // namespace

int main(int argc, char** argv) {
    const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "roadsynth_acceptance";
    std::cerr << "acceptance scratch directory: " << root << "\n";

    int failures = 0;
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << std::endl;
    };

    const ToyRun run = run_toy(root);
    report(1, "analytic cross-view render", [&] { return analytic_cross_view(run); });
    report(2, "occlusion exactness", [&] { return occlusion_exactness(run); });
    report(3, "occupancy constraint", [&] { return occupancy_constraint(run); });
    report(4, "eikonal property", eikonal_property);
    report(5, "range gradient check", gradient_check);
    report(6, "hit/drop labeling", hit_drop_labeling);
    report(7, "canonicalization", canonicalization);
    report(8, "dilation algebra", dilation_algebra);
    report(9, "loss sanity", loss_sanity);
    report(10, "determinism", [&] { return determinism(run, root); });
    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
