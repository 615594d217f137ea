// Serial references against their OpenMP counterparts on toy-sized inputs.
#include "roadsynth/loss.hpp"
#include "roadsynth/occupancy.hpp"
#include "roadsynth/raysample.hpp"
#include "roadsynth/render.hpp"
#include "roadsynth/rng.hpp"
#include "roadsynth/synth.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

#include <cmath>

using namespace roadsynth;

namespace {

OccupancyGrid sparse_grid() {
    OccupancyGrid g(Vec3::Zero(), 0.4, {160, 160, 24});
    Rng rng(7);
    for (int n = 0; n < 4000; ++n) {
        g.set(static_cast<std::uint32_t>(rng.index(160)), static_cast<std::uint32_t>(rng.index(160)),
              static_cast<std::uint32_t>(rng.index(24)));
    }
    return g;
}

SensorModel roadside_sensor() {
    SensorModel s;
    s.pose = roadside_pose(Vec3(8, 12, 6), -90.0, 20.0);
    s.channels = 32;
    s.vertical_fov_min_deg = -25.0;
    s.vertical_fov_max_deg = 5.0;
    s.horizontal_fov_min_deg = -60.0;
    s.horizontal_fov_max_deg = 60.0;
    s.horizontal_resolution_deg = 0.4;
    s.max_range = 60.0;
    return s;
}

SceneGraph analytic_graph(const SensorModel& sensor) {
    const ToyScene scene = ToyScene::standard();
    const Vec3 c = sensor.pose.translation();
    const double reach = sensor.max_range + 1.0;
    const Aabb bounds{Vec3(c.x() - reach, c.y() - reach, -1.0), Vec3(c.x() + reach, c.y() + reach, 1.0)};
    SceneGraph g;
    g.background = analytic_ground_field(bounds, 0.2, 0.8);
    const Vec3 ext = bounds.extent() / 1.0 + Vec3::Constant(2.0);
    OccupancyGrid occ(bounds.lo - Vec3::Constant(1.0), 1.0,
                      {static_cast<std::uint32_t>(std::ceil(ext.x())), static_cast<std::uint32_t>(std::ceil(ext.y())),
                       static_cast<std::uint32_t>(std::ceil(ext.z()))});
    for (std::uint32_t k = 0; k < occ.dims()[2]; ++k)
        for (std::uint32_t j = 0; j < occ.dims()[1]; ++j)
            for (std::uint32_t i = 0; i < occ.dims()[0]; ++i) occ.set(i, j, k);
    g.occupancy = occ;
    for (std::size_t ci = 0; ci < scene.cars.size(); ++ci) {
        const ToyCar& car = scene.cars[ci];
        g.vehicles[car.track_id] = VehicleModel{analytic_body_field(car, 0.05, 0.3), car.size};
        const OrientedBox b1 = scene.car_box(ci, 0);
        const OrientedBox bt = scene.car_box(ci, 5);
        g.timeline[5].push_back({car.track_id, bt, canonical_local_transform(b1, bt)});
    }
    return g;
}

std::vector<Vec3> box_cloud(const OrientedBox& box, std::size_t n) {
    Rng rng(3);
    std::vector<Vec3> out;
    const Vec3 h = 0.5 * box.size;
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 p(rng.uniform(-h.x(), h.x()), rng.uniform(-h.y(), h.y()), rng.uniform(-h.z(), h.z()));
        const int axis = static_cast<int>(rng.index(3));
        p[axis] = rng.uniform() < 0.5 ? -h[axis] : h[axis];
        out.push_back(box.pose().apply(p));
    }
    return out;
}

class Threads {
public:
    explicit Threads(int n) : saved_(omp_get_max_threads()) { omp_set_num_threads(n); }
    ~Threads() { omp_set_num_threads(saved_); }

private:
    int saved_;
};

int thread_arg(const benchmark::State& state) {
    return state.range(0) == 0 ? omp_get_num_procs() : static_cast<int>(state.range(0));
}

} // namespace

static void BM_DilateReference(benchmark::State& state) {
    const OccupancyGrid g = sparse_grid();
    for (auto _ : state) benchmark::DoNotOptimize(dilate_reference(g, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_DilateReference)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

static void BM_Dilate(benchmark::State& state) {
    const OccupancyGrid g = sparse_grid();
    for (auto _ : state) benchmark::DoNotOptimize(dilate(g, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_Dilate)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

static void BM_RenderFrameSerial(benchmark::State& state) {
    const SensorModel sensor = roadside_sensor();
    const SceneGraph g = analytic_graph(sensor);
    RenderOptions opt;
    opt.trace.eps = 1e-6;
    opt.trace.max_steps = 512;
    for (auto _ : state) benchmark::DoNotOptimize(render_frame_serial(g, sensor, 5, opt));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sensor.ray_count()));
}
BENCHMARK(BM_RenderFrameSerial)->Unit(benchmark::kMillisecond);

static void BM_RenderFrame(benchmark::State& state) {
    const SensorModel sensor = roadside_sensor();
    const SceneGraph g = analytic_graph(sensor);
    RenderOptions opt;
    opt.trace.eps = 1e-6;
    opt.trace.max_steps = 512;
    const Threads t(thread_arg(state));
    for (auto _ : state) benchmark::DoNotOptimize(render_frame(g, sensor, 5, opt));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sensor.ray_count()));
}
BENCHMARK(BM_RenderFrame)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

static void BM_SampleVehicleRays(benchmark::State& state) {
    const OrientedBox box{Vec3::Zero(), Vec3(4.5, 1.9, 1.6), 0.0};
    const std::vector<Vec3> cloud = box_cloud(box, 5000);
    const RingSpec spec;
    const Threads t(thread_arg(state));
    for (auto _ : state) benchmark::DoNotOptimize(sample_vehicle_rays(cloud, box, spec));
}
BENCHMARK(BM_SampleVehicleRays)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

static void BM_LossTotal(benchmark::State& state) {
    const ToyCar car = ToyScene::standard().cars[0];
    const SdfGridField field = analytic_body_field(car, 0.05, 0.3);
    const OrientedBox box{Vec3::Zero(), car.size, 0.0};
    const std::vector<Vec3> cloud = box_cloud(box, 3000);
    RingSpec spec;
    spec.rays_per_origin = 32;
    const std::vector<RaySample> batch = sample_vehicle_rays(cloud, box, spec);
    Rng rng(11);
    std::vector<Vec3> eik(4096);
    for (auto& p : eik) p = rng.uniform_in(field.lattice().bounds());
    const Threads t(thread_arg(state));
    for (auto _ : state) {
        FieldGradient grad;
        benchmark::DoNotOptimize(loss_total(field, batch, eik, LossWeights{}, &grad));
    }
}
BENCHMARK(BM_LossTotal)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
