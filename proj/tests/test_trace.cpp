#include "roadsynth/field.hpp"
#include "roadsynth/rng.hpp"
#include "roadsynth/trace.hpp"

#include <gtest/gtest.h>

using namespace roadsynth;

namespace {

SdfGridField sphere_field(double radius, double voxel, double truncation) {
    SdfGridField f(GridLattice::covering({Vec3::Constant(-2), Vec3::Constant(2)}, voxel), truncation);
    f.fill_sdf([&](const Vec3& p) { return p.norm() - radius; });
    return f;
}

} // namespace

TEST(SphereTrace, PlaneHitIsExact) {
    SdfGridField f(GridLattice::covering({Vec3::Constant(-1), Vec3(5, 1, 1)}, 0.1), 0.5);
    f.fill_sdf([](const Vec3& p) { return 2.0 - p.x(); });
    const auto hit = sphere_trace(f, make_ray(Vec3::Zero(), Vec3::UnitX(), 10.0));
    ASSERT_TRUE(hit);
    EXPECT_NEAR(hit->t, 2.0, 1e-9);
}

TEST(SphereTrace, MissReturnsNothing) {
    SdfGridField f = sphere_field(0.5, 0.05, 0.2);
    EXPECT_FALSE(sphere_trace(f, make_ray(Vec3(-1.9, 1.0, 0), Vec3::UnitX(), 10.0)));
}

TEST(SphereTrace, SphereMatchesAnalyticIntersection) {
    const double r = 0.8, voxel = 0.05;
    SdfGridField f = sphere_field(r, voxel, 4 * voxel);
    Rng rng(31);
    int hits = 0;
    for (int i = 0; i < 300; ++i) {
        const Vec3 o(-1.95, rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7));
        const Vec3 d = (Vec3(0, rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)) - o).normalized();
        // Analytic |o + t d| = r.
        const double b = o.dot(d), c = o.squaredNorm() - r * r;
        const double disc = b * b - c;
        const auto hit = sphere_trace(f, make_ray(o, d, 10.0));
        if (disc < 0.05) continue; // leave silhouettes out
        ASSERT_TRUE(hit);
        ++hits;
        EXPECT_NEAR(hit->t, -b - std::sqrt(disc), voxel);
    }
    EXPECT_GT(hits, 200);
}

TEST(SphereTrace, NonUnitDirectionReportsCallerUnits) {
    SdfGridField f(GridLattice::covering({Vec3::Constant(-1), Vec3(5, 1, 1)}, 0.1), 0.5);
    f.fill_sdf([](const Vec3& p) { return 2.0 - p.x(); });
    const auto hit = trace_segment(f, Vec3::Zero(), Vec3(2, 0, 0), 0.0, 10.0, TraceOptions{});
    ASSERT_TRUE(hit);
    EXPECT_NEAR(hit->t, 1.0, 1e-9);
}

TEST(SphereTrace, StartingInsideHitsAtEntry) {
    SdfGridField f = sphere_field(0.8, 0.05, 0.2);
    const auto hit = sphere_trace(f, make_ray(Vec3::Zero(), Vec3::UnitX(), 10.0));
    ASSERT_TRUE(hit);
    EXPECT_DOUBLE_EQ(hit->t, 0.0);
}

TEST(SphereTrace, UnobservedSamplesCarryNoSurface) {
    SdfGridField f(GridLattice::covering({Vec3::Constant(-1), Vec3(5, 1, 1)}, 0.1), 0.5);
    f.fill_sdf([](const Vec3& p) { return 2.0 - p.x(); });
    // Plane at x = 2, but everything with x < 3 is unobserved; the trace walks
    // blind into the negative region and cannot find an admissible surface.
    TraceOptions opt;
    opt.blind_step = 0.05;
    const auto hit = trace_segment(f, Vec3::Zero(), Vec3::UnitX(), 0.0, 10.0, opt,
                                   [](const Vec3& p) { return p.x() >= 3.0; });
    EXPECT_FALSE(hit);
    // Observed everywhere: the plane is found.
    EXPECT_TRUE(trace_segment(f, Vec3::Zero(), Vec3::UnitX(), 0.0, 10.0, opt));
}

TEST(SphereTrace, BracketsSignChangeFromOvershoot) {
    // A thin slab whose SDF is overestimated: a step jumps past the zero crossing.
    SdfGridField f(GridLattice::covering({Vec3::Constant(-1), Vec3(5, 1, 1)}, 0.1), 3.0);
    f.fill_sdf([](const Vec3& p) { return 3.0 * (2.05 - p.x()); });
    TraceOptions opt;
    opt.eps = 1e-6;
    const auto hit = trace_segment(f, Vec3::Zero(), Vec3::UnitX(), 0.0, 10.0, opt);
    ASSERT_TRUE(hit);
    EXPECT_NEAR(hit->t, 2.05, 1e-9);
}

TEST(SphereTrace, GrazingApproachConvergesWithinBudget) {
    // Ray descending onto z = 0 at a shallow angle: plain sphere steps shrink
    // geometrically, so a tight eps would need thousands of them.
    SdfGridField f(GridLattice::covering({Vec3(-1, -1, -1), Vec3(30, 1, 1)}, 0.05), 0.3);
    f.fill_sdf([](const Vec3& p) { return p.z(); });
    const Vec3 d = Vec3(1.0, 0.0, -0.01).normalized();
    TraceOptions opt;
    opt.eps = 1e-8;
    opt.max_steps = 64;
    const auto hit = trace_segment(f, Vec3(0, 0, 0.2), d, 0.0, 40.0, opt);
    ASSERT_TRUE(hit);
    EXPECT_NEAR(hit->point.z(), 0.0, 1e-9);
    EXPECT_NEAR(hit->t, 20.0 * std::sqrt(1.0 + 1e-4), 1e-6);
}

TEST(SphereTrace, GrazingMissStaysAMiss) {
    // Passes 1 mm above a box corner edge; a loose eps would report a hit.
    SdfGridField f(GridLattice::covering({Vec3::Constant(-2), Vec3::Constant(2)}, 0.05), 0.2);
    f.fill_sdf([](const Vec3& p) {
        const Vec3 q = p.cwiseAbs() - Vec3::Constant(0.5);
        return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    });
    TraceOptions opt;
    opt.eps = 1e-6;
    const Vec3 o(-1.9, 0.2, 0.501);
    EXPECT_FALSE(trace_segment(f, o, Vec3::UnitX(), 0.0, 10.0, opt));
    EXPECT_TRUE(trace_segment(f, Vec3(-1.9, 0.2, 0.499), Vec3::UnitX(), 0.0, 10.0, opt));
}
