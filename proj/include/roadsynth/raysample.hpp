#pragma once

#include "roadsynth/decomp.hpp"
#include "roadsynth/geom.hpp"
#include "roadsynth/loss.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace roadsynth {

/// Rings of ray origins around a vehicle: one ring per (radius, height) pair.
struct RingSpec {
    std::vector<double> radii{4.0, 7.0, 10.0};
    std::vector<double> heights{0.5, 2.0, 4.0, 7.0}; ///< relative to the box center
    std::size_t rays_per_origin = 256;
    std::size_t origins_per_ring = 36;

    /// Every radius must put origins outside the box.
    bool is_valid_for(const OrientedBox& box) const;
};

/// One hit sample per return, world frame: origin at the sensor, range = |p|.
std::vector<RaySample> scan_to_rays(const Frame& frame);

struct RayAssignment {
    std::map<TrackId, std::vector<RaySample>> vehicles;
    std::vector<RaySample> background;
};

/// Vehicle sets receive every ray whose [0, range] segment meets the (inflated)
/// box; the background set receives every ray whose endpoint is outside all
/// boxes. Box-traversing rays that end outside boxes land in both.
RayAssignment assign_rays(std::span<const RaySample> rays, std::span<const TrackedBox> boxes, double box_margin = 0.1);

/// Origins at uniform azimuth steps (starting at 0 rad about the box yaw) on
/// each (radius, height) ring centered on the box center.
std::vector<Vec3> ring_ray_origins(const OrientedBox& box, const RingSpec& spec);

struct VehicleRayOptions {
    double hit_threshold = 0.05;
    std::uint64_t seed = 0;
};

/// Rays from every ring origin toward stratified-jittered targets in the box,
/// labeled hit when some cloud point with positive projection lies within
/// hit_threshold of the ray; the range is the projection of the first such point
/// along the ray. Throws Error(EmptyCloud) for an empty cloud.
std::vector<RaySample> sample_vehicle_rays(std::span<const Vec3> cloud, const OrientedBox& box, const RingSpec& spec,
                                           const VehicleRayOptions& opt = {});

/// Brute-force labeling of one ray against a cloud (test oracle and reference).
RaySample label_ray_bruteforce(std::span<const Vec3> cloud, const Vec3& origin, const Vec3& direction,
                               double hit_threshold);

} // namespace roadsynth
