#include "roadsynth/raysample.hpp"

#include "roadsynth/error.hpp"
#include "roadsynth/kdtree.hpp"
#include "roadsynth/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace roadsynth {

bool RingSpec::is_valid_for(const OrientedBox& box) const {
    if (radii.empty() || heights.empty() || rays_per_origin < 1 || origins_per_ring < 1) return false;
    const double half_diag = box.half_diagonal();
    return std::all_of(radii.begin(), radii.end(), [&](double r) { return r > half_diag; });
}

std::vector<RaySample> scan_to_rays(const Frame& frame) {
    std::vector<RaySample> out;
    out.reserve(frame.points.size());
    const Vec3 origin = frame.sensor_pose.translation();
    for (const Vec3& p : frame.points) {
        const double range = p.norm();
        if (!(range > 0.0)) continue;
        out.push_back({origin, frame.sensor_pose.apply_direction(p / range), range});
    }
    return out;
}

RayAssignment assign_rays(std::span<const RaySample> rays, std::span<const TrackedBox> boxes, double box_margin) {
    std::vector<OrientedBox> grown;
    grown.reserve(boxes.size());
    for (const auto& b : boxes) grown.push_back(b.box.inflated(box_margin));

    RayAssignment out;
    for (const RaySample& r : rays) {
        const double len = r.range.value_or(std::numeric_limits<double>::infinity());
        const Ray ray{r.origin, r.direction, len};
        for (std::size_t b = 0; b < boxes.size(); ++b) {
            if (ray_box_intersect(ray, grown[b])) out.vehicles[boxes[b].track_id].push_back(r);
        }
        const bool ends_in_box =
            !r.is_drop() && std::any_of(grown.begin(), grown.end(), [&](const OrientedBox& b) {
                return b.contains(r.endpoint());
            });
        if (!ends_in_box) out.background.push_back(r);
    }
    return out;
}

std::vector<Vec3> ring_ray_origins(const OrientedBox& box, const RingSpec& spec) {
    if (spec.origins_per_ring < 1) throw Error(ErrorCode::InvalidArgument, "origins_per_ring must be >= 1");
    std::vector<Vec3> out;
    out.reserve(spec.radii.size() * spec.heights.size() * spec.origins_per_ring);
    const double step = 2.0 * std::numbers::pi / static_cast<double>(spec.origins_per_ring);
    for (double h : spec.heights) {
        for (double r : spec.radii) {
            for (std::size_t k = 0; k < spec.origins_per_ring; ++k) {
                const double az = box.yaw + step * static_cast<double>(k);
                out.push_back(box.center + Vec3(r * std::cos(az), r * std::sin(az), h));
            }
        }
    }
    return out;
}

RaySample label_ray_bruteforce(std::span<const Vec3> cloud, const Vec3& origin, const Vec3& direction,
                               double hit_threshold) {
    RaySample out{origin, direction, std::nullopt};
    double best_proj = std::numeric_limits<double>::infinity();
    for (const Vec3& p : cloud) {
        const PointRayDistance d = point_ray_distance(origin, direction, p);
        if (d.projection > 0.0 && d.distance < hit_threshold && d.projection < best_proj) best_proj = d.projection;
    }
    if (std::isfinite(best_proj)) out.range = best_proj;
    return out;
}

namespace {

/// Stratum grid over the box: k^3 cells with k = ceil(cbrt(n)), visiting a
/// seeded permutation of the first n cells.
std::vector<Vec3> stratified_targets(const OrientedBox& box, std::size_t n, Rng& rng) {
    const auto k = static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(n)) - 1e-9));
    const std::size_t cells = k * k * k;
    std::vector<std::size_t> perm(cells);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = cells; i-- > 1;) std::swap(perm[i], perm[rng.index(i + 1)]);
    std::vector<Vec3> out;
    out.reserve(n);
    const RigidTransform pose = box.pose();
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t c = perm[s];
        const std::size_t ix = c % k, iy = (c / k) % k, iz = c / (k * k);
        const double u = (static_cast<double>(ix) + rng.uniform()) / static_cast<double>(k);
        const double v = (static_cast<double>(iy) + rng.uniform()) / static_cast<double>(k);
        const double w = (static_cast<double>(iz) + rng.uniform()) / static_cast<double>(k);
        const Vec3 local((u - 0.5) * box.size.x(), (v - 0.5) * box.size.y(), (w - 0.5) * box.size.z());
        out.push_back(pose.apply(local));
    }
    return out;
}

} // namespace

std::vector<RaySample> sample_vehicle_rays(std::span<const Vec3> cloud, const OrientedBox& box, const RingSpec& spec,
                                           const VehicleRayOptions& opt) {
    if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "vehicle cloud is empty");
    if (!spec.is_valid_for(box)) throw Error(ErrorCode::InvalidArgument, "ring spec puts origins inside the box");
    const KdTree tree(cloud);
    const std::vector<Vec3> origins = ring_ray_origins(box, spec);
    const std::size_t per = spec.rays_per_origin;
    std::vector<RaySample> out(origins.size() * per);

    const std::ptrdiff_t n_origins = static_cast<std::ptrdiff_t>(origins.size());
#pragma omp parallel for schedule(dynamic, 4)
    for (std::ptrdiff_t o = 0; o < n_origins; ++o) {
        Rng rng(opt.seed, static_cast<std::uint64_t>(o));
        const std::vector<Vec3> targets = stratified_targets(box, per, rng);
        for (std::size_t r = 0; r < per; ++r) {
            const Vec3 dir = (targets[r] - origins[o]).normalized();
            RaySample& s = out[static_cast<std::size_t>(o) * per + r];
            s.origin = origins[o];
            s.direction = dir;
            const auto hit = tree.ray_query(origins[o], dir, opt.hit_threshold);
            if (hit.found) s.range = hit.projection;
        }
    }
    return out;
}

} // namespace roadsynth
