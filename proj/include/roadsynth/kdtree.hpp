#pragma once

#include "roadsynth/geom.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace roadsynth {

/// Static 3-D k-d tree with per-node bounding boxes. Supports nearest-neighbor,
/// k-nearest and ray-cylinder queries.
class KdTree {
public:
    KdTree() = default;
    explicit KdTree(std::span<const Vec3> points, int leaf_size = 8);

    bool empty() const { return points_.empty(); }
    std::size_t size() const { return points_.size(); }
    const Vec3& point(std::size_t i) const { return points_[i]; }

    struct Neighbor {
        std::size_t index = 0;
        double dist_sq = 0.0;
    };

    /// Requires a non-empty tree.
    Neighbor nearest(const Vec3& q) const;

    /// Up to k neighbors sorted by increasing distance (ties by index).
    std::vector<Neighbor> knn(const Vec3& q, std::size_t k) const;

    struct RayHit {
        bool found = false;
        std::size_t index = 0;   ///< point with the smallest projection among those within radius
        double projection = 0.0; ///< along-ray distance of that point
        double min_distance = 0.0; ///< smallest point-to-ray distance among points within radius
    };

    /// Among points with positive projection onto the ray (unit direction) whose
    /// perpendicular distance is strictly below radius, reports the one closest to
    /// the origin along the ray.
    RayHit ray_query(const Vec3& origin, const Vec3& direction, double radius) const;

private:
    struct Node {
        Aabb box;
        std::uint32_t begin = 0;
        std::uint32_t end = 0;
        std::int32_t left = -1;
        std::int32_t right = -1;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end, int leaf_size);

    std::vector<Vec3> points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

/// Perpendicular distance from p to the ray, and its projection t = (p - o)·d.
struct PointRayDistance {
    double projection;
    double distance;
};
PointRayDistance point_ray_distance(const Vec3& origin, const Vec3& direction, const Vec3& p);

} // namespace roadsynth
