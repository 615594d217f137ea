#include "roadsynth/kdtree.hpp"

#include "roadsynth/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace roadsynth {

PointRayDistance point_ray_distance(const Vec3& origin, const Vec3& direction, const Vec3& p) {
    const Vec3 v = p - origin;
    const double t = v.dot(direction);
    const double perp_sq = std::max(0.0, v.squaredNorm() - t * t);
    return {t, std::sqrt(perp_sq)};
}

KdTree::KdTree(std::span<const Vec3> points, int leaf_size)
    : points_(points.begin(), points.end()), order_(points.size()) {
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points_.empty()) {
        nodes_.reserve(2 * points_.size() / std::max(1, leaf_size) + 1);
        build(0, static_cast<std::uint32_t>(points_.size()), std::max(1, leaf_size));
    }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end, int leaf_size) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({});
    Aabb box = Aabb::empty();
    for (std::uint32_t i = begin; i < end; ++i) box.expand(points_[order_[i]]);
    nodes_[id].box = box;
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin <= static_cast<std::uint32_t>(leaf_size)) return id;

    int axis = 0;
    box.extent().maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                         const double va = points_[a][axis];
                         const double vb = points_[b][axis];
                         return va < vb || (va == vb && a < b);
                     });
    const std::int32_t left = build(begin, mid, leaf_size);
    const std::int32_t right = build(mid, end, leaf_size);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

namespace {

double box_dist_sq(const Aabb& box, const Vec3& q) {
    const Vec3 d = (box.lo - q).cwiseMax(q - box.hi).cwiseMax(0.0);
    return d.squaredNorm();
}

bool better(const KdTree::Neighbor& a, const KdTree::Neighbor& b) {
    return a.dist_sq < b.dist_sq || (a.dist_sq == b.dist_sq && a.index < b.index);
}

} // namespace

KdTree::Neighbor KdTree::nearest(const Vec3& q) const {
    if (points_.empty()) throw Error(ErrorCode::EmptyCloud, "nearest() on empty tree");
    const auto result = knn(q, 1);
    return result.front();
}

std::vector<KdTree::Neighbor> KdTree::knn(const Vec3& q, std::size_t k) const {
    std::vector<Neighbor> best;
    if (points_.empty() || k == 0) return best;
    auto cmp = [](const Neighbor& a, const Neighbor& b) { return better(a, b); };
    std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(cmp)> heap(cmp);

    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        const Node& node = nodes_[stack.back()];
        stack.pop_back();
        if (heap.size() == k && box_dist_sq(node.box, q) > heap.top().dist_sq) continue;
        if (node.left < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const std::uint32_t idx = order_[i];
                const Neighbor cand{idx, (points_[idx] - q).squaredNorm()};
                if (heap.size() < k) {
                    heap.push(cand);
                } else if (better(cand, heap.top())) {
                    heap.pop();
                    heap.push(cand);
                }
            }
            continue;
        }
        // Visit the closer child first (pushed last).
        const double dl = box_dist_sq(nodes_[node.left].box, q);
        const double dr = box_dist_sq(nodes_[node.right].box, q);
        if (dl <= dr) {
            stack.push_back(node.right);
            stack.push_back(node.left);
        } else {
            stack.push_back(node.left);
            stack.push_back(node.right);
        }
    }
    best.resize(heap.size());
    for (std::size_t i = best.size(); i-- > 0;) {
        best[i] = heap.top();
        heap.pop();
    }
    return best;
}

KdTree::RayHit KdTree::ray_query(const Vec3& origin, const Vec3& direction, double radius) const {
    RayHit hit;
    if (points_.empty()) return hit;
    // Node boxes are grown slightly beyond the radius so pruning never rejects a
    // point the exact distance test would accept.
    const double pad = radius * (1.0 + 1e-9) + 1e-12;
    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        const Node& node = nodes_[stack.back()];
        stack.pop_back();
        const Aabb grown{node.box.lo - Vec3::Constant(pad), node.box.hi + Vec3::Constant(pad)};
        if (!ray_aabb_intersect(origin, direction, grown, 0.0, std::numeric_limits<double>::infinity()))
            continue;
        if (node.left >= 0) {
            stack.push_back(node.right);
            stack.push_back(node.left);
            continue;
        }
        for (std::uint32_t i = node.begin; i < node.end; ++i) {
            const std::uint32_t idx = order_[i];
            const PointRayDistance prd = point_ray_distance(origin, direction, points_[idx]);
            if (prd.projection <= 0.0 || !(prd.distance < radius)) continue;
            if (!hit.found || prd.projection < hit.projection ||
                (prd.projection == hit.projection && idx < hit.index)) {
                hit.index = idx;
                hit.projection = prd.projection;
            }
            hit.min_distance = hit.found ? std::min(hit.min_distance, prd.distance) : prd.distance;
            hit.found = true;
        }
    }
    return hit;
}

} // namespace roadsynth
