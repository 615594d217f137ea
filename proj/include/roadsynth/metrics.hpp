#pragma once

#include "roadsynth/render.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace roadsynth {

/// Mean distance from each point of `a` to its nearest neighbor in `b`.
double chamfer_one_sided(std::span<const Vec3> a, std::span<const Vec3> b);
/// 0.5 * (a->b + b->a).
double chamfer_symmetric(std::span<const Vec3> a, std::span<const Vec3> b);

struct FrameCounts {
    std::int64_t frame_id = 0;
    std::size_t rendered_points = 0;
    std::size_t reference_points = 0;
    std::size_t matched_rays = 0;
};

/// Drop is the positive class in the confusion counts. Rates with an empty
/// denominator are reported as 1.
struct MetricsReport {
    double chamfer = 0.0;
    double range_mae = 0.0;
    std::size_t matched_rays = 0;
    std::size_t true_positive = 0;
    std::size_t false_positive = 0;
    std::size_t true_negative = 0;
    std::size_t false_negative = 0;
    std::vector<FrameCounts> frames;

    double drop_accuracy() const;
    double drop_precision() const;
    double drop_recall() const;
};

/// Compares a rendered frame with a reference frame of the same scan pattern.
/// Range errors use rays where both frames have a return.
MetricsReport evaluate(const RenderedFrame& rendered, const RenderedFrame& reference);

/// Chamfer averaged over frames; confusion counts summed; MAE pooled over rays.
MetricsReport aggregate(std::span<const MetricsReport> reports);

} // namespace roadsynth
