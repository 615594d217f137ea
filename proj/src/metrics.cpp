#include "roadsynth/metrics.hpp"

#include "roadsynth/error.hpp"
#include "roadsynth/kdtree.hpp"

#include <cmath>

namespace roadsynth {

namespace {
double rate(std::size_t num, std::size_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}
} // namespace

double MetricsReport::drop_accuracy() const {
    return rate(true_positive + true_negative, true_positive + true_negative + false_positive + false_negative);
}
double MetricsReport::drop_precision() const { return rate(true_positive, true_positive + false_positive); }
double MetricsReport::drop_recall() const { return rate(true_positive, true_positive + false_negative); }

double chamfer_one_sided(std::span<const Vec3> a, std::span<const Vec3> b) {
    if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyInput, "chamfer of an empty cloud");
    const KdTree tree(b);
    double sum = 0.0;
    for (const auto& p : a) sum += std::sqrt(tree.nearest(p).dist_sq);
    return sum / static_cast<double>(a.size());
}

double chamfer_symmetric(std::span<const Vec3> a, std::span<const Vec3> b) {
    return 0.5 * (chamfer_one_sided(a, b) + chamfer_one_sided(b, a));
}

MetricsReport evaluate(const RenderedFrame& rendered, const RenderedFrame& reference) {
    if (rendered.points.empty() || reference.points.empty()) {
        throw Error(ErrorCode::EmptyInput, "evaluate needs points in both frames");
    }
    if (rendered.ray_count() != reference.ray_count()) {
        throw Error(ErrorCode::InvalidArgument, "scan patterns differ: " + std::to_string(rendered.ray_count()) +
                                                    " vs " + std::to_string(reference.ray_count()) + " rays");
    }
    MetricsReport rep;
    rep.chamfer = chamfer_symmetric(rendered.points, reference.points);

    const std::size_t n = rendered.ray_count();
    std::vector<std::int64_t> ref_point(n, -1);
    for (std::size_t i = 0; i < reference.ray_index.size(); ++i) ref_point[reference.ray_index[i]] = static_cast<std::int64_t>(i);
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < rendered.ray_index.size(); ++i) {
        const auto j = ref_point[rendered.ray_index[i]];
        if (j < 0) continue;
        abs_sum += std::abs(rendered.points[i].norm() - reference.points[static_cast<std::size_t>(j)].norm());
        ++rep.matched_rays;
    }
    rep.range_mae = rep.matched_rays ? abs_sum / static_cast<double>(rep.matched_rays) : 0.0;

    for (std::size_t r = 0; r < n; ++r) {
        const bool pred = rendered.dropped[r] != 0;
        const bool truth = reference.dropped[r] != 0;
        if (pred && truth) ++rep.true_positive;
        else if (pred) ++rep.false_positive;
        else if (truth) ++rep.false_negative;
        else ++rep.true_negative;
    }
    rep.frames.push_back({rendered.frame_id, rendered.points.size(), reference.points.size(), rep.matched_rays});
    return rep;
}

MetricsReport aggregate(std::span<const MetricsReport> reports) {
    if (reports.empty()) throw Error(ErrorCode::EmptyInput, "no reports to aggregate");
    MetricsReport out;
    double abs_sum = 0.0;
    for (const auto& r : reports) {
        out.chamfer += r.chamfer;
        abs_sum += r.range_mae * static_cast<double>(r.matched_rays);
        out.matched_rays += r.matched_rays;
        out.true_positive += r.true_positive;
        out.false_positive += r.false_positive;
        out.true_negative += r.true_negative;
        out.false_negative += r.false_negative;
        out.frames.insert(out.frames.end(), r.frames.begin(), r.frames.end());
    }
    out.chamfer /= static_cast<double>(reports.size());
    out.range_mae = out.matched_rays ? abs_sum / static_cast<double>(out.matched_rays) : 0.0;
    return out;
}

} // namespace roadsynth
