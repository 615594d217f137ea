#include "roadsynth/error.hpp"
#include "roadsynth/kdtree.hpp"
#include "roadsynth/loss.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace roadsynth {

namespace {

constexpr std::size_t kNormalNeighbors = 10;
constexpr double kNearLogit = -2.0;
constexpr double kFarLogit = 2.0;

struct SurfacePoint {
    Vec3 normal;
    double spacing; ///< distance to the farthest of the normal-estimation neighbors
};

} // namespace

SdfGridField initialize_field(std::span<const RaySample> samples, const Aabb& bounds, const FitConfig& config) {
    std::vector<Vec3> endpoints;
    std::vector<Vec3> toward_sensor;
    for (const RaySample& s : samples) {
        if (s.is_drop()) continue;
        endpoints.push_back(s.endpoint());
        toward_sensor.push_back(-s.direction);
    }
    if (endpoints.empty()) throw Error(ErrorCode::InvalidArgument, "field initialization needs at least one hit");

    const double voxel = config.voxel_size;
    const double truncation = config.truncation_voxels * voxel;
    SdfGridField field(GridLattice::covering(bounds, voxel), truncation);
    const KdTree tree(endpoints);

    std::vector<SurfacePoint> surf(endpoints.size());
    const std::ptrdiff_t n_pts = static_cast<std::ptrdiff_t>(endpoints.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n_pts; ++i) {
        const auto nbrs = tree.knn(endpoints[i], kNormalNeighbors);
        Vec3 normal = toward_sensor[i];
        double spacing = voxel;
        if (nbrs.size() >= 3) {
            Vec3 mean = Vec3::Zero();
            for (const auto& nb : nbrs) mean += tree.point(nb.index);
            mean /= static_cast<double>(nbrs.size());
            Mat3 cov = Mat3::Zero();
            for (const auto& nb : nbrs) {
                const Vec3 d = tree.point(nb.index) - mean;
                cov += d * d.transpose();
            }
            Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
            normal = eig.eigenvectors().col(0);
            if (normal.dot(toward_sensor[i]) < 0.0) normal = -normal;
            spacing = std::sqrt(nbrs.back().dist_sq);
        }
        surf[i] = {normal, std::max(spacing, voxel)};
    }

    const GridLattice& g = field.lattice();
    auto sdf = field.sdf();
    auto drop = field.drop_logits();
    const std::ptrdiff_t nz = g.dims[2];
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < nz; ++k) {
        for (std::uint32_t j = 0; j < g.dims[1]; ++j) {
            for (std::uint32_t i = 0; i < g.dims[0]; ++i) {
                const Vec3 x = g.node(i, j, static_cast<std::uint32_t>(k));
                const auto nb = tree.nearest(x);
                const Vec3 delta = x - endpoints[nb.index];
                const double along = delta.dot(surf[nb.index].normal);
                const double dist = std::sqrt(nb.dist_sq);
                const double lateral = std::sqrt(std::max(0.0, nb.dist_sq - along * along));
                // Within the local sampling footprint use the tangent-plane distance;
                // beyond it fall back to the point distance so surfaces do not
                // extend past the observed patch.
                const double value = lateral <= surf[nb.index].spacing ? along : std::copysign(dist, along);
                const std::size_t idx = g.index(i, j, static_cast<std::uint32_t>(k));
                sdf[idx] = std::clamp(value, -truncation, truncation);
                drop[idx] = dist < 2.0 * voxel ? kNearLogit : kFarLogit;
            }
        }
    }
    field.snap_to_float();
    return field;
}

} // namespace roadsynth
