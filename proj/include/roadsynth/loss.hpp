#pragma once

#include "roadsynth/field.hpp"
#include "roadsynth/geom.hpp"
#include "roadsynth/trace.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace roadsynth {

/// One supervised ray. A hit carries its measured range; a drop carries none.
struct RaySample {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitX();
    std::optional<double> range;

    bool is_drop() const { return !range.has_value(); }
    Vec3 endpoint() const { return origin + *range * direction; }
};

struct LossWeights {
    double w_zeta = 1.0;
    double w_s = 1.0;
    double w_eik = 0.1;
    double w_drop = 0.5;

    bool is_valid() const;
};

struct LossBreakdown {
    double total = 0.0;
    double range_l1 = 0.0;   ///< L_zeta
    double surface = 0.0;    ///< L_s
    double eikonal = 0.0;    ///< L_eik
    double drop_bce = 0.0;
    double drop_lovasz = 0.0;
    double drop = 0.0;       ///< bce + lovasz
    std::size_t converged_rays = 0;
    std::size_t hit_rays = 0;
    std::size_t eikonal_points_used = 0;
};

/// Dense gradient over the field parameters (SDF nodes then drop-logit nodes).
struct FieldGradient {
    std::vector<double> sdf;
    std::vector<double> drop;
};

struct LossOptions {
    TraceOptions trace;
    int drop_probe_samples = 64;
    /// Rays whose |∇s·d| at the hit falls below this are left out of the range
    /// gradient (the implicit derivative blows up at grazing incidence).
    double min_grazing_slope = 1e-3;
};

/// Binary Lovász hinge over logits; labels are 1 for the positive (drop) class.
/// Writes d(loss)/d(logit) into grad when non-empty.
double lovasz_hinge(std::span<const double> logits, std::span<const std::uint8_t> labels,
                    std::span<double> grad = {});

/// Mean binary cross-entropy on logits; writes d(loss)/d(logit) when grad non-empty.
double bce_with_logits(std::span<const double> logits, std::span<const std::uint8_t> labels,
                       std::span<double> grad = {});

/// Point where the drop head of a drop-labeled ray is supervised: the sample of
/// minimum |s| among `samples` uniform positions on the ray's span inside the field.
std::optional<Vec3> drop_probe_point(const SdfGridField& field, const RaySample& ray, int samples);

/// Eikonal samples only count where the containing cell has no node at the
/// truncation clamp; clamped cells have no meaningful gradient norm.
bool eikonal_cell_usable(const SdfGridField& field, const Vec3& p);

/// Evaluates the weighted four-term loss on a batch of rays plus explicit
/// Eikonal sample points; fills grad when non-null. The per-ray parallel loop
/// writes per-item contributions, reduced afterwards in index order.
/// Throws Error(NoConvergedRays) when the batch has hit rays and none converge.
LossBreakdown loss_total(const SdfGridField& field, std::span<const RaySample> batch,
                         std::span<const Vec3> eikonal_points, const LossWeights& weights,
                         FieldGradient* grad = nullptr, const LossOptions& opt = {});

/// Rendered range of a ray and the implicit derivative of that range with
/// respect to the 8 SDF nodes around the hit: d t / d θ_j = -w_j / (∇s · d).
struct RangeWithGradient {
    double range = 0.0;
    CellStencil stencil;
    std::array<double, 8> d_range{};
    double slope = 0.0; ///< ∇s · d at the hit
};
std::optional<RangeWithGradient> rendered_range_with_gradient(const SdfGridField& field, const Ray& ray,
                                                              const TraceOptions& opt = {});

struct FitConfig {
    int iterations = 2000;
    double learning_rate = 2e-3;
    /// Drop logits live on a logit scale; their Adam step is learning_rate times this.
    double drop_lr_multiplier = 25.0;
    std::size_t batch_size = 1024;
    std::size_t eikonal_samples = 1024;
    std::uint64_t seed = 0;
    double voxel_size = 0.05;
    double truncation_voxels = 4.0;
    /// Extra margin around the sample endpoints when the bounds are derived.
    double bounds_padding = 0.0;
    LossOptions loss;
};

struct FitReport {
    std::vector<double> loss_history;
    LossBreakdown final_loss;
};

/// Coarse initialization: truncated signed distance to the hit endpoints, using
/// per-point normals (PCA of neighbors, oriented toward the sensing ray origin).
/// Drop logits start negative near endpoints and positive elsewhere.
/// Adam over the SDF and drop-logit nodes. Entries without a gradient in a
/// step keep their parameters and moments (lazy update); bias correction uses
/// the global step count. SDF nodes are clamped to the truncation band.
class AdamOptimizer {
public:
    AdamOptimizer(std::size_t n_nodes, double lr_sdf, double lr_drop);

    /// Updates every entry with a nonzero gradient.
    void step(SdfGridField& field, const FieldGradient& grad);
    /// Updates the listed entries; gradients are indexed by node.
    void step_entries(SdfGridField& field, std::span<const std::size_t> sdf_nodes, std::span<const double> sdf_grad,
                      std::span<const std::size_t> drop_nodes, std::span<const double> drop_grad);

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
    static void update(double& p, double& m, double& v, double g, double lr, double c1, double c2);

    std::vector<double> m_sdf_, v_sdf_, m_drop_, v_drop_;
    double lr_sdf_, lr_drop_;
    int t_ = 0;
};

SdfGridField initialize_field(std::span<const RaySample> samples, const Aabb& bounds, const FitConfig& config);

/// Mini-batch Adam over all node parameters starting from initialize_field.
/// Deterministic given config.seed. Throws Error(Diverged) on a non-finite loss
/// and Error(InvalidArgument) when there is no hit sample.
SdfGridField fit_field(std::span<const RaySample> samples, const Aabb& bounds, const FitConfig& config,
                       const LossWeights& weights, FitReport* report = nullptr);

/// Same as above with an explicit starting field (used for warm starts and tests).
SdfGridField fit_field_from(SdfGridField field, std::span<const RaySample> samples, const FitConfig& config,
                            const LossWeights& weights, FitReport* report = nullptr);

/// Axis-aligned bounds enclosing all hit endpoints plus padding.
Aabb sample_bounds(std::span<const RaySample> samples, double padding);

struct CanonicalHit {
    std::optional<double> range; ///< along the original ray
    double sdf = 0.0;            ///< s at the hit (or at the last sample)
    double drop_probability = 1.0;
};

/// Maps the ray into the field's canonical frame with `to_canonical` and traces
/// there. Ranges are unchanged by the rigid map.
CanonicalHit canonical_query(const SdfGridField& field, const RigidTransform& to_canonical, const Ray& ray,
                             const TraceOptions& opt = {});

} // namespace roadsynth
