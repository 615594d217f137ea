#include "roadsynth/loss.hpp"

#include "roadsynth/error.hpp"
#include "roadsynth/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace roadsynth {

bool LossWeights::is_valid() const {
    const bool nonneg = w_zeta >= 0.0 && w_s >= 0.0 && w_eik >= 0.0 && w_drop >= 0.0;
    return nonneg && (w_zeta + w_s + w_eik + w_drop) > 0.0;
}

double lovasz_hinge(std::span<const double> logits, std::span<const std::uint8_t> labels, std::span<double> grad) {
    const std::size_t n = logits.size();
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    if (n == 0) return 0.0;

    std::vector<double> errors(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double sign = labels[i] ? 1.0 : -1.0;
        errors[i] = 1.0 - logits[i] * sign;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });

    double positives = 0.0;
    for (std::size_t i = 0; i < n; ++i) positives += labels[i] ? 1.0 : 0.0;

    // Gradient of the Lovász extension of the Jaccard loss w.r.t. sorted errors.
    std::vector<double> jac(n);
    double cum_pos = 0.0;
    double cum_neg = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const bool pos = labels[order[k]] != 0;
        cum_pos += pos ? 1.0 : 0.0;
        cum_neg += pos ? 0.0 : 1.0;
        const double inter = positives - cum_pos;
        const double uni = positives + cum_neg;
        jac[k] = 1.0 - inter / uni;
    }
    for (std::size_t k = n; k-- > 1;) jac[k] -= jac[k - 1];

    double loss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = order[k];
        if (errors[i] > 0.0) {
            loss += errors[i] * jac[k];
            if (!grad.empty()) grad[i] = -(labels[i] ? 1.0 : -1.0) * jac[k];
        }
    }
    return loss;
}

double bce_with_logits(std::span<const double> logits, std::span<const std::uint8_t> labels, std::span<double> grad) {
    const std::size_t n = logits.size();
    if (n == 0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits[i];
        const double y = labels[i] ? 1.0 : 0.0;
        sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        if (!grad.empty()) grad[i] = (sigmoid(z) - y) / static_cast<double>(n);
    }
    return sum / static_cast<double>(n);
}

std::optional<Vec3> drop_probe_point(const SdfGridField& field, const RaySample& ray, int samples) {
    const auto span = ray_aabb_intersect(ray.origin, ray.direction, field.lattice().bounds(), 0.0,
                                         std::numeric_limits<double>::infinity());
    if (!span || samples < 1) return std::nullopt;
    Vec3 best = ray.origin + span->t_near * ray.direction;
    double best_abs = std::numeric_limits<double>::infinity();
    for (int i = 0; i < samples; ++i) {
        const double u = samples == 1 ? 0.5 : static_cast<double>(i) / (samples - 1);
        const Vec3 p = ray.origin + (span->t_near + u * span->length()) * ray.direction;
        const double a = std::abs(field.query_sdf(p));
        if (a < best_abs) {
            best_abs = a;
            best = p;
        }
    }
    return best;
}

bool eikonal_cell_usable(const SdfGridField& field, const Vec3& p) {
    const CellStencil st = field.stencil(p);
    const auto sdf = field.sdf();
    for (std::size_t node : st.nodes) {
        if (std::abs(sdf[node]) >= field.truncation()) return false;
    }
    return true;
}

std::optional<RangeWithGradient> rendered_range_with_gradient(const SdfGridField& field, const Ray& ray,
                                                              const TraceOptions& opt) {
    const auto hit = trace_segment(field, ray.origin, ray.direction, 0.0, ray.max_range, opt);
    if (!hit) return std::nullopt;
    RangeWithGradient out;
    out.range = hit->t;
    out.stencil = field.stencil(hit->point);
    Vec3 g = Vec3::Zero();
    const auto sdf = field.sdf();
    for (int c = 0; c < 8; ++c) g += sdf[out.stencil.nodes[c]] * out.stencil.weight_gradients[c];
    out.slope = g.dot(ray.direction);
    for (int c = 0; c < 8; ++c) out.d_range[c] = out.slope != 0.0 ? -out.stencil.weights[c] / out.slope : 0.0;
    return out;
}

namespace {

/// Per-ray intermediate results, filled in parallel and reduced serially.
struct RayTerms {
    bool hit = false;
    bool converged = false;
    bool use_range_grad = false;
    double range_residual = 0.0;
    CellStencil hit_stencil;
    std::array<double, 8> d_range{};
    double surface_sdf = 0.0;
    CellStencil surface_stencil;
    bool has_logit = false;
    double logit = 0.0;
    CellStencil logit_stencil;
};

struct EikTerms {
    bool used = false;
    double norm = 0.0;
    Vec3 gradient = Vec3::Zero();
    CellStencil stencil;
};

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace

namespace detail {

/// Sparse gradient sink: receives (index, value) pairs in deterministic order.
struct GradientSink {
    virtual ~GradientSink() = default;
    virtual void add_sdf(std::size_t node, double v) = 0;
    virtual void add_drop(std::size_t node, double v) = 0;
};

LossBreakdown evaluate_loss(const SdfGridField& field, std::span<const RaySample> batch,
                            std::span<const Vec3> eikonal_points, const LossWeights& weights,
                            GradientSink* sink, const LossOptions& opt) {
    if (batch.empty()) throw Error(ErrorCode::EmptyInput, "loss batch is empty");
    const auto sdf = field.sdf();
    const auto drop = field.drop_logits();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(batch.size());
    std::vector<RayTerms> terms(batch.size());

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const RaySample& ray = batch[i];
        RayTerms& rt = terms[i];
        if (!ray.is_drop()) {
            rt.hit = true;
            const Vec3 surface = ray.endpoint();
            rt.surface_stencil = field.stencil(surface);
            double s = 0.0;
            for (int c = 0; c < 8; ++c) s += rt.surface_stencil.weights[c] * sdf[rt.surface_stencil.nodes[c]];
            rt.surface_sdf = s;
            rt.has_logit = true;
            rt.logit_stencil = rt.surface_stencil;

            const Ray r{ray.origin, ray.direction, std::numeric_limits<double>::infinity()};
            if (auto rg = rendered_range_with_gradient(field, r, opt.trace)) {
                rt.converged = true;
                rt.range_residual = rg->range - *ray.range;
                rt.hit_stencil = rg->stencil;
                rt.d_range = rg->d_range;
                rt.use_range_grad = std::abs(rg->slope) >= opt.min_grazing_slope;
            }
        } else if (auto probe = drop_probe_point(field, ray, opt.drop_probe_samples)) {
            rt.has_logit = true;
            rt.logit_stencil = field.stencil(*probe);
        }
        if (rt.has_logit) {
            double z = 0.0;
            for (int c = 0; c < 8; ++c) z += rt.logit_stencil.weights[c] * drop[rt.logit_stencil.nodes[c]];
            rt.logit = z;
        }
    }

    const std::ptrdiff_t m = static_cast<std::ptrdiff_t>(eikonal_points.size());
    std::vector<EikTerms> eik(eikonal_points.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        const Vec3& p = eikonal_points[i];
        if (!eikonal_cell_usable(field, p)) continue;
        EikTerms& et = eik[i];
        et.used = true;
        et.stencil = field.stencil(p);
        Vec3 g = Vec3::Zero();
        for (int c = 0; c < 8; ++c) g += sdf[et.stencil.nodes[c]] * et.stencil.weight_gradients[c];
        et.gradient = g;
        et.norm = g.norm();
    }

    LossBreakdown out;
    std::size_t hits = 0, converged = 0;
    double range_sum = 0.0, surface_sum = 0.0;
    std::vector<double> logits;
    std::vector<std::uint8_t> labels;
    std::vector<std::size_t> logit_owner;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const RayTerms& rt = terms[i];
        if (rt.hit) {
            ++hits;
            surface_sum += std::abs(rt.surface_sdf);
            if (rt.converged) {
                ++converged;
                range_sum += std::abs(rt.range_residual);
            }
        }
        if (rt.has_logit) {
            logits.push_back(rt.logit);
            labels.push_back(batch[i].is_drop() ? 1 : 0);
            logit_owner.push_back(i);
        }
    }
    if (hits > 0 && converged == 0) {
        throw Error(ErrorCode::NoConvergedRays, "sphere tracing failed for every hit ray in the batch");
    }
    out.hit_rays = hits;
    out.converged_rays = converged;
    out.range_l1 = converged > 0 ? range_sum / converged : 0.0;
    out.surface = hits > 0 ? surface_sum / hits : 0.0;

    std::size_t eik_used = 0;
    double eik_sum = 0.0;
    for (const EikTerms& et : eik) {
        if (!et.used) continue;
        ++eik_used;
        eik_sum += (et.norm - 1.0) * (et.norm - 1.0);
    }
    out.eikonal_points_used = eik_used;
    out.eikonal = eik_used > 0 ? eik_sum / eik_used : 0.0;

    std::vector<double> g_bce(logits.size()), g_lov(logits.size());
    out.drop_bce = bce_with_logits(logits, labels, g_bce);
    out.drop_lovasz = lovasz_hinge(logits, labels, g_lov);
    out.drop = out.drop_bce + out.drop_lovasz;

    out.total = weights.w_zeta * out.range_l1 + weights.w_s * out.surface + weights.w_eik * out.eikonal +
                weights.w_drop * out.drop;

    if (sink == nullptr) return out;

    for (std::size_t i = 0; i < terms.size(); ++i) {
        const RayTerms& rt = terms[i];
        if (!rt.hit) continue;
        if (rt.converged && rt.use_range_grad && weights.w_zeta > 0.0) {
            const double scale = weights.w_zeta * sign_of(rt.range_residual) / converged;
            for (int c = 0; c < 8; ++c) sink->add_sdf(rt.hit_stencil.nodes[c], scale * rt.d_range[c]);
        }
        if (weights.w_s > 0.0) {
            const double scale = weights.w_s * sign_of(rt.surface_sdf) / hits;
            for (int c = 0; c < 8; ++c)
                sink->add_sdf(rt.surface_stencil.nodes[c], scale * rt.surface_stencil.weights[c]);
        }
    }
    if (weights.w_eik > 0.0 && eik_used > 0) {
        for (const EikTerms& et : eik) {
            if (!et.used || et.norm == 0.0) continue;
            const double scale = weights.w_eik * 2.0 * (et.norm - 1.0) / (et.norm * eik_used);
            for (int c = 0; c < 8; ++c)
                sink->add_sdf(et.stencil.nodes[c], scale * et.gradient.dot(et.stencil.weight_gradients[c]));
        }
    }
    if (weights.w_drop > 0.0) {
        for (std::size_t k = 0; k < logits.size(); ++k) {
            const RayTerms& rt = terms[logit_owner[k]];
            const double dz = weights.w_drop * (g_bce[k] + g_lov[k]);
            if (dz == 0.0) continue;
            for (int c = 0; c < 8; ++c)
                sink->add_drop(rt.logit_stencil.nodes[c], dz * rt.logit_stencil.weights[c]);
        }
    }
    return out;
}

} // namespace detail

namespace {

struct DenseSink final : detail::GradientSink {
    FieldGradient& g;
    explicit DenseSink(FieldGradient& grad) : g(grad) {}
    void add_sdf(std::size_t node, double v) override { g.sdf[node] += v; }
    void add_drop(std::size_t node, double v) override { g.drop[node] += v; }
};

/// Accumulates into dense buffers and records touched entries for a lazy update.
struct SparseSink final : detail::GradientSink {
    std::vector<double> sdf, drop;
    std::vector<std::uint8_t> sdf_touched, drop_touched;
    std::vector<std::size_t> sdf_list, drop_list;

    explicit SparseSink(std::size_t n) : sdf(n, 0.0), drop(n, 0.0), sdf_touched(n, 0), drop_touched(n, 0) {}
    void add_sdf(std::size_t node, double v) override {
        if (!sdf_touched[node]) {
            sdf_touched[node] = 1;
            sdf_list.push_back(node);
        }
        sdf[node] += v;
    }
    void add_drop(std::size_t node, double v) override {
        if (!drop_touched[node]) {
            drop_touched[node] = 1;
            drop_list.push_back(node);
        }
        drop[node] += v;
    }
    void clear() {
        for (std::size_t i : sdf_list) {
            sdf[i] = 0.0;
            sdf_touched[i] = 0;
        }
        for (std::size_t i : drop_list) {
            drop[i] = 0.0;
            drop_touched[i] = 0;
        }
        sdf_list.clear();
        drop_list.clear();
    }
};

} // namespace

LossBreakdown loss_total(const SdfGridField& field, std::span<const RaySample> batch,
                         std::span<const Vec3> eikonal_points, const LossWeights& weights, FieldGradient* grad,
                         const LossOptions& opt) {
    if (grad == nullptr) return detail::evaluate_loss(field, batch, eikonal_points, weights, nullptr, opt);
    grad->sdf.assign(field.sdf().size(), 0.0);
    grad->drop.assign(field.drop_logits().size(), 0.0);
    DenseSink sink(*grad);
    return detail::evaluate_loss(field, batch, eikonal_points, weights, &sink, opt);
}

Aabb sample_bounds(std::span<const RaySample> samples, double padding) {
    Aabb box = Aabb::empty();
    for (const RaySample& s : samples) {
        if (!s.is_drop()) box.expand(s.endpoint());
    }
    if (!(box.lo.array() <= box.hi.array()).all()) {
        throw Error(ErrorCode::InvalidArgument, "no hit samples to derive bounds from");
    }
    box.lo -= Vec3::Constant(padding);
    box.hi += Vec3::Constant(padding);
    return box;
}

AdamOptimizer::AdamOptimizer(std::size_t n, double lr_sdf, double lr_drop)
    : m_sdf_(n, 0.0), v_sdf_(n, 0.0), m_drop_(n, 0.0), v_drop_(n, 0.0), lr_sdf_(lr_sdf), lr_drop_(lr_drop) {}

void AdamOptimizer::update(double& p, double& m, double& v, double g, double lr, double c1, double c2) {
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g * g;
    p -= lr * (m / c1) / (std::sqrt(v / c2) + kEps);
}

void AdamOptimizer::step_entries(SdfGridField& field, std::span<const std::size_t> sdf_idx, std::span<const double> g_sdf,
                                 std::span<const std::size_t> drop_idx, std::span<const double> g_drop) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    auto sdf = field.sdf();
    auto drop = field.drop_logits();
    const double trunc = field.truncation();
    for (std::size_t i : sdf_idx) {
        update(sdf[i], m_sdf_[i], v_sdf_[i], g_sdf[i], lr_sdf_, c1, c2);
        sdf[i] = std::clamp(sdf[i], -trunc, trunc);
    }
    for (std::size_t i : drop_idx) update(drop[i], m_drop_[i], v_drop_[i], g_drop[i], lr_drop_, c1, c2);
}

void AdamOptimizer::step(SdfGridField& field, const FieldGradient& g) {
    std::vector<std::size_t> sdf_idx, drop_idx;
    for (std::size_t i = 0; i < g.sdf.size(); ++i) {
        if (g.sdf[i] != 0.0) sdf_idx.push_back(i);
    }
    for (std::size_t i = 0; i < g.drop.size(); ++i) {
        if (g.drop[i] != 0.0) drop_idx.push_back(i);
    }
    step_entries(field, sdf_idx, g.sdf, drop_idx, g.drop);
}

SdfGridField fit_field_from(SdfGridField field, std::span<const RaySample> samples, const FitConfig& config,
                            const LossWeights& weights, FitReport* report) {
    if (config.iterations < 0) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 0");
    if (!(config.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be > 0");
    if (!weights.is_valid()) throw Error(ErrorCode::InvalidArgument, "invalid loss weights");
    if (samples.empty()) throw Error(ErrorCode::EmptyInput, "no ray samples");
    if (config.iterations == 0) return field;

    Rng rng(config.seed);
    const std::size_t n_nodes = field.sdf().size();
    SparseSink sink(n_nodes);
    AdamOptimizer adam(n_nodes, config.learning_rate, config.learning_rate * config.drop_lr_multiplier);
    const Aabb bounds = field.lattice().bounds();
    const std::size_t batch_size = std::max<std::size_t>(1, std::min(config.batch_size, samples.size()));

    std::vector<RaySample> batch(batch_size);
    std::vector<Vec3> eik(config.eikonal_samples);
    for (int it = 0; it < config.iterations; ++it) {
        for (auto& b : batch) b = samples[rng.index(samples.size())];
        for (auto& p : eik) p = rng.uniform_in(bounds);
        LossBreakdown lb = detail::evaluate_loss(field, batch, eik, weights, &sink, config.loss);
        if (!std::isfinite(lb.total)) {
            throw Error(ErrorCode::Diverged, "loss became non-finite at iteration " + std::to_string(it));
        }
        if (report) report->loss_history.push_back(lb.total);
        adam.step_entries(field, sink.sdf_list, sink.sdf, sink.drop_list, sink.drop);
        sink.clear();
    }
    field.snap_to_float();
    if (report) {
        const std::size_t n_eval = std::min<std::size_t>(samples.size(), 4 * batch_size);
        std::vector<RaySample> eval(samples.begin(), samples.begin() + n_eval);
        report->final_loss = detail::evaluate_loss(field, eval, eik, weights, nullptr, config.loss);
    }
    return field;
}

SdfGridField fit_field(std::span<const RaySample> samples, const Aabb& bounds, const FitConfig& config,
                       const LossWeights& weights, FitReport* report) {
    return fit_field_from(initialize_field(samples, bounds, config), samples, config, weights, report);
}

CanonicalHit canonical_query(const SdfGridField& field, const RigidTransform& to_canonical, const Ray& ray,
                             const TraceOptions& opt) {
    const Ray local = transform_ray(to_canonical, ray);
    CanonicalHit out;
    const auto hit = trace_segment(field, local.origin, local.direction, 0.0, local.max_range, opt);
    if (!hit) {
        out.sdf = field.query_sdf(local.origin);
        return out;
    }
    out.range = hit->t;
    out.sdf = field.query_sdf(hit->point);
    out.drop_probability = field.query_drop(hit->point);
    return out;
}

} // namespace roadsynth
