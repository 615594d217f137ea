#pragma once

#include "roadsynth/field.hpp"
#include "roadsynth/geom.hpp"

#include <cmath>
#include <optional>

namespace roadsynth {

struct TraceOptions {
    double eps = 1e-3;     ///< convergence threshold on |s|, field units
    int max_steps = 128;
    /// Advance used at samples the visibility predicate rejects, field units.
    double blind_step = 0.1;
    bool refine = true;    ///< polish converged hits to the exact root of the interpolant
};

struct TraceHit {
    double t = 0.0;   ///< ray parameter in caller units
    Vec3 point;       ///< field-space hit point
    int steps = 0;
};

struct AlwaysObserved {
    bool operator()(const Vec3&) const { return true; }
};

namespace detail {

inline double refine_newton(const SdfGridField& f, const Vec3& o, const Vec3& d, double t, double eps_t) {
    double best_t = t;
    double best_s = std::abs(f.query_sdf(o + t * d));
    double cur = t;
    for (int it = 0; it < 12 && best_s > 1e-14; ++it) {
        const Vec3 p = o + cur * d;
        const double s = f.query_sdf(p);
        const double slope = f.query_sdf_gradient(p).dot(d);
        if (!(std::abs(slope) > 1e-12)) break;
        cur -= s / slope;
        if (std::abs(cur - t) > eps_t) break;
        const double s_new = std::abs(f.query_sdf(o + cur * d));
        if (s_new < best_s) {
            best_s = s_new;
            best_t = cur;
        }
    }
    return best_t;
}

inline double refine_bracket(const SdfGridField& f, const Vec3& o, const Vec3& d, double a, double sa, double b,
                             double sb) {
    // Illinois false position; sa > 0 > sb.
    int side = 0;
    double c = b;
    for (int it = 0; it < 60; ++it) {
        c = (a * sb - b * sa) / (sb - sa);
        const double sc = f.query_sdf(o + c * d);
        if (std::abs(sc) < 1e-14 || std::abs(b - a) < 1e-13) break;
        if (sc > 0.0) {
            a = c;
            sa = sc;
            if (side == 1) sb *= 0.5;
            side = 1;
        } else {
            b = c;
            sb = sc;
            if (side == -1) sa *= 0.5;
            side = -1;
        }
    }
    return c;
}

} // namespace detail

/// Sphere traces the line o + t d (d need not be unit length; steps are s/|d|)
/// for t in [t0, t1] intersected with the field lattice. Samples where
/// `observed` is false carry no surface. Convergence when |s| < eps; a sign
/// change between consecutive samples is resolved by bracketing and kept only
/// when the root itself is observed.
template <typename Observed = AlwaysObserved>
std::optional<TraceHit> trace_segment(const SdfGridField& field, const Vec3& o, const Vec3& d, double t0, double t1,
                                      const TraceOptions& opt, Observed&& observed = {}) {
    const double len = d.norm();
    if (!(len > 0.0)) return std::nullopt;
    const auto span = ray_aabb_intersect(o, d, field.lattice().bounds(), t0, t1);
    if (!span) return std::nullopt;

    double t = span->t_near;
    bool have_prev = false;
    double prev_t = 0.0;
    double prev_s = 0.0;
    for (int step = 0; step < opt.max_steps; ++step) {
        if (t > span->t_far) return std::nullopt;
        const Vec3 p = o + t * d;
        const double s = field.query_sdf(p);
        const bool seen = observed(p);
        if (seen && std::abs(s) < opt.eps) {
            double th = t;
            if (opt.refine) {
                th = detail::refine_newton(field, o, d, t, std::max(4.0 * opt.eps, field.voxel_size()) / len);
                if (!observed(o + th * d)) th = t;
            }
            return TraceHit{th, o + th * d, step + 1};
        }
        if (s < 0.0) {
            if (step == 0 && seen) return TraceHit{t, p, 1};
            if (have_prev && prev_s > 0.0) {
                const double root = detail::refine_bracket(field, o, d, prev_t, prev_s, t, s);
                const Vec3 q = o + root * d;
                if (observed(q)) return TraceHit{root, q, step + 1};
            }
            // The crossing lies in unobserved space (or there is none): keep marching.
            have_prev = true;
            prev_t = t;
            prev_s = s;
            t += std::max(-s, opt.blind_step) / len;
            continue;
        }
        // Slow approach (grazing a face): probe past the secant root and
        // bracket if the probe lands inside; the sphere step stays safe otherwise.
        if (seen && have_prev && prev_s > s) {
            const double dt = 1.5 * s * (t - prev_t) / (prev_s - s);
            if (dt * len > 2.0 * s && t + dt <= span->t_far) {
                const double tp = t + dt;
                const double sp = field.query_sdf(o + tp * d);
                if (sp < 0.0) {
                    const double root = detail::refine_bracket(field, o, d, t, s, tp, sp);
                    const Vec3 q = o + root * d;
                    if (observed(q)) return TraceHit{root, q, step + 1};
                }
            }
        }
        have_prev = true;
        prev_t = t;
        prev_s = s;
        t += (seen ? s : std::max(s, opt.blind_step)) / len;
    }
    return std::nullopt;
}

/// Sphere trace along a unit-direction ray from its origin up to max_range.
inline std::optional<TraceHit> sphere_trace(const SdfGridField& field, const Ray& ray, double eps = 1e-3,
                                            int max_steps = 128) {
    TraceOptions opt;
    opt.eps = eps;
    opt.max_steps = max_steps;
    return trace_segment(field, ray.origin, ray.direction, 0.0, ray.max_range, opt);
}

} // namespace roadsynth
