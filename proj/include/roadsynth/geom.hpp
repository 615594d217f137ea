#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <optional>
#include <span>

namespace roadsynth {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Proper rigid motion p -> R p + t.
class RigidTransform {
public:
    RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
    RigidTransform(const Mat3& rotation, const Vec3& translation)
        : rotation_(rotation), translation_(translation) {}

    static RigidTransform identity() { return {}; }
    static RigidTransform translation(const Vec3& t) { return {Mat3::Identity(), t}; }
    static RigidTransform rot_z(double yaw, const Vec3& t = Vec3::Zero());
    /// Builds from a 4x4 homogeneous matrix; the rotation block is re-orthonormalized.
    static RigidTransform from_matrix(const Eigen::Matrix4d& m);

    const Mat3& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }
    Eigen::Matrix4d matrix() const;

    Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
    Vec3 apply_direction(const Vec3& d) const { return rotation_ * d; }

    RigidTransform inverse() const;

    /// True when R is orthonormal with det +1 within tol.
    bool is_valid(double tol = 1e-9) const;

private:
    Mat3 rotation_;
    Vec3 translation_;
};

/// (a ∘ b)(p) = a(b(p)).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

/// Frobenius distance between the 4x4 matrices of two transforms.
double transform_distance(const RigidTransform& a, const RigidTransform& b);

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitX(); ///< unit norm
    double max_range = 1e9;

    Vec3 at(double t) const { return origin + t * direction; }
};

/// Returns a ray whose direction is normalized.
Ray make_ray(const Vec3& origin, const Vec3& direction, double max_range = 1e9);

Ray transform_ray(const RigidTransform& t, const Ray& ray);

struct Interval {
    double t_near = 0.0;
    double t_far = 0.0;
    double length() const { return t_far - t_near; }
};

/// Yaw-only box: x is the length axis, y the lateral (width) axis, z up.
///
/// Corner ordering is frozen: corner k has local coordinates
/// (sx * l/2, sy * w/2, sz * h/2) with sx = (k & 1) ? +1 : -1,
/// sy = (k & 2) ? +1 : -1, sz = (k & 4) ? +1 : -1.
struct OrientedBox {
    Vec3 center = Vec3::Zero();
    Vec3 size = Vec3::Ones(); ///< length, width, height
    double yaw = 0.0;

    /// Box-local -> world.
    RigidTransform pose() const { return RigidTransform::rot_z(yaw, center); }
    Vec3 to_local(const Vec3& p) const;
    Vec3 to_world(const Vec3& p) const { return pose().apply(p); }

    Eigen::Matrix<double, 3, 8> corners() const;

    /// Inclusive containment with the box grown by margin on every face.
    bool contains(const Vec3& p, double margin = 0.0) const;

    OrientedBox inflated(double margin) const {
        return {center, size + Vec3::Constant(2.0 * margin), yaw};
    }

    double half_diagonal() const { return 0.5 * size.norm(); }
    bool is_valid() const { return (size.array() > 0.0).all(); }
    bool operator==(const OrientedBox& o) const { return center == o.center && size == o.size && yaw == o.yaw; }
};

/// Applies a rigid map to a box; the rotation must be a yaw rotation.
OrientedBox transform_box(const RigidTransform& t, const OrientedBox& box);

/// Recovers (center, size, yaw) from corners laid out in the canonical order.
OrientedBox box_from_corners(const Eigen::Matrix<double, 3, 8>& corners);

/// Slab test in the box frame. The interval is clipped to [0, ray.max_range];
/// grazing contact (t_near == t_far) is reported as a zero-length hit.
std::optional<Interval> ray_box_intersect(const Ray& ray, const OrientedBox& box);

/// Least-squares rigid fit T minimizing ||canonical.corners - T observed.corners||_F.
/// Throws Error(DegenerateBox) when either box has a non-positive dimension.
RigidTransform estimate_box_transform(const OrientedBox& canonical, const OrientedBox& observed);

/// Kabsch fit of dst ≈ R src + t over corresponding columns.
RigidTransform kabsch(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst);

struct Aabb {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Zero();

    bool contains(const Vec3& p) const {
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }
    Vec3 extent() const { return hi - lo; }
    void expand(const Vec3& p) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    static Aabb empty();
    static Aabb of_points(std::span<const Vec3> points);
};

/// Slab test against an axis-aligned box, clipped to [t_min, t_max].
std::optional<Interval> ray_aabb_intersect(const Vec3& origin, const Vec3& direction, const Aabb& box,
                                           double t_min, double t_max);

/// Rounds to the nearest float. GCC 11 at -O3 folds a vectorized
/// double->float->double round trip to a copy; this version is not folded.
double round_to_float(double v);
Vec3 round_to_float(const Vec3& v);

} // namespace roadsynth
