#include "roadsynth/geom.hpp"

#include "roadsynth/error.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace roadsynth {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::DegenerateBox: return "DegenerateBox";
    case ErrorCode::EmptyTrack: return "EmptyTrack";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::NoConvergedRays: return "NoConvergedRays";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::NoFields: return "NoFields";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::StageFailed: return "StageFailed";
    }
    return "Unknown";
}

RigidTransform RigidTransform::rot_z(double yaw, const Vec3& t) {
    return {Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(), t};
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
    Mat3 r = m.topLeftCorner<3, 3>();
    Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    Mat3 v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
    Mat3 ortho = u * v.transpose();
    // Keep exact input when it is already orthonormal so file round trips are bit-exact.
    if ((r * r.transpose() - Mat3::Identity()).norm() < 1e-12 && r.determinant() > 0.0) ortho = r;
    return {ortho, m.topRightCorner<3, 1>()};
}

Eigen::Matrix4d RigidTransform::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
}

RigidTransform RigidTransform::inverse() const {
    Mat3 rt = rotation_.transpose();
    return {rt, -(rt * translation_)};
}

bool RigidTransform::is_valid(double tol) const {
    return (rotation_ * rotation_.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation_.determinant() - 1.0) <= tol;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

RigidTransform invert(const RigidTransform& t) { return t.inverse(); }

double transform_distance(const RigidTransform& a, const RigidTransform& b) {
    return (a.matrix() - b.matrix()).norm();
}

Ray make_ray(const Vec3& origin, const Vec3& direction, double max_range) {
    return {origin, direction.normalized(), max_range};
}

Ray transform_ray(const RigidTransform& t, const Ray& ray) {
    return {t.apply(ray.origin), t.apply_direction(ray.direction), ray.max_range};
}

Vec3 OrientedBox::to_local(const Vec3& p) const {
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    const Vec3 d = p - center;
    return {c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
}

Eigen::Matrix<double, 3, 8> OrientedBox::corners() const {
    Eigen::Matrix<double, 3, 8> out;
    const RigidTransform t = pose();
    const Vec3 half = 0.5 * size;
    for (int k = 0; k < 8; ++k) {
        const Vec3 local((k & 1) ? half.x() : -half.x(), (k & 2) ? half.y() : -half.y(),
                         (k & 4) ? half.z() : -half.z());
        out.col(k) = t.apply(local);
    }
    return out;
}

bool OrientedBox::contains(const Vec3& p, double margin) const {
    const Vec3 local = to_local(p);
    const Vec3 half = 0.5 * size + Vec3::Constant(margin);
    return std::abs(local.x()) <= half.x() && std::abs(local.y()) <= half.y() &&
           std::abs(local.z()) <= half.z();
}

OrientedBox transform_box(const RigidTransform& t, const OrientedBox& box) {
    const Mat3 r = compose(t, box.pose()).rotation();
    return {t.apply(box.center), box.size, std::atan2(r(1, 0), r(0, 0))};
}

OrientedBox box_from_corners(const Eigen::Matrix<double, 3, 8>& c) {
    OrientedBox box;
    box.center = c.rowwise().mean();
    const Vec3 ex = c.col(1) - c.col(0);
    const Vec3 ey = c.col(2) - c.col(0);
    const Vec3 ez = c.col(4) - c.col(0);
    box.size = {ex.norm(), ey.norm(), ez.norm()};
    box.yaw = std::atan2(ex.y(), ex.x());
    return box;
}

std::optional<Interval> ray_aabb_intersect(const Vec3& origin, const Vec3& direction, const Aabb& box,
                                           double t_min, double t_max) {
    double lo = t_min;
    double hi = t_max;
    for (int a = 0; a < 3; ++a) {
        const double d = direction[a];
        if (d == 0.0) {
            if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return std::nullopt;
            continue;
        }
        const double inv = 1.0 / d;
        double t0 = (box.lo[a] - origin[a]) * inv;
        double t1 = (box.hi[a] - origin[a]) * inv;
        if (t0 > t1) std::swap(t0, t1);
        lo = std::max(lo, t0);
        hi = std::min(hi, t1);
        if (hi < lo) return std::nullopt;
    }
    return Interval{lo, hi};
}

std::optional<Interval> ray_box_intersect(const Ray& ray, const OrientedBox& box) {
    const Vec3 o = box.to_local(ray.origin);
    const Vec3 d = box.pose().rotation().transpose() * ray.direction;
    const Vec3 half = 0.5 * box.size;
    return ray_aabb_intersect(o, d, Aabb{-half, half}, 0.0, ray.max_range);
}

RigidTransform kabsch(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst) {
    const Vec3 mu_src = src.rowwise().mean();
    const Vec3 mu_dst = dst.rowwise().mean();
    const Mat3 cov = (dst.colwise() - mu_dst) * (src.colwise() - mu_src).transpose();
    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 s = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
    const Mat3 r = svd.matrixU() * s * svd.matrixV().transpose();
    return {r, mu_dst - r * mu_src};
}

RigidTransform estimate_box_transform(const OrientedBox& canonical, const OrientedBox& observed) {
    if (!canonical.is_valid() || !observed.is_valid()) {
        throw Error(ErrorCode::DegenerateBox, "box has a non-positive dimension");
    }
    return kabsch(observed.corners(), canonical.corners());
}

Aabb Aabb::empty() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {Vec3::Constant(inf), Vec3::Constant(-inf)};
}

Aabb Aabb::of_points(std::span<const Vec3> points) {
    Aabb box = empty();
    for (const Vec3& p : points) box.expand(p);
    return box;
}

double round_to_float(double v) {
    const volatile float f = static_cast<float>(v);
    return f;
}

Vec3 round_to_float(const Vec3& v) { return {round_to_float(v.x()), round_to_float(v.y()), round_to_float(v.z())}; }

} // namespace roadsynth
