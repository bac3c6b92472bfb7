#include "dyn4d/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dyn4d {

namespace {

bool finite(const auto &m) { return m.allFinite(); }

} // namespace

bool GaussianParams::operator==(const GaussianParams &o) const {
    return center == o.center && motion == o.motion && rotation == o.rotation &&
           log_scale == o.log_scale && sh == o.sh && opacity_logit == o.opacity_logit;
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw InvalidParameter("intrinsics: focal lengths must be positive");
    }
    if (width <= 0 || height <= 0) {
        throw InvalidParameter("intrinsics: image size must be positive");
    }
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
        throw InvalidParameter("intrinsics: principal point outside the image");
    }
}

Mat3 RelativePose::rotation() const { return quat_to_rotation(quat_normalize(q)); }

Vec3 RelativePose::apply(const Vec3 &x) const { return rotation() * x + t; }

Vec3 RelativePose::center() const { return -(rotation().transpose() * t); }

std::size_t GaussianCloud::count(Frame f) const {
    return static_cast<std::size_t>(
        std::count_if(gaussians.begin(), gaussians.end(), [f](const RawGaussian &g) { return g.frame == f; }));
}

void GaussianCloud::validate() const {
    if (sh_degree < 0 || sh_degree > kMaxShDegree) {
        throw InvalidParameter("sh degree must be in [0, " + std::to_string(kMaxShDegree) + "]");
    }
}

double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) {
    p = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return std::log(p / (1.0 - p));
}

DynamicGaussian activate(const RawGaussian &raw) {
    const GaussianParams &p = raw.raw;
    bool ok = finite(p.center) && finite(p.motion) && finite(p.rotation) && finite(p.log_scale) &&
              std::isfinite(p.opacity_logit);
    for (const auto &c : p.sh) {
        ok = ok && finite(c);
    }
    if (!ok) {
        throw InvalidParameter("activate: non-finite raw parameter");
    }
    DynamicGaussian g;
    g.center = p.center;
    g.motion = p.motion;
    g.rotation = quat_normalize(p.rotation);
    for (int k = 0; k < 3; ++k) {
        g.scale[k] = std::clamp(std::exp(p.log_scale[k]), kMinScale, kMaxScale);
    }
    g.sh = p.sh;
    g.opacity = logistic(p.opacity_logit);
    g.frame = raw.frame;
    g.pixel = raw.pixel;
    return g;
}

Quat quat_normalize(const Quat &q) {
    const double n = q.norm();
    if (!(n > 1e-12) || !std::isfinite(n)) {
        throw InvalidParameter("quaternion norm is zero or non-finite");
    }
    return q / n;
}

Quat quat_multiply(const Quat &a, const Quat &b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Quat quat_conjugate(const Quat &q) { return {q[0], -q[1], -q[2], -q[3]}; }

Mat3 quat_to_rotation(const Quat &q) {
    const double n = q.norm();
    if (!(n > 1e-12)) {
        throw InvalidParameter("quat_to_rotation: near-zero quaternion");
    }
    if (std::abs(n - 1.0) > 1e-6) {
        throw InvalidParameter("quat_to_rotation: quaternion is not unit length");
    }
    return quat_to_rotation_unchecked(q);
}

Mat3 quat_to_rotation_unchecked(const Quat &q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

Quat rotation_grad_to_quat(const Quat &q, const Mat3 &d) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Quat g;
    g[0] = 2 * (-z * d(0, 1) + y * d(0, 2) + z * d(1, 0) - x * d(1, 2) - y * d(2, 0) + x * d(2, 1));
    g[1] = 2 * (y * d(0, 1) + z * d(0, 2) + y * d(1, 0) - 2 * x * d(1, 1) - w * d(1, 2) + z * d(2, 0) +
                w * d(2, 1) - 2 * x * d(2, 2));
    g[2] = 2 * (-2 * y * d(0, 0) + x * d(0, 1) + w * d(0, 2) + x * d(1, 0) + z * d(1, 2) - w * d(2, 0) +
                z * d(2, 1) - 2 * y * d(2, 2));
    g[3] = 2 * (-2 * z * d(0, 0) - w * d(0, 1) + x * d(0, 2) + w * d(1, 0) - 2 * z * d(1, 1) + y * d(1, 2) +
                x * d(2, 0) + y * d(2, 1));
    return g;
}

Quat normalize_grad(const Quat &raw, const Quat &dq_unit) {
    const double n = raw.norm();
    const Quat u = raw / n;
    return (dq_unit - u * u.dot(dq_unit)) / n;
}

Mat3 build_covariance(const Quat &r, const Vec3 &s) {
    if (!(s.array() > 0.0).all()) {
        throw InvalidParameter("build_covariance: scale must be positive");
    }
    const Mat3 M = quat_to_rotation(r) * s.asDiagonal();
    return M * M.transpose();
}

RelativePose compose_pose(const RelativePose &a, const RelativePose &b) {
    RelativePose out;
    out.q = quat_normalize(quat_multiply(a.q, b.q));
    out.t = a.rotation() * b.t + a.t;
    return out;
}

RelativePose invert_pose(const RelativePose &a) {
    RelativePose out;
    out.q = quat_conjugate(quat_normalize(a.q));
    out.t = -(a.rotation().transpose() * a.t);
    return out;
}

void flip_second_frame(GaussianParams &p) {
    p.center = p.center + p.motion;
    p.motion = -p.motion;
}

GaussianCloud canonicalize_second_frame(GaussianCloud cloud) {
    if (cloud.canonicalized) {
        throw StateError("canonicalize_second_frame: cloud is already canonicalized");
    }
    for (auto &g : cloud.gaussians) {
        if (g.frame == Frame::second) {
            flip_second_frame(g.raw);
        }
    }
    cloud.canonicalized = true;
    return cloud;
}

} // namespace dyn4d
