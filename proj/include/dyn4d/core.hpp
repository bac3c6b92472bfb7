#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "dyn4d/errors.hpp"

namespace dyn4d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Quaternions are stored as (w, x, y, z) with Hamilton multiplication.
using Quat = Vec4;

inline constexpr int kMaxShDegree = 2;
inline constexpr int kMaxShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);

inline constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

inline constexpr double kMinScale = 1e-4;
inline constexpr double kMaxScale = 1e2;

enum class Frame : std::uint8_t { first = 0, second = 1 };

struct PixelIndex {
    std::int32_t row = 0;
    std::int32_t col = 0;
    bool operator==(const PixelIndex &) const = default;
};

/// Unconstrained optimization chart of one Gaussian. The same layout doubles
/// as the gradient record for these parameters.
struct GaussianParams {
    Vec3 center = Vec3::Zero();
    Vec3 motion = Vec3::Zero();
    Quat rotation = Quat(1, 0, 0, 0);
    Vec3 log_scale = Vec3::Zero();
    std::array<Vec3, kMaxShCoeffs> sh{}; // sh[k] holds coefficient k for R, G, B
    double opacity_logit = 0.0;

    GaussianParams() { sh.fill(Vec3::Zero()); }

    static GaussianParams zero() {
        GaussianParams p;
        p.rotation.setZero();
        return p;
    }

    bool operator==(const GaussianParams &o) const;
};

/// One raw Gaussian plus the pixel it was spawned from.
struct RawGaussian {
    GaussianParams raw;
    Frame frame = Frame::first;
    PixelIndex pixel;
};

/// Activated (constrained) Gaussian.
struct DynamicGaussian {
    Vec3 center;
    Vec3 motion;
    Quat rotation; // unit
    Vec3 scale;    // in [kMinScale, kMaxScale]
    std::array<Vec3, kMaxShCoeffs> sh;
    double opacity; // in [0, 1]
    Frame frame = Frame::first;
    PixelIndex pixel;
};

struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;

    void validate() const;
    bool operator==(const CameraIntrinsics &) const = default;
};

/// Rigid transform x' = R(q) x + t. As the scene pose it maps canonical
/// (first camera) coordinates into second-camera coordinates.
struct RelativePose {
    Quat q = Quat(1, 0, 0, 0);
    Vec3 t = Vec3::Zero();

    static RelativePose identity() { return {}; }
    Mat3 rotation() const;
    Vec3 apply(const Vec3 &x) const;
    /// Camera center expressed in the source frame, -R^T t.
    Vec3 center() const;
    bool operator==(const RelativePose &) const = default;
};

struct GaussianCloud {
    int sh_degree = 1;
    bool canonicalized = false;
    std::vector<RawGaussian> gaussians;

    std::size_t size() const { return gaussians.size(); }
    std::size_t count(Frame f) const;
    void validate() const;
};

struct Scene {
    GaussianCloud cloud;
    RelativePose pose;
    CameraIntrinsics intrinsics;
};

// --- activations --------------------------------------------------------------

double logistic(double x);
double logit(double p);

/// Throws InvalidParameter on non-finite input.
DynamicGaussian activate(const RawGaussian &raw);

// --- quaternion / rotation algebra -------------------------------------------

Quat quat_normalize(const Quat &q);
Quat quat_multiply(const Quat &a, const Quat &b);
Quat quat_conjugate(const Quat &q);

/// Requires a unit quaternion (tolerance 1e-6).
Mat3 quat_to_rotation(const Quat &q);

/// Rotation formula evaluated on an arbitrary 4-vector; no normalization.
Mat3 quat_to_rotation_unchecked(const Quat &q);

/// Pulls a gradient w.r.t. the entries of R(q) back to the quaternion entries
/// (polynomial rotation formula, no normalization).
Quat rotation_grad_to_quat(const Quat &q, const Mat3 &dR);

/// Pulls a gradient w.r.t. q / |q| back to the unnormalized q.
Quat normalize_grad(const Quat &raw, const Quat &dq_unit);

/// Sigma = R diag(s)^2 R^T.
Mat3 build_covariance(const Quat &r, const Vec3 &s);

// --- poses --------------------------------------------------------------------

/// a after b: x -> a(b(x)).
RelativePose compose_pose(const RelativePose &a, const RelativePose &b);
RelativePose invert_pose(const RelativePose &a);

// --- canonicalization ---------------------------------------------------------

/// Second-frame map mu' = mu + v, v' = -v (an involution).
void flip_second_frame(GaussianParams &p);

/// Applies flip_second_frame to every second-frame Gaussian and sets the flag.
/// Throws StateError if the cloud is already canonicalized.
GaussianCloud canonicalize_second_frame(GaussianCloud cloud);

} // namespace dyn4d
