#include <gtest/gtest.h>

#include <random>

#include "dyn4d/core.hpp"
#include "dyn4d/sh.hpp"
#include "oracles.hpp"

using namespace dyn4d;

namespace {

Quat random_unit_quat(std::mt19937_64 &rng) {
    std::normal_distribution<double> n;
    return quat_normalize(Quat(n(rng), n(rng), n(rng), n(rng)));
}

RelativePose random_pose(std::mt19937_64 &rng) {
    std::normal_distribution<double> n;
    return {random_unit_quat(rng), Vec3(n(rng), n(rng), n(rng))};
}

void expect_pose_near(const RelativePose &a, const RelativePose &b, double tol) {
    // q and -q are the same rotation.
    const double s = a.q.dot(b.q) < 0 ? -1.0 : 1.0;
    EXPECT_LT((a.q - s * b.q).norm(), tol);
    EXPECT_LT((a.t - b.t).norm(), tol);
}

} // namespace

TEST(Activate, LogisticMidpointAndExpScale) {
    RawGaussian r;
    r.raw.rotation = Quat(2, 0, 0, 0);
    const DynamicGaussian g = activate(r);
    EXPECT_EQ(g.opacity, 0.5);
    EXPECT_EQ(g.scale, Vec3(1, 1, 1));
    EXPECT_EQ(g.rotation, Quat(1, 0, 0, 0));
}

TEST(Activate, ScaleClampedToRange) {
    RawGaussian r;
    r.raw.log_scale = Vec3(-50, 50, 0);
    const DynamicGaussian g = activate(r);
    EXPECT_EQ(g.scale[0], kMinScale);
    EXPECT_EQ(g.scale[1], kMaxScale);
}

TEST(Activate, NonFiniteRejected) {
    RawGaussian r;
    r.raw.center[1] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(activate(r), InvalidParameter);
    RawGaussian z;
    z.raw.rotation.setZero();
    EXPECT_THROW(activate(z), InvalidParameter);
}

TEST(Activate, FuzzedRawsSatisfyInvariants) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 5.0);
    for (int i = 0; i < 2000; ++i) {
        RawGaussian r;
        r.raw.rotation = Quat(n(rng), n(rng), n(rng), n(rng));
        r.raw.log_scale = Vec3(n(rng), n(rng), n(rng)) * 4.0;
        r.raw.opacity_logit = n(rng) * 10.0;
        const DynamicGaussian g = activate(r);
        EXPECT_NEAR(g.rotation.norm(), 1.0, 1e-12);
        EXPECT_TRUE((g.scale.array() >= kMinScale).all() && (g.scale.array() <= kMaxScale).all());
        EXPECT_GE(g.opacity, 0.0);
        EXPECT_LE(g.opacity, 1.0);
    }
}

TEST(Rotation, KnownQuaternions) {
    EXPECT_EQ(quat_to_rotation(Quat(1, 0, 0, 0)), Mat3::Identity());
    const Mat3 R = quat_to_rotation(Quat(0, 1, 0, 0));
    EXPECT_TRUE(R.isApprox(Vec3(1, -1, -1).asDiagonal().toDenseMatrix()));
    EXPECT_THROW(quat_to_rotation(Quat(0, 0, 0, 0)), InvalidParameter);
    EXPECT_THROW(quat_to_rotation(Quat(2, 0, 0, 0)), InvalidParameter);
}

TEST(Rotation, OrthonormalAndMatchesEigen) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 500; ++i) {
        const Quat q = random_unit_quat(rng);
        const Mat3 R = quat_to_rotation(q);
        EXPECT_LT((R.transpose() * R - Mat3::Identity()).norm(), 1e-9);
        EXPECT_NEAR(R.determinant(), 1.0, 1e-9);
        EXPECT_LT((R - oracle::rotation_of(q)).norm(), 1e-12);
    }
}

TEST(Rotation, HamiltonProductComposesRotations) {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 100; ++i) {
        const Quat a = random_unit_quat(rng), b = random_unit_quat(rng);
        EXPECT_LT((quat_to_rotation(quat_multiply(a, b)) - quat_to_rotation(a) * quat_to_rotation(b)).norm(), 1e-12);
    }
}

TEST(Covariance, AxisAlignedCases) {
    EXPECT_TRUE(build_covariance(Quat(1, 0, 0, 0), Vec3(1, 2, 3)).isApprox(Vec3(1, 4, 9).asDiagonal().toDenseMatrix()));
    const Mat3 c = build_covariance(Quat(0, 1, 0, 0), Vec3(1, 2, 3));
    EXPECT_LT((c - Mat3(Vec3(1, 4, 9).asDiagonal())).norm(), 1e-12);
}

TEST(Covariance, SymmetricPsdWithEigenvalueBound) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.01, 3.0);
    for (int i = 0; i < 500; ++i) {
        const Vec3 s(u(rng), u(rng), u(rng));
        const Mat3 c = build_covariance(random_unit_quat(rng), s);
        EXPECT_LT((c - c.transpose()).norm(), 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3> es(c);
        EXPECT_GE(es.eigenvalues().minCoeff(), s.minCoeff() * s.minCoeff() - 1e-9);
    }
}

TEST(Pose, GroupLaws) {
    std::mt19937_64 rng(9);
    const RelativePose a{Quat(1, 0, 0, 0), Vec3(0, 0, 1)}, b{Quat(1, 0, 0, 0), Vec3(0, 0, 2)};
    EXPECT_EQ(compose_pose(a, b).t, Vec3(0, 0, 3));
    for (int i = 0; i < 200; ++i) {
        const RelativePose p = random_pose(rng), q = random_pose(rng), r = random_pose(rng);
        expect_pose_near(compose_pose(RelativePose::identity(), p), p, 1e-12);
        expect_pose_near(invert_pose(invert_pose(p)), p, 1e-9);
        expect_pose_near(compose_pose(compose_pose(p, q), r), compose_pose(p, compose_pose(q, r)), 1e-9);
        const Vec3 x(0.3, -1.2, 2.0);
        EXPECT_LT((compose_pose(p, q).apply(x) - p.apply(q.apply(x))).norm(), 1e-9);
        EXPECT_LT((invert_pose(p).apply(p.apply(x)) - x).norm(), 1e-9);
    }
}

TEST(Canonicalize, WorkedExample) {
    GaussianCloud c;
    RawGaussian g;
    g.frame = Frame::second;
    g.raw.center = Vec3(0, 0, 1);
    g.raw.motion = Vec3(0, 0, 0.5);
    c.gaussians.push_back(g);
    RawGaussian first = g;
    first.frame = Frame::first;
    c.gaussians.push_back(first);
    const GaussianCloud out = canonicalize_second_frame(c);
    EXPECT_TRUE(out.canonicalized);
    EXPECT_EQ(out.gaussians[0].raw.center, Vec3(0, 0, 1.5));
    EXPECT_EQ(out.gaussians[0].raw.motion, Vec3(0, 0, -0.5));
    EXPECT_EQ(out.gaussians[1].raw, first.raw); // first frame untouched
    EXPECT_THROW(canonicalize_second_frame(out), StateError);
}

TEST(Canonicalize, ZeroMotionIsFixedPoint) {
    GaussianParams p;
    p.center = Vec3(0.1, 0.2, 0.3);
    const GaussianParams before = p;
    flip_second_frame(p);
    EXPECT_EQ(p, before);
}

TEST(Canonicalize, FieldLevelInvolutionOnFloat32Values) {
    // Stored scenes hold float32 values; for those the double-precision map
    // mu + v - v is exact, so applying the flip twice is the identity.
    std::mt19937_64 rng(12);
    std::normal_distribution<float> n(0.0f, 3.0f);
    for (int i = 0; i < 5000; ++i) {
        GaussianParams p;
        for (int k = 0; k < 3; ++k) {
            p.center[k] = n(rng);
            p.motion[k] = n(rng);
        }
        const GaussianParams before = p;
        flip_second_frame(p);
        flip_second_frame(p);
        ASSERT_EQ(p, before);
    }
}

TEST(ShColor, DegreeZeroRoundTripsRgb) {
    std::array<Vec3, kMaxShCoeffs> sh{};
    sh.fill(Vec3::Zero());
    sh[0] = rgb_to_sh_dc(Vec3(0.2, 0.5, 0.9));
    const Vec3 c = sh_to_color(0, sh, Vec3(0, 0, 1));
    EXPECT_LT((c - Vec3(0.2, 0.5, 0.9)).norm(), 1e-12);
}

TEST(ShColor, DegreeOneMatchesOracleBasis) {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n;
    for (int i = 0; i < 100; ++i) {
        GaussianParams p;
        for (int k = 0; k < 4; ++k) p.sh[k] = Vec3(n(rng), n(rng), n(rng));
        const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
        EXPECT_LT((sh_to_color(1, p.sh, d) - oracle::sh_color(1, p, d)).norm(), 1e-12);
    }
}

TEST(Intrinsics, Validation) {
    CameraIntrinsics K{50, 50, 16, 16, 32, 32};
    EXPECT_NO_THROW(K.validate());
    K.fx = 0;
    EXPECT_THROW(K.validate(), InvalidParameter);
    K = {50, 50, 40, 16, 32, 32};
    EXPECT_THROW(K.validate(), InvalidParameter);
}
