#include <gtest/gtest.h>

#include "dyn4d/fit.hpp"
#include "dyn4d/grad.hpp"
#include "dyn4d/tasks.hpp"
#include "oracles.hpp"

using namespace dyn4d;

namespace {

const CameraIntrinsics kCam{64, 64, 31, 31, 63, 63};

RawGaussian opaque_at(const Vec3 &center, const Vec3 &motion = Vec3::Zero()) {
    RawGaussian g;
    g.raw.center = center;
    g.raw.motion = motion;
    g.raw.log_scale.setConstant(std::log(0.02));
    g.raw.opacity_logit = 40.0;
    return g;
}

Scene single_gaussian_scene(const RawGaussian &g, const RelativePose &pose = RelativePose::identity()) {
    Scene s;
    s.cloud.sh_degree = 0;
    s.cloud.canonicalized = true;
    s.cloud.gaussians = {g};
    s.pose = pose;
    s.intrinsics = kCam;
    return s;
}

Scene random_scene(std::uint64_t seed, int n = 40) {
    RandomScene rs = make_random_scene(seed, n, 32, 32, 1, 0.0);
    return {rs.cloud, rs.request.view, rs.request.camera};
}

} // namespace

TEST(DerivedDepth, SingleGaussianAndEmptyPixel) {
    const Scene s = single_gaussian_scene(opaque_at(Vec3(0, 0, 2)));
    const RenderOutput out = render_at(s, 0.0, TargetFrame::canonical);
    const DepthMap d = derive_depth(out);
    EXPECT_NEAR(d.depth(31, 31), 2.0, 1e-12);
    EXPECT_TRUE(d.valid(31, 31));
    EXPECT_EQ(d.depth(0, 0), 0.0);
    EXPECT_FALSE(d.valid(0, 0));
}

TEST(DerivedDepth, MatchesCompositedDepthChannel) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Scene s = random_scene(seed);
        const RenderOutput canon = render_at(s, 0.0, TargetFrame::canonical);
        EXPECT_LT(oracle::max_abs_diff(derive_depth(canon).depth, canon.depth), 1e-5);
        const RenderOutput second = render_at(s, 1.0, TargetFrame::second);
        EXPECT_LT(oracle::max_abs_diff(derive_depth(second, s.pose).depth, second.depth), 1e-5);
    }
}

TEST(OpticalFlow, StaticIdentityIsZero) {
    Scene s = random_scene(3);
    s.pose = RelativePose::identity();
    for (auto &g : s.cloud.gaussians) g.raw.motion.setZero();
    const Flow2D f = derive_optical_flow(s);
    for (double v : f.flow.data()) ASSERT_EQ(v, 0.0);
    int valid = 0;
    for (auto v : f.valid.data()) valid += v;
    EXPECT_GT(valid, 0);
}

TEST(OpticalFlow, PureTranslationGivesPinholeParallax) {
    // Camera moved by -t along x: a point at depth Z shifts by fx * t / Z.
    Scene s = random_scene(4, 60);
    for (auto &g : s.cloud.gaussians) g.raw.motion.setZero();
    const double tx = 0.15;
    s.pose = {Quat(1, 0, 0, 0), Vec3(tx, 0, 0)};
    const RenderOutput first = render_at(s, 0.0, TargetFrame::canonical);
    const Flow2D f = derive_optical_flow(s);
    int checked = 0;
    for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
            if (!f.valid(r, c)) continue;
            const double z = first.point(r, c, 2) / first.alpha(r, c);
            EXPECT_NEAR(f.flow(r, c, 0), s.intrinsics.fx * tx / z, 1e-9);
            EXPECT_NEAR(f.flow(r, c, 1), 0.0, 1e-9);
            ++checked;
        }
    }
    EXPECT_GT(checked, 0);
}

TEST(OpticalFlow, SingleMovingPointByHand) {
    const Scene s = single_gaussian_scene(opaque_at(Vec3(0, 0, 2), Vec3(0.2, -0.1, 0.0)));
    const Flow2D f = derive_optical_flow(s);
    ASSERT_TRUE(f.valid(31, 31));
    EXPECT_NEAR(f.flow(31, 31, 0), 64 * 0.1, 1e-9);
    EXPECT_NEAR(f.flow(31, 31, 1), -64 * 0.05, 1e-9);
}

TEST(OpticalFlow, BehindSecondCameraIsInvalid) {
    const Scene s = single_gaussian_scene(opaque_at(Vec3(0, 0, 2), Vec3(0, 0, -3)));
    const Flow2D f = derive_optical_flow(s);
    EXPECT_FALSE(f.valid(31, 31));
    EXPECT_EQ(f.flow(31, 31, 0), 0.0);
}

TEST(SegmentMoving, StaticSceneEmptyAndMonotone) {
    Scene s = random_scene(5);
    const RenderOutput moving = render_at(s, 0.0, TargetFrame::canonical);
    for (auto &g : s.cloud.gaussians) g.raw.motion.setZero();
    const RenderOutput still = render_at(s, 0.0, TargetFrame::canonical);
    for (double thr : {1e-9, 0.01, 0.5}) {
        const Mask m = segment_moving(still, thr);
        for (auto v : m.data()) ASSERT_EQ(v, 0);
    }
    for (double lo : {0.0, 0.01, 0.05, 0.1}) {
        const Mask a = segment_moving(moving, lo), b = segment_moving(moving, lo + 0.03);
        for (std::size_t i = 0; i < a.size(); ++i) ASSERT_LE(b.data()[i], a.data()[i]);
    }
    const Mask z = segment_moving(moving, 0.0);
    for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
            const double n = Vec3(moving.flow(r, c, 0), moving.flow(r, c, 1), moving.flow(r, c, 2)).norm();
            EXPECT_EQ(z(r, c) != 0, n > 0.0 && moving.alpha(r, c) > 0.5);
        }
    }
}

TEST(SegmentMoving, SphereAtTwiceThresholdCoversItsFootprint) {
    const SyntheticScene syn = make_synthetic_scene(SyntheticSpec{}, 1);
    const double speed = SyntheticSpec{}.sphere_velocity.norm();
    const RenderOutput out = render_at(syn.ground_truth, 0.0, TargetFrame::canonical);
    Scene sphere = syn.ground_truth;
    std::erase_if(sphere.cloud.gaussians, [](const RawGaussian &g) { return g.raw.motion.isZero(); });
    const RenderOutput sphere_only = render_at(sphere, 0.0, TargetFrame::canonical);
    const Mask m = segment_moving(out, 0.5 * speed);
    int covered = 0;
    for (int r = 0; r < out.alpha.height(); ++r) {
        for (int c = 0; c < out.alpha.width(); ++c) {
            const double a = sphere_only.alpha(r, c);
            if (std::abs(a - 0.5) < 1e-9) continue; // boundary within rounding
            EXPECT_EQ(m(r, c) != 0, a > 0.5) << r << "," << c;
            covered += m(r, c);
        }
    }
    EXPECT_GT(covered, 0);
}

TEST(Slerp, EndpointsMidpointAndShortestArc) {
    const double angle = 0.4;
    const RelativePose a = RelativePose::identity();
    const RelativePose b{Quat(std::cos(angle / 2), 0, std::sin(angle / 2), 0), Vec3(1, -2, 0.5)};
    const RelativePose s0 = slerp(a, b, 0.0), s1 = slerp(a, b, 1.0), sm = slerp(a, b, 0.5);
    EXPECT_LT((s0.q - a.q).norm(), 1e-9);
    EXPECT_LT((s0.t - a.t).norm(), 1e-9);
    EXPECT_LT((s1.q - b.q).norm(), 1e-9);
    EXPECT_LT((s1.t - b.t).norm(), 1e-9);
    EXPECT_LT((sm.q - Quat(std::cos(angle / 4), 0, std::sin(angle / 4), 0)).norm(), 1e-12);
    EXPECT_LT((sm.t - 0.5 * b.t).norm(), 1e-12);
    const RelativePose flipped{-b.q, b.t};
    const RelativePose fm = slerp(a, flipped, 0.5);
    EXPECT_LT((quat_to_rotation(fm.q) - quat_to_rotation(sm.q)).norm(), 1e-12);
}

TEST(Interpolate4d, EndpointsBitExact) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        const Scene s = random_scene(seed);
        const RenderOutput a = interpolate_4d(s, 0.0, RelativePose::identity());
        const RenderOutput ra = render_at(s, 0.0, TargetFrame::canonical);
        EXPECT_EQ(a.color, ra.color);
        EXPECT_EQ(a.point, ra.point);
        EXPECT_EQ(a.flow, ra.flow);
        const RenderOutput b = interpolate_4d(s, 1.0, s.pose);
        const RenderOutput rb = render_at(s, 1.0, TargetFrame::second);
        EXPECT_EQ(b.color, rb.color);
        EXPECT_EQ(b.point, rb.point);
        EXPECT_EQ(b.depth, rb.depth);
    }
}

TEST(Interpolate4d, MidpointLinearForRigidMotion) {
    // Rigid translation by v observed by a camera translating with it.
    Scene s = random_scene(6, 120);
    const Vec3 v(0.08, 0.02, -0.05);
    for (auto &g : s.cloud.gaussians) {
        g.raw.motion = v;
        g.raw.opacity_logit = 5.0;
    }
    auto view = [&](double dt) { return RelativePose{Quat(1, 0, 0, 0), -dt * v}; };
    const RenderOutput x0 = interpolate_4d(s, 0.0, view(0.0));
    const RenderOutput xm = interpolate_4d(s, 0.5, view(0.5));
    const RenderOutput x1 = interpolate_4d(s, 1.0, view(1.0));
    int checked = 0;
    for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
            if (x0.alpha(r, c) <= 0.99 || xm.alpha(r, c) <= 0.99 || x1.alpha(r, c) <= 0.99) continue;
            for (int k = 0; k < 3; ++k) {
                EXPECT_NEAR(xm.point(r, c, k), 0.5 * (x0.point(r, c, k) + x1.point(r, c, k)), 1e-4);
            }
            ++checked;
        }
    }
    EXPECT_GT(checked, 0);
}

TEST(OpacityMap, FreshInitIsUniformHalf) {
    std::mt19937_64 rng(2);
    const Map img = oracle::random_map(rng, 6, 5, 3);
    const Scene s = init_scene(img, img, {6, 6, 2.5, 2, 6, 5}, FitConfig{});
    const OpacityMaps om = opacity_map(s);
    EXPECT_EQ(om.gaussians.size(), 60u);
    for (const Map &m : om.maps) {
        EXPECT_EQ(m.width(), 6);
        EXPECT_EQ(m.height(), 5);
        for (double v : m.data()) EXPECT_EQ(v, 0.5);
    }
}

TEST(OpacityMap, ArrangedBySourcePixelAndBounded) {
    std::mt19937_64 rng(3);
    const Map img = oracle::random_map(rng, 4, 4, 3);
    Scene s = init_scene(img, img, {4, 4, 1.5, 1.5, 4, 4}, FitConfig{});
    std::normal_distribution<double> n(0.0, 30.0);
    for (auto &g : s.cloud.gaussians) g.raw.opacity_logit = n(rng);
    const OpacityMaps om = opacity_map(s);
    for (const auto &g : s.cloud.gaussians) {
        const int f = g.frame == Frame::first ? 0 : 1;
        EXPECT_EQ(om.maps[f](g.pixel.row, g.pixel.col), logistic(g.raw.opacity_logit));
    }
    for (const auto &e : om.gaussians) {
        EXPECT_GE(e.opacity, 0.0);
        EXPECT_LE(e.opacity, 1.0);
    }
}
