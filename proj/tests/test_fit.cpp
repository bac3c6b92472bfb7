#include <gtest/gtest.h>

#include "dyn4d/fit.hpp"
#include "dyn4d/sh.hpp"
#include "dyn4d/tasks.hpp"
#include "oracles.hpp"

using namespace dyn4d;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.width = 24;
    s.height = 24;
    s.focal = 24.0;
    return s;
}

bool same_cloud(const GaussianCloud &a, const GaussianCloud &b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a.gaussians[i].raw == b.gaussians[i].raw)) return false;
    }
    return true;
}

} // namespace

TEST(InitScene, CountsAndPrincipalRay) {
    const Map img2(2, 2, 3, 0.25);
    FitConfig cfg;
    const Scene s2 = init_scene(img2, img2, {2, 2, 0.5, 0.5, 2, 2}, cfg);
    EXPECT_EQ(s2.cloud.size(), 8u);
    EXPECT_EQ(s2.cloud.count(Frame::first), 4u);
    EXPECT_EQ(s2.cloud.count(Frame::second), 4u);

    cfg.initial_depth = 2.5;
    const Map img3(3, 3, 3, 0.25);
    const Scene s3 = init_scene(img3, img3, {3, 3, 1, 1, 3, 3}, cfg);
    bool found = false;
    for (const auto &g : s3.cloud.gaussians) {
        if (g.frame == Frame::first && g.pixel.row == 1 && g.pixel.col == 1) {
            EXPECT_EQ(g.raw.center, Vec3(0, 0, 2.5));
            found = true;
        }
    }
    EXPECT_TRUE(found);
}

TEST(InitScene, FieldDefaults) {
    std::mt19937_64 rng(1);
    const Map a = oracle::random_map(rng, 5, 4, 3), b = oracle::random_map(rng, 5, 4, 3);
    const Scene s = init_scene(a, b, {5, 5, 2, 1.5, 5, 4}, FitConfig{});
    EXPECT_TRUE(s.cloud.canonicalized);
    EXPECT_EQ(s.pose, RelativePose::identity());
    for (const auto &g : s.cloud.gaussians) {
        EXPECT_EQ(g.raw.motion, Vec3::Zero());
        EXPECT_EQ(g.raw.rotation, Quat(1, 0, 0, 0));
        EXPECT_EQ(g.raw.opacity_logit, 0.0);
        const Map &img = g.frame == Frame::first ? a : b;
        const Vec3 rgb(img(g.pixel.row, g.pixel.col, 0), img(g.pixel.row, g.pixel.col, 1),
                       img(g.pixel.row, g.pixel.col, 2));
        EXPECT_LT((g.raw.sh[0] - rgb_to_sh_dc(rgb)).norm(), 1e-12);
        for (int k = 1; k < kMaxShCoeffs; ++k) EXPECT_EQ(g.raw.sh[k], Vec3::Zero());
    }
}

TEST(InitScene, DepthMapOverrideAndSizeMismatch) {
    const Map img(3, 3, 3, 0.5);
    FitConfig cfg;
    cfg.initial_depth_map = Map(3, 3, 1, 4.0);
    const Scene s = init_scene(img, img, {3, 3, 1, 1, 3, 3}, cfg);
    for (const auto &g : s.cloud.gaussians) EXPECT_NEAR(g.raw.center.z(), 4.0, 1e-12);
    EXPECT_THROW(init_scene(img, Map(2, 3, 3), {3, 3, 1, 1, 3, 3}, FitConfig{}), ContractError);
}

TEST(InitScene, InitialRenderReproducesImage) {
    const SyntheticScene syn = make_synthetic_scene(SyntheticSpec{}, 1);
    const Scene s = init_scene(syn.images[0], syn.images[1], syn.intrinsics, FitConfig{});
    EXPECT_GT(psnr(render_at(s, 0.0, TargetFrame::canonical).color, syn.images[0]), 20.0);
}

TEST(Psnr, KnownValues) {
    const Map a(4, 4, 3, 0.5);
    Map b = a;
    EXPECT_TRUE(std::isinf(psnr(a, b)));
    for (double &v : b.data()) v += 0.1;
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
}

TEST(Optimize, ZeroIterationsReturnsSceneUnchanged) {
    const SyntheticScene syn = make_synthetic_scene(small_spec(), 2);
    FitConfig cfg;
    cfg.iterations = 0;
    const Scene init = init_scene(syn.images[0], syn.images[1], syn.intrinsics, cfg);
    const FitResult r = optimize(init, syn.images[0], syn.images[1], syn.supervision, cfg);
    EXPECT_TRUE(same_cloud(r.scene.cloud, init.cloud));
    EXPECT_EQ(r.scene.pose, init.pose);
    EXPECT_TRUE(r.report.trace.empty());
}

TEST(Optimize, TraceLengthAndLossDecreases) {
    const SyntheticScene syn = make_synthetic_scene(small_spec(), 3);
    FitConfig cfg;
    cfg.iterations = 40;
    const Scene init = init_scene(syn.images[0], syn.images[1], syn.intrinsics, cfg);
    const FitResult r = optimize(init, syn.images[0], syn.images[1], syn.supervision, cfg);
    ASSERT_EQ(r.report.trace.size(), 40u);
    EXPECT_TRUE(r.report.converged);
    EXPECT_LT(r.report.trace.back().total, r.report.trace.front().total);
    for (const auto &g : r.scene.cloud.gaussians) EXPECT_NEAR(g.raw.rotation.norm(), 1.0, 1e-12);
    EXPECT_NEAR(r.scene.pose.q.norm(), 1.0, 1e-12);
}

TEST(Optimize, FrozenFamiliesStayBitIdentical) {
    const SyntheticScene syn = make_synthetic_scene(small_spec(), 4);
    FitConfig cfg;
    cfg.iterations = 8;
    cfg.freeze.pose = true;
    cfg.freeze.center = true;
    const Scene init = init_scene(syn.images[0], syn.images[1], syn.intrinsics, cfg);
    const FitResult r = optimize(init, syn.images[0], syn.images[1], syn.supervision, cfg);
    EXPECT_EQ(r.scene.pose, init.pose);
    bool moved = false;
    for (std::size_t i = 0; i < init.cloud.size(); ++i) {
        EXPECT_EQ(r.scene.cloud.gaussians[i].raw.center, init.cloud.gaussians[i].raw.center);
        moved = moved || r.scene.cloud.gaussians[i].raw.motion != init.cloud.gaussians[i].raw.motion;
    }
    EXPECT_TRUE(moved);
}

TEST(Optimize, DeterministicAcrossRunsAndThreads) {
    const SyntheticScene syn = make_synthetic_scene(small_spec(), 5);
    FitConfig cfg;
    cfg.iterations = 6;
    cfg.init_jitter = 0.05;
    cfg.seed = 11;
    const Scene init = init_scene(syn.images[0], syn.images[1], syn.intrinsics, cfg);
    const FitResult a = optimize(init, syn.images[0], syn.images[1], syn.supervision, cfg);
    const FitResult b = optimize(init, syn.images[0], syn.images[1], syn.supervision, cfg);
    cfg.raster.threads = 4;
    const FitResult c = optimize(init, syn.images[0], syn.images[1], syn.supervision, cfg);
    EXPECT_TRUE(same_cloud(a.scene.cloud, b.scene.cloud));
    EXPECT_TRUE(same_cloud(a.scene.cloud, c.scene.cloud));
    EXPECT_EQ(a.scene.pose, c.scene.pose);
    for (std::size_t i = 0; i < a.report.trace.size(); ++i) {
        EXPECT_EQ(a.report.trace[i].total, c.report.trace[i].total);
    }
}

TEST(Optimize, JitterDependsOnSeed) {
    const SyntheticScene syn = make_synthetic_scene(small_spec(), 5);
    FitConfig cfg;
    cfg.init_jitter = 0.05;
    cfg.seed = 1;
    const Scene a = init_scene(syn.images[0], syn.images[1], syn.intrinsics, cfg);
    cfg.seed = 2;
    const Scene b = init_scene(syn.images[0], syn.images[1], syn.intrinsics, cfg);
    EXPECT_FALSE(same_cloud(a.cloud, b.cloud));
}

TEST(Optimize, NonFiniteLossAbortsWithReport) {
    const SyntheticScene syn = make_synthetic_scene(small_spec(), 6);
    FitConfig cfg;
    cfg.iterations = 5;
    Scene init = init_scene(syn.images[0], syn.images[1], syn.intrinsics, cfg);
    Supervision sup = syn.supervision;
    sup.frames[0].points(3, 3, 0) = std::numeric_limits<double>::infinity();
    const FitResult r = optimize(init, syn.images[0], syn.images[1], sup, cfg);
    EXPECT_FALSE(r.report.converged);
    EXPECT_FALSE(r.report.message.empty());
}

TEST(Synthetic, StaticSpecHasZeroFlow) {
    SyntheticSpec spec = small_spec();
    spec.sphere_velocity = Vec3::Zero();
    const SyntheticScene syn = make_synthetic_scene(spec, 1);
    for (const auto &fs : syn.supervision.frames) {
        for (double v : fs.flow.data()) ASSERT_EQ(v, 0.0);
    }
}

TEST(Synthetic, FlowNonzeroExactlyOnSphereCoverage) {
    const SyntheticScene syn = make_synthetic_scene(SyntheticSpec{}, 3);
    for (int u = 0; u < 2; ++u) {
        const Map &flow = syn.supervision.frames[u].flow;
        int covered = 0;
        for (int r = 0; r < flow.height(); ++r) {
            for (int c = 0; c < flow.width(); ++c) {
                const bool nonzero = flow(r, c, 0) != 0.0 || flow(r, c, 1) != 0.0 || flow(r, c, 2) != 0.0;
                ASSERT_EQ(nonzero, syn.sphere_coverage[u](r, c) != 0) << r << "," << c;
                covered += nonzero;
            }
        }
        EXPECT_GT(covered, 0);
        EXPECT_LT(covered, flow.width() * flow.height());
    }
}

TEST(Synthetic, ImagesAreRendersOfGroundTruth) {
    const SyntheticScene syn = make_synthetic_scene(small_spec(), 2);
    EXPECT_EQ(render_at(syn.ground_truth, 0.0, TargetFrame::canonical).color, syn.images[0]);
    EXPECT_EQ(render_at(syn.ground_truth, 1.0, TargetFrame::second).point, syn.supervision.frames[1].points);
    ASSERT_TRUE(syn.supervision.pose.has_value());
    EXPECT_EQ(*syn.supervision.pose, syn.ground_truth.pose);
    for (double v : syn.images[0].data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Synthetic, GroundTruthIsExactForRenderAndPoseTerms) {
    // The rendered maps reproduce the GT maps bit-exactly, so every per-pixel
    // term and the pose term vanish at the GT parameters.
    const SyntheticScene syn = make_synthetic_scene(SyntheticSpec{}, 1);
    const TotalLoss gt = evaluate_objective(syn.ground_truth, syn.images, syn.supervision, LossWeights{});
    EXPECT_EQ(gt.components.pose, 0.0);
    EXPECT_EQ(gt.components.photo, 0.0);
    const RenderOutput r0 = render_at(syn.ground_truth, 0.0, TargetFrame::canonical);
    const RenderOutput r1 = render_at(syn.ground_truth, 1.0, TargetFrame::second);
    const GaussianCloud none;
    EXPECT_EQ(loss_motion(none, r0.flow, r1.flow, syn.supervision).value, 0.0);
    EXPECT_EQ(loss_point(none, r0.point, r1.point, syn.supervision).value, 0.0);

    SyntheticSpec still;
    still.sphere_velocity = Vec3::Zero();
    const SyntheticScene st = make_synthetic_scene(still, 1);
    const TotalLoss gs = evaluate_objective(st.ground_truth, st.images, st.supervision, LossWeights{});
    EXPECT_EQ(gs.components.motion, 0.0);
}

TEST(Synthetic, GroundTruthLossNotAboveInitLoss) {
    for (std::uint64_t seed : {1, 2}) {
        const SyntheticScene syn = make_synthetic_scene(SyntheticSpec{}, seed);
        const Scene init = init_scene(syn.images[0], syn.images[1], syn.intrinsics, FitConfig{});
        const double at_gt = objective_value(syn.ground_truth, syn.images, syn.supervision, LossWeights{});
        const double at_init = objective_value(init, syn.images, syn.supervision, LossWeights{});
        EXPECT_LE(at_gt, at_init);
    }
}

TEST(Synthetic, RejectsInvalidSpec) {
    SyntheticSpec spec;
    spec.width = 0;
    EXPECT_THROW(make_synthetic_scene(spec, 1), InvalidParameter);
}

TEST(OptimizeSlow, PhotometricOnlyStaticFitReachesTargetPsnr) {
    SyntheticSpec spec;
    spec.include_sphere = false;
    const SyntheticScene syn = make_synthetic_scene(spec, 1);
    FitConfig cfg;
    cfg.iterations = 400;
    const Scene init = init_scene(syn.images[0], syn.images[1], syn.intrinsics, cfg);
    const FitResult r = optimize(init, syn.images[0], syn.images[1], Supervision{}, cfg);
    ASSERT_TRUE(r.report.converged);
    EXPECT_GT(psnr(render_at(r.scene, 0.0, TargetFrame::canonical).color, syn.images[0]), 28.0);
    EXPECT_GT(psnr(render_at(r.scene, 1.0, TargetFrame::second).color, syn.images[1]), 28.0);
    const OpacityMaps om = opacity_map(r.scene);
    double mean = 0.0;
    for (const auto &e : om.gaussians) mean += e.opacity;
    mean /= static_cast<double>(om.gaussians.size());
    EXPECT_LT(mean, 0.9);
}
