#include <gtest/gtest.h>

#include "dyn4d/eval.hpp"
#include "oracles.hpp"

using namespace dyn4d;

namespace {

Map filled(int w, int h, const Vec3 &v) {
    Map m(w, h, 3);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int k = 0; k < 3; ++k) m(r, c, k) = v[k];
    return m;
}

Map depth_map(int w, int h, double d) { return Map(w, h, 1, d); }

Map scaled(const Map &m, double s) {
    Map o = m;
    for (double &v : o.data()) v *= s;
    return o;
}

double epe_oracle(const Map &a, const Map &b, const Mask &mask) {
    double sum = 0.0;
    int n = 0;
    for (int r = 0; r < a.height(); ++r) {
        for (int c = 0; c < a.width(); ++c) {
            if (!mask.empty() && !mask(r, c)) continue;
            double sq = 0.0;
            for (int k = 0; k < a.channels(); ++k) sq += (a(r, c, k) - b(r, c, k)) * (a(r, c, k) - b(r, c, k));
            sum += std::sqrt(sq);
            ++n;
        }
    }
    return sum / n;
}

RelativePose yaw(double degrees, const Vec3 &t = Vec3::Zero()) {
    const double a = degrees * std::numbers::pi / 180.0;
    return {Quat(std::cos(a / 2), 0, std::sin(a / 2), 0), t};
}

} // namespace

// --- alignment -----------------------------------------------------------------

TEST(MedianAlign, ExactMultiplesAndIdentity) {
    std::mt19937_64 rng(1);
    const Map gt = oracle::random_map(rng, 6, 5, 3, 0.5, 3.0);
    for (AlignStatistic st : {AlignStatistic::norm, AlignStatistic::z_depth}) {
        const AlignedMap a = median_scale_align(scaled(gt, 2.0), gt, {}, st);
        EXPECT_DOUBLE_EQ(a.scale, 0.5);
        EXPECT_NEAR(point_epe(a.map, gt, {}), 0.0, 1e-12);
        EXPECT_EQ(median_scale_align(gt, gt, {}, st).scale, 1.0);
    }
}

TEST(MedianAlign, RobustToSingleOutlier) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Map gt = oracle::random_map(rng, 3, 3, 3, 0.5, 3.0);
        Map pred = oracle::random_map(rng, 3, 3, 3, 0.5, 3.0);
        const double s = median_scale_align(pred, gt, {}).scale;
        // Moving an element that is not the median to the same side keeps the median.
        std::vector<std::pair<double, int>> norms;
        for (int i = 0; i < 9; ++i) norms.push_back({Vec3(pred(i / 3, i % 3, 0), pred(i / 3, i % 3, 1), pred(i / 3, i % 3, 2)).norm(), i});
        std::sort(norms.begin(), norms.end());
        const int top = norms.back().second;
        for (int k = 0; k < 3; ++k) pred(top / 3, top % 3, k) *= 1e6;
        EXPECT_EQ(median_scale_align(pred, gt, {}).scale, s);
    }
}

TEST(MedianAlign, ScaleEquivariant) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Map gt = oracle::random_map(rng, 5, 4, 3, 0.5, 3.0);
        const Map pred = oracle::random_map(rng, 5, 4, 3, 0.5, 3.0);
        const Mask mask = oracle::random_mask(rng, 5, 4, 0.8);
        if (count_valid(mask, 5, 4) == 0) continue;
        const Map a = median_scale_align(pred, gt, mask).map;
        for (double c : {0.25, 3.0, 17.0}) {
            EXPECT_LT(oracle::max_abs_diff(median_scale_align(scaled(pred, c), gt, mask).map, a), 1e-12);
        }
    }
}

TEST(MedianAlign, ZeroMedianSkipped) {
    const Map gt = filled(2, 2, Vec3(0, 0, 2));
    const AlignedMap a = median_scale_align(Map(2, 2, 3), gt, {});
    EXPECT_TRUE(a.skipped);
    EXPECT_EQ(a.scale, 1.0);
}

TEST(MedianAlign, EvenCountUsesMiddleAverage) {
    Map pred(2, 1, 3), gt(2, 1, 3);
    pred(0, 0, 2) = 1.0;
    pred(0, 1, 2) = 3.0;
    gt(0, 0, 2) = 4.0;
    gt(0, 1, 2) = 8.0;
    EXPECT_DOUBLE_EQ(median_scale_align(pred, gt, {}).scale, 3.0);
}

// --- map metrics ---------------------------------------------------------------

TEST(PointEpe, Examples) {
    const Map gt = filled(2, 2, Vec3(0, 0, 2));
    EXPECT_EQ(point_epe(gt, gt, {}), 0.0);
    Map pred = gt;
    pred(0, 0, 1) += 3.0;
    pred(0, 0, 2) += 4.0;
    Mask one(2, 2, 1, 0);
    one(0, 0) = 1;
    EXPECT_EQ(point_epe(pred, gt, one), 5.0);
    EXPECT_EQ(flow_epe3d(pred, gt, one), 5.0);
    EXPECT_THROW(point_epe(pred, gt, Mask(2, 2, 1, 0)), UndefinedMetric);
    EXPECT_THROW(point_epe(pred, filled(3, 2, Vec3::Zero()), {}), ContractError);
}

TEST(PointEpe, MatchesDoubleLoopOracle) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const Map a = oracle::random_map(rng, 9, 7, 3, -2, 2), b = oracle::random_map(rng, 9, 7, 3, -2, 2);
        const Mask m = oracle::random_mask(rng, 9, 7);
        if (count_valid(m, 9, 7) == 0) continue;
        EXPECT_NEAR(point_epe(a, b, m), epe_oracle(a, b, m), 1e-7);
        EXPECT_NEAR(flow_epe3d(a, b, m), epe_oracle(a, b, m), 1e-7);
    }
}

TEST(Depth, AbsRelAndDeltaExamples) {
    const Map gt = depth_map(3, 3, 2.0);
    EXPECT_EQ(depth_abs_rel(gt, gt, {}), 0.0);
    EXPECT_EQ(depth_delta(gt, gt, {}), 100.0);
    EXPECT_NEAR(depth_abs_rel(scaled(gt, 1.3), gt, {}), 0.3, 1e-12);
    EXPECT_EQ(depth_delta(scaled(gt, 1.3), gt, {}), 0.0);
    EXPECT_EQ(depth_delta(scaled(gt, 1.2), gt, {}), 100.0);
    EXPECT_EQ(depth_delta(scaled(gt, 1.0 / 1.2), gt, {}), 100.0);
}

TEST(Depth, NonPositiveGroundTruthExcluded) {
    Map gt = depth_map(2, 1, 2.0);
    gt(0, 1) = 0.0;
    Map pred = gt;
    pred(0, 0) = 3.0;
    pred(0, 1) = 100.0;
    EXPECT_NEAR(depth_abs_rel(pred, gt, {}), 0.5, 1e-12);
    gt(0, 0) = -1.0;
    EXPECT_THROW(depth_abs_rel(pred, gt, {}), UndefinedMetric);
}

TEST(Depth, ThreeChannelMapsUseZ) {
    const Map gt = filled(2, 2, Vec3(5, -5, 2));
    const Map pred = filled(2, 2, Vec3(-9, 9, 2.6));
    EXPECT_NEAR(depth_abs_rel(pred, gt, {}), 0.3, 1e-12);
}

TEST(FlowDelta, Examples) {
    const Map gt = filled(4, 2, Vec3(0.1, 0.2, 0.3));
    EXPECT_EQ(flow_delta3d(gt, gt, {}), 100.0);
    Map off = gt;
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) off(r, c, 0) = 0.0; // error exactly 0.1 along x
    EXPECT_EQ(flow_delta3d(off, gt, {}, 0.1), 0.0);      // strict inequality at the boundary
    const Map zero(4, 2, 3), exact_gt = filled(4, 2, Vec3(0.05, 0, 0));
    EXPECT_EQ(flow_delta3d(zero, exact_gt, {}), 0.0);
    Map half = gt;
    for (int c = 0; c < 4; ++c) half(0, c, 2) += 1.0;
    EXPECT_EQ(flow_delta3d(half, gt, {}), 50.0);
    EXPECT_THROW(flow_delta3d(gt, gt, Mask(4, 2, 1, 0)), UndefinedMetric);
}

TEST(Metrics, BoundedAndInvariantToMaskedValues) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Map gt = oracle::random_map(rng, 6, 6, 3, 0.5, 3.0);
        Map pred = oracle::random_map(rng, 6, 6, 3, 0.5, 3.0);
        const Mask m = oracle::random_mask(rng, 6, 6, 0.6);
        if (count_valid(m, 6, 6) == 0) continue;
        const double e = point_epe(pred, gt, m), ar = depth_abs_rel(pred, gt, m), d = depth_delta(pred, gt, m);
        const double fd = flow_delta3d(pred, gt, m, 0.5);
        EXPECT_GE(e, 0.0);
        EXPECT_GE(ar, 0.0);
        EXPECT_TRUE(d >= 0.0 && d <= 100.0);
        EXPECT_TRUE(fd >= 0.0 && fd <= 100.0);
        Map gt2 = gt;
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c)
                if (!m(r, c))
                    for (int k = 0; k < 3; ++k) {
                        pred(r, c, k) = -1e9;
                        gt2(r, c, k) = 7e7;
                    }
        EXPECT_EQ(point_epe(pred, gt2, m), e);
        EXPECT_EQ(depth_abs_rel(pred, gt2, m), ar);
        EXPECT_EQ(depth_delta(pred, gt2, m), d);
        EXPECT_EQ(flow_delta3d(pred, gt2, m, 0.5), fd);
        EXPECT_EQ(median_scale_align(pred, gt2, m).scale, median_scale_align(pred, gt, m).scale);
    }
}

// --- trajectories --------------------------------------------------------------

TEST(Trajectory, ExactPredictionIsZero) {
    const Trajectory gt{{0.0, RelativePose::identity()}, {1.0, yaw(5, Vec3(0.2, 0, 0))}, {2.0, yaw(9, Vec3(0.5, 0.1, 0))}};
    EXPECT_NEAR(pose_ate(gt, gt), 0.0, 1e-12);
    const RpeResult r = pose_rpe(gt, gt);
    EXPECT_NEAR(r.trans, 0.0, 1e-12);
    EXPECT_NEAR(r.rot, 0.0, 1e-9);
}

TEST(Trajectory, AteInvariantToGlobalTransforms) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n;
    Trajectory gt;
    for (int i = 0; i < 6; ++i) gt.push_back({double(i), {quat_normalize(Quat(1, 0.1 * n(rng), 0.1 * n(rng), 0.1 * n(rng))), Vec3(n(rng), n(rng), n(rng))}});
    const RelativePose g{quat_normalize(Quat(0.8, 0.3, -0.2, 0.4)), Vec3(3, -1, 2)};
    Trajectory rigid = gt, similar = gt;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        rigid[i].pose = compose_pose(g, gt[i].pose);
        similar[i].pose = rigid[i].pose;
        similar[i].pose.t *= 2.5;
    }
    EXPECT_NEAR(pose_ate(rigid, gt), 0.0, 1e-9);
    EXPECT_NEAR(pose_ate(rigid, gt, TrajectoryAlignment::se3), 0.0, 1e-9);
    EXPECT_NEAR(pose_ate(similar, gt), 0.0, 1e-9);
    EXPECT_GT(pose_ate(similar, gt, TrajectoryAlignment::se3), 1e-3);
}

TEST(Trajectory, PureRelativeRotationErrorInDegrees) {
    const Trajectory gt{{0.0, RelativePose::identity()}, {1.0, yaw(20, Vec3(0.2, 0, 0))}};
    const Trajectory pred{{0.0, RelativePose::identity()}, {1.0, yaw(30, Vec3(0.2, 0, 0))}};
    const RpeResult r = pose_rpe(pred, gt);
    EXPECT_NEAR(r.rot, 10.0, 1e-9);
    EXPECT_NEAR(r.trans, 0.0, 1e-12);
}

TEST(Trajectory, LengthMismatchRejected) {
    const Trajectory a{{0.0, RelativePose::identity()}, {1.0, RelativePose::identity()}};
    const Trajectory b{{0.0, RelativePose::identity()}};
    EXPECT_THROW(pose_ate(a, b), ContractError);
    EXPECT_THROW(pose_rpe(a, b), ContractError);
}

// --- report --------------------------------------------------------------------

TEST(Report, WeightedPerValidPixelAveraging) {
    // Frame 0: one valid pixel with error 0. Frame 1: three valid pixels with error 4.
    const Map gt = filled(2, 2, Vec3(0, 0, 2));
    Mask m0(2, 2, 1, 0), m1(2, 2, 1, 1);
    m0(0, 0) = 1;
    m1(0, 0) = 0;
    Map p1 = gt;
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) p1(r, c, 0) += 4.0;
    const std::vector<EvalFrame> pred{{gt, {}, {}, {}}, {p1, {}, {}, {}}};
    const std::vector<EvalFrame> truth{{gt, {}, m0, {}}, {gt, {}, m1, {}}};
    EvalOptions opt;
    opt.align = false;
    opt.mode = AveragingMode::per_frame;
    const MetricReport pf = evaluate(pred, truth, opt);
    opt.mode = AveragingMode::per_valid_pixel;
    const MetricReport pv = evaluate(pred, truth, opt);
    EXPECT_EQ(pf.value("point_epe"), 2.0);
    EXPECT_EQ(pv.value("point_epe"), 3.0);
    EXPECT_EQ(pv.find("point_epe")->count, 4u);
}

TEST(Report, SingleFrameModesAgreeAndExactIsZero) {
    std::mt19937_64 rng(7);
    const Map gt = oracle::random_map(rng, 5, 5, 3, 0.5, 3.0);
    const Map pred = oracle::random_map(rng, 5, 5, 3, 0.5, 3.0);
    const Map flow = oracle::random_map(rng, 5, 5, 3, -0.2, 0.2);
    const std::vector<EvalFrame> p{{pred, flow, {}, {}}}, g{{gt, scaled(flow, 0.5), {}, {}}};
    EvalOptions opt;
    const MetricReport a = evaluate(p, g, opt);
    opt.mode = AveragingMode::per_valid_pixel;
    const MetricReport b = evaluate(p, g, opt);
    for (const Metric &m : a.metrics) EXPECT_DOUBLE_EQ(m.value, b.value(m.name)) << m.name;

    const Trajectory traj{{0.0, RelativePose::identity()}, {1.0, yaw(3, Vec3(0.2, 0, 0))}};
    const MetricReport exact = evaluate(g, g, EvalOptions{}, traj, traj);
    for (const Metric &m : exact.metrics) {
        if (m.name == "depth_delta" || m.name == "flow_delta3d") {
            EXPECT_EQ(m.value, 100.0) << m.name;
        } else {
            EXPECT_NEAR(m.value, 0.0, 1e-9) << m.name;
        }
        EXPECT_GT(m.count, 0u);
    }
    EXPECT_NE(exact.to_table().find("point_epe"), std::string::npos);
    EXPECT_NE(exact.to_key_value().find("ate="), std::string::npos);
}

TEST(Report, FrameCountMismatchRejected) {
    const std::vector<EvalFrame> one(1), two(2);
    EXPECT_THROW(evaluate(one, two), ContractError);
}
