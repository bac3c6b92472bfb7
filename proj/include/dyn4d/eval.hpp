#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dyn4d/core.hpp"
#include "dyn4d/grid.hpp"

namespace dyn4d {

// An empty mask means every pixel is valid.

enum class AlignStatistic { z_depth, norm };

struct AlignedMap {
    Map map;
    double scale = 1.0;
    bool skipped = false; // zero or non-finite median prediction; map left unscaled
};

/// Scales pred by median(stat(gt)) / median(stat(pred)) over valid pixels.
AlignedMap median_scale_align(const Map &pred, const Map &gt, const Mask &mask,
                              AlignStatistic stat = AlignStatistic::norm);

std::size_t count_valid(const Mask &mask, int width, int height);

/// Mean per-pixel L2 error over valid pixels.
double point_epe(const Map &pred, const Map &gt, const Mask &mask);
double flow_epe3d(const Map &pred, const Map &gt, const Mask &mask);

/// Mean |pred - gt| / gt. Pixels with gt <= 0 are excluded with a warning.
double depth_abs_rel(const Map &pred, const Map &gt, const Mask &mask);
/// Percentage of pixels with max(pred/gt, gt/pred) < ratio.
double depth_delta(const Map &pred, const Map &gt, const Mask &mask, double ratio = 1.25);
/// Percentage of pixels with ||pred - gt|| < radius.
double flow_delta3d(const Map &pred, const Map &gt, const Mask &mask, double radius = 0.05);

/// Camera-to-world poses.
struct TimedPose {
    double timestamp = 0.0;
    RelativePose pose;
};
using Trajectory = std::vector<TimedPose>;

enum class TrajectoryAlignment { sim3, se3 };

/// RMSE of camera positions after closed-form alignment of pred onto gt.
double pose_ate(const Trajectory &pred, const Trajectory &gt, TrajectoryAlignment mode = TrajectoryAlignment::sim3);

struct RpeResult {
    double trans = 0.0; // RMSE of relative translation residuals
    double rot = 0.0;   // RMSE of relative rotation angle, degrees
};
RpeResult pose_rpe(const Trajectory &pred, const Trajectory &gt);

enum class AveragingMode { per_frame, per_valid_pixel };

struct Metric {
    std::string name;
    double value = 0.0;
    std::string unit;
    std::size_t count = 0; // pixels (or pose pairs) used
};

struct MetricReport {
    AveragingMode mode = AveragingMode::per_frame;
    std::vector<Metric> metrics;
    std::vector<std::string> notes;

    const Metric *find(const std::string &name) const;
    double value(const std::string &name) const; // throws if absent
    std::string to_table() const;
    std::string to_key_value() const;
};

/// One frame of predictions or ground truth. Depth is the z component of the
/// point map. Empty maps skip the corresponding metrics.
struct EvalFrame {
    Map points;
    Map flow;
    Mask point_valid;
    Mask flow_valid;
};

struct EvalOptions {
    AveragingMode mode = AveragingMode::per_frame;
    bool align = true;
    AlignStatistic point_statistic = AlignStatistic::z_depth;
    double delta_ratio = 1.25;
    double flow_radius = 0.05;
    TrajectoryAlignment trajectory_alignment = TrajectoryAlignment::sim3;
};

/// Masks come from the ground-truth frames.
MetricReport evaluate(const std::vector<EvalFrame> &pred, const std::vector<EvalFrame> &gt,
                      const EvalOptions &options = {}, const std::optional<Trajectory> &pred_traj = std::nullopt,
                      const std::optional<Trajectory> &gt_traj = std::nullopt);

std::string mode_name(AveragingMode mode);

} // namespace dyn4d
