#pragma once

#include <array>
#include <optional>

#include "dyn4d/grad.hpp"

namespace dyn4d {

struct LossWeights {
    double point = 1.0;
    double pose = 1.0;
    double lpips = 0.05; // weight of the (1 - SSIM) / 2 perceptual term
    double smooth = 0.1;

    void validate() const;
    bool operator==(const LossWeights &) const = default;
};

/// Ground truth for one frame, in canonical coordinates. Empty maps disable
/// the corresponding term; an empty mask with a non-empty map means "all valid".
struct FrameSupervision {
    Map points; // H x W x 3
    Mask point_valid;
    Map flow; // H x W x 3, forward motion t -> t+1
    Mask flow_valid;
};

struct Supervision {
    std::array<FrameSupervision, 2> frames;
    std::optional<RelativePose> pose;
};

/// Value plus gradients of one loss term: cotangents for the renders of
/// frame t (index 0) and t+1 (index 1), and direct gradients in the raw chart
/// (per-Gaussian fields and the scene pose).
struct LossResult {
    double value = 0.0;
    std::array<Cotangents, 2> cotangents;
    ParamGradients direct;
};

/// Sum over frames of (1/|valid|) * (sum ||v - V_gt|| over Gaussians of that
/// frame + sum ||V - V_gt|| over pixels), valid pixels only. Each Gaussian is
/// matched to the ground truth at its source pixel; its motion is the
/// canonical (forward) motion.
LossResult loss_motion(const GaussianCloud &cloud, const Map &flow_t, const Map &flow_t1, const Supervision &sup);

/// Same structure with centers and point maps. A second-frame Gaussian's
/// center is taken at its own time, mu + v.
LossResult loss_point(const GaussianCloud &cloud, const Map &point_t, const Map &point_t1, const Supervision &sup);

/// ||q - q_gt|| + ||t - t_gt|| with q sign-aligned to q_gt. Gradient goes to
/// the raw (unnormalized) quaternion of `pred`.
LossResult loss_pose(const RelativePose &pred, const RelativePose &gt);

/// Per frame: mse + w_lpips * (1 - SSIM) / 2. SSIM uses an 11x11 Gaussian
/// window (sigma 1.5) over valid window positions. Targets outside [0, 1] are
/// clamped with a warning.
LossResult loss_photometric(const Map &render_t, const Map &render_t1, const Map &image_t, const Map &image_t1,
                            double w_lpips);

/// Edge-aware smoothness of point and flow maps of both frames.
LossResult loss_smooth(const Map &point_t, const Map &point_t1, const Map &flow_t, const Map &flow_t1,
                       const Map &image_t, const Map &image_t1);

double mse(const Map &a, const Map &b);
double ssim(const Map &a, const Map &b);

struct LossComponents {
    double motion = 0.0;
    double point = 0.0;
    double pose = 0.0;
    double photo = 0.0;
    double smooth = 0.0;
};

struct TotalLoss {
    double value = 0.0;
    LossComponents components;
    ParamGradients gradient; // raw chart; pose entry is the scene pose
};

/// L = L_motion + w_point L_point + w_pose L_pose + L_photo + w_smooth L_smooth.
/// `render_t` must be the identity-view render at dt = 0 and `render_t1` the
/// scene-pose render at dt = 1, both of scene.cloud.
TotalLoss loss_total(const Scene &scene, const Rasterizer &render_t, const Rasterizer &render_t1,
                     const std::array<Map, 2> &images, const Supervision &sup, const LossWeights &weights);

/// Renders both frames and evaluates loss_total.
TotalLoss evaluate_objective(const Scene &scene, const std::array<Map, 2> &images, const Supervision &sup,
                             const LossWeights &weights, const RasterSettings &settings = {});

/// Scalar objective only (finite-difference oracle path; no backward pass).
double objective_value(const Scene &scene, const std::array<Map, 2> &images, const Supervision &sup,
                       const LossWeights &weights, const RasterSettings &settings = {});

} // namespace dyn4d
