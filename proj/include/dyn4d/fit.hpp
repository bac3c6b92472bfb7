#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dyn4d/losses.hpp"

namespace dyn4d {

/// Base step sizes per parameter family (before the schedule).
struct LearningRates {
    double center = 1e-2;
    double motion = 1e-2;
    double rotation = 1e-3;
    double scale = 1e-3;
    double color = 1e-3;
    double opacity = 1e-3;
    double pose = 1e-3;
    bool operator==(const LearningRates &) const = default;
};

enum class LrSchedule { constant, cosine };

struct FreezeFlags {
    bool center = false;
    bool motion = false;
    bool rotation = false;
    bool scale = false;
    bool color = false;
    bool opacity = false;
    bool pose = false;
    bool operator==(const FreezeFlags &) const = default;
};

struct FitConfig {
    int iterations = 2000;
    LearningRates lr;
    LrSchedule schedule = LrSchedule::cosine;
    double final_lr_fraction = 0.01; // cosine floor as a fraction of the base rate
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    LossWeights weights;
    double initial_depth = 1.0;
    Map initial_depth_map; // optional H x W override
    int sh_degree = 1;
    FreezeFlags freeze;
    std::uint64_t seed = 0;
    double init_jitter = 0.0; // std-dev of seeded depth noise at init, scene units
    RasterSettings raster;
    int log_every = 0; // 0 disables progress logging

    void validate() const;
};

struct IterationRecord {
    int iteration = 0;
    double total = 0.0;
    LossComponents components;
};

struct FitReport {
    std::vector<IterationRecord> trace; // one entry per iteration run
    double seconds = 0.0;
    bool converged = false; // finished every iteration with a finite loss
    std::string message;
};

struct FitResult {
    Scene scene;
    FitReport report;
};

/// One Gaussian per pixel of each image, back-projected at the initial depth;
/// DC color from the pixel, zero motion, identity rotation, ~1 px footprint,
/// opacity 0.5; identity pose; second-frame Gaussians canonicalized.
Scene init_scene(const Map &image_t, const Map &image_t1, const CameraIntrinsics &K, const FitConfig &config);

/// Adam in the raw chart on the full objective. Zero iterations return the
/// scene unchanged.
FitResult optimize(Scene scene, const Map &image_t, const Map &image_t1, const Supervision &sup,
                   const FitConfig &config);

double psnr(const Map &a, const Map &b);

// --- synthetic scenes ----------------------------------------------------------

struct SyntheticSpec {
    int width = 64;
    int height = 64;
    double focal = 64.0;
    double plane_depth = 3.0;
    double plane_tilt = 0.15;       // radians about the camera x axis
    Vec3 sphere_center = Vec3(0.25, 0.1, 2.2);
    double sphere_radius = 0.45;
    Vec3 sphere_velocity = Vec3(0.12, -0.04, 0.0); // per time step; zero for a static scene
    bool include_sphere = true;
    Vec3 camera_baseline = Vec3(0.2, 0.0, 0.0); // second camera center in canonical coordinates
    double camera_yaw = 0.03;                    // radians about the camera y axis
    double texture_period = 0.5;                 // scene units
    double gt_opacity = 0.95;
    double gt_footprint = 0.6; // Gaussian std-dev in pixels at its own depth
    int sh_degree = 1;

    void validate() const;
};

struct SyntheticScene {
    std::array<Map, 2> images;
    CameraIntrinsics intrinsics;
    Supervision supervision;
    Scene ground_truth;
    /// Per-frame mask of pixels reached by at least one sphere Gaussian.
    std::array<Mask, 2> sphere_coverage;
};

/// Ray-cast textured plane (+ moving sphere) into one Gaussian per pixel per
/// frame, then render images and dense point/flow ground truth from that cloud.
/// The seed perturbs texture phases and the sphere placement.
SyntheticScene make_synthetic_scene(const SyntheticSpec &spec, std::uint64_t seed,
                                    const RasterSettings &settings = {});

} // namespace dyn4d
