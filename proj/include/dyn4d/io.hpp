#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "dyn4d/eval.hpp"
#include "dyn4d/fit.hpp"

namespace dyn4d {

namespace fs = std::filesystem;

// --- images ---------------------------------------------------------------------

/// Binary (P6) or ASCII (P3) PPM with maxval 255. Values are byte / 255.
Map load_image(const fs::path &path);
/// Writes P6. Values are clamped to [0, 1] and rounded half-to-even.
void save_image(const Map &image, const fs::path &path);
/// Single-channel map as a gray P6 image (value replicated).
void save_gray_image(const Map &gray, const fs::path &path);

// --- float maps -----------------------------------------------------------------

/// PFM: "PF" (3 channels) or "Pf" (1 channel), "W H", "-1" (little endian),
/// then float32 rows bottom-up. Round trips are bit-exact.
void save_float_map(const FloatMap &map, const fs::path &path);
FloatMap load_float_map(const fs::path &path);
FloatMap parse_float_map(std::string_view bytes, const std::string &name = "<memory>");
std::string encode_float_map(const FloatMap &map);

/// Double maps go through float32.
void save_map(const Map &map, const fs::path &path);
Map load_map(const fs::path &path);

// --- scenes ---------------------------------------------------------------------

/// Binary scene container; layout in docs/scene_format.md.
std::string encode_scene(const Scene &scene);
Scene decode_scene(std::string_view bytes, const std::string &name = "<memory>");
void save_scene(const Scene &scene, const fs::path &path);
Scene load_scene(const fs::path &path);
/// Rounds every per-Gaussian field to float32, i.e. decode(encode(scene)).
Scene quantize_scene(const Scene &scene);

// --- configuration -------------------------------------------------------------

struct Config {
    FitConfig fit;
    EvalOptions eval;
    double alpha_threshold = 0.5;
    double motion_threshold = 0.05;
    double flow_max_norm = 0.0; // flow color scale; 0 picks the maximum valid magnitude
    std::string initial_depth_map; // optional PFM path

    bool operator==(const Config &other) const;
};

/// Flat key = value text; '#' starts a comment. Unknown keys and malformed
/// values are rejected. Missing keys keep their defaults.
Config parse_config(std::string_view text, const std::string &name = "<memory>");
std::string serialize_config(const Config &config);
Config load_config(const fs::path &path);
void save_config(const Config &config, const fs::path &path);

// --- cameras and trajectories -------------------------------------------------

/// Four lines: "fx fy", "cx cy", "width height", free comment.
CameraIntrinsics parse_intrinsics(std::string_view text, const std::string &name = "<memory>");
std::string serialize_intrinsics(const CameraIntrinsics &K);
CameraIntrinsics load_intrinsics(const fs::path &path);
void save_intrinsics(const CameraIntrinsics &K, const fs::path &path);

/// One pose per line: "timestamp tx ty tz qw qx qy qz" (camera to world).
Trajectory parse_trajectory(std::string_view text, const std::string &name = "<memory>");
std::string serialize_trajectory(const Trajectory &traj);
Trajectory load_trajectory(const fs::path &path);
void save_trajectory(const Trajectory &traj, const fs::path &path);

/// Two-frame trajectory [identity, second camera] of a scene pose, and back.
Trajectory pose_to_trajectory(const RelativePose &pose);
RelativePose trajectory_to_pose(const Trajectory &traj);

// --- reports and visualization ----------------------------------------------------

std::string fit_report_key_values(const FitReport &report);
std::string fit_report_csv(const FitReport &report);

/// Middlebury color wheel: hue from direction, saturation from
/// min(|f| / max_norm, 1). Invalid pixels are black. max_norm <= 0 uses the
/// largest valid magnitude.
Map flow_to_color(const Map &flow, const Mask &valid, double max_norm);

std::string read_file(const fs::path &path);
void write_file(const fs::path &path, std::string_view bytes);

} // namespace dyn4d
