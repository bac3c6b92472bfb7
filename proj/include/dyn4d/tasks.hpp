#pragma once

#include <array>
#include <vector>

#include "dyn4d/raster.hpp"

namespace dyn4d {

inline constexpr double kDefaultAlphaThreshold = 0.5;

struct DepthMap {
    Map depth; // H x W, zero where alpha is zero
    Mask valid; // alpha > threshold
};

/// Depth as the z coordinate of the point map expressed in `view`. The point
/// map is premultiplied, so this equals the composited depth channel.
DepthMap derive_depth(const RenderOutput &out, const RelativePose &view = RelativePose::identity(),
                      double alpha_threshold = kDefaultAlphaThreshold);

struct Flow2D {
    Map flow;   // H x W x 2, pixel displacement (dx, dy)
    Mask valid;
};

/// Projects the composited 3D flow of the first frame into 2D:
/// pi(K, P (X + V)) - pi(K, X) with X, V alpha-normalized. Pixels with
/// alpha <= threshold or whose advected point falls behind the second camera
/// are invalid (flow 0).
Flow2D derive_optical_flow(const Scene &scene, const RasterSettings &settings = {},
                           double alpha_threshold = kDefaultAlphaThreshold);

/// Same projection from an existing first-frame render.
Flow2D project_scene_flow(const RenderOutput &first_frame, const RelativePose &pose, const CameraIntrinsics &K,
                          double alpha_threshold = kDefaultAlphaThreshold);

/// ||V(p)|| > threshold and A(p) > alpha_threshold, using the premultiplied
/// flow map.
Mask segment_moving(const RenderOutput &out, double threshold, double alpha_threshold = kDefaultAlphaThreshold);

/// Shortest-arc quaternion slerp for the rotation, linear for the translation.
RelativePose slerp(const RelativePose &a, const RelativePose &b, double u);

/// Advects by dt and renders from an arbitrary view.
RenderOutput interpolate_4d(const Scene &scene, double dt, const RelativePose &view,
                            const RasterSettings &settings = {}, unsigned channels = kAllChannels);

struct OpacityEntry {
    Frame frame;
    PixelIndex pixel;
    double opacity;
};

struct OpacityMaps {
    std::array<Map, 2> maps; // per frame, H x W, value of that pixel's source Gaussian
    std::vector<OpacityEntry> gaussians;
};

/// Activated opacity of every Gaussian, also arranged on each frame's pixel grid.
OpacityMaps opacity_map(const Scene &scene);

} // namespace dyn4d
