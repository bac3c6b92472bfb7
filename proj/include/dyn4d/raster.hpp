#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "dyn4d/core.hpp"
#include "dyn4d/grid.hpp"

namespace dyn4d {

struct RasterSettings {
    double cov2d_epsilon = 0.3;     // px^2 added to the 2D covariance diagonal
    double cutoff_sigma = 3.0;      // footprint radius in standard deviations
    double z_near = 0.01;
    double min_transmittance = 1e-4;
    Vec3 background = Vec3::Zero(); // color channel only
    int tile_size = 16;
    int threads = 1;
};

enum Channel : unsigned {
    kColor = 1u << 0,
    kPoint = 1u << 1,
    kFlow = 1u << 2,
    kDepth = 1u << 3,
    kAlpha = 1u << 4,
    kAllChannels = kColor | kPoint | kFlow | kDepth | kAlpha,
};

struct RenderRequest {
    CameraIntrinsics camera;
    RelativePose view; // canonical -> camera; identity is the first camera
    double dt = 0.0;   // time offset from the first frame
    unsigned channels = kAllChannels;
};

/// Composited maps. Point and flow are premultiplied by alpha; maps for
/// channels that were not requested are left empty.
struct RenderOutput {
    Map color; // H x W x 3
    Map point; // H x W x 3, canonical coordinates
    Map flow;  // H x W x 3
    Map depth; // H x W, composited camera z
    Map alpha; // H x W
    bool extrapolated = false; // dt outside [0, 1]
};

struct Projection {
    Vec2 mean;
    Mat2 cov;
    double depth;
};

/// Moves every center by dt * motion. dt outside [0, 1] is allowed.
GaussianCloud advect(const GaussianCloud &cloud, double dt);

/// EWA projection of a single (already advected) Gaussian. Returns nullopt when
/// culled: behind z_near, singular footprint, or fully outside the image.
std::optional<Projection> project_gaussian(const DynamicGaussian &g, const RelativePose &view,
                                           const CameraIntrinsics &K, const RasterSettings &settings = {});

/// Forward state of one render request. Keeps everything the backward pass
/// needs; see grad.hpp.
class Rasterizer {
public:
    struct Splat {
        bool visible = false;
        Vec3 position;  // advected center, canonical frame
        Vec3 cam;       // position in camera frame
        Vec2 mean;      // pixel coordinates
        Mat2 cov;       // regularized 2D covariance
        Mat2 conic;     // inverse of cov
        Mat3 cov3;      // 3D covariance
        Mat3 rot;       // Gaussian rotation
        Vec3 color;
        std::array<bool, 3> color_clamped{};
        Vec3 dir;       // unit viewing direction
        double dir_len = 1.0;
        double opacity = 0.0;
        double radius = 0.0;
    };

    /// Keeps a reference to `cloud`; it must outlive the rasterizer.
    Rasterizer(const GaussianCloud &cloud, const RenderRequest &request, const RasterSettings &settings = {});
    Rasterizer(GaussianCloud &&, const RenderRequest &, const RasterSettings & = {}) = delete;

    const RenderOutput &output() const { return output_; }
    const GaussianCloud &cloud() const { return *cloud_; }
    const RenderRequest &request() const { return request_; }
    const RasterSettings &settings() const { return settings_; }
    const std::vector<DynamicGaussian> &activated() const { return activated_; }
    const std::vector<Splat> &splats() const { return splats_; }
    const Mat3 &view_rotation() const { return view_rot_; }
    int tiles_x() const { return tiles_x_; }
    int tiles_y() const { return tiles_y_; }
    /// Depth-ordered Gaussian indices overlapping each tile.
    const std::vector<std::vector<int>> &tile_lists() const { return tile_lists_; }

    /// Hash of every pixel's ordered contributor list plus the color and scale
    /// clamp states. Equal signatures mean the render took the same discrete
    /// branches, so the output is smooth between the two parameter sets.
    std::uint64_t structure_signature() const;

    struct Contributor {
        int gaussian;
        int slot;     // position in the tile list
        double g;     // 2D density at the pixel (peak 1)
        double alpha; // opacity * g
        double transmittance; // before this contributor
    };

    /// Contributors of one pixel in front-to-back order, including early
    /// termination. Returns the final transmittance.
    double pixel_contributors(int row, int col, std::vector<Contributor> &out) const;

private:
    void project_all();
    void bin_tiles();
    void composite();

    const GaussianCloud *cloud_;
    RenderRequest request_;
    RasterSettings settings_;
    Mat3 view_rot_;
    Vec3 cam_center_;
    std::vector<DynamicGaussian> activated_;
    std::vector<Splat> splats_;
    int tiles_x_ = 0;
    int tiles_y_ = 0;
    std::vector<std::vector<int>> tile_lists_;
    RenderOutput output_;
};

RenderOutput rasterize(const GaussianCloud &cloud, const RenderRequest &request,
                       const RasterSettings &settings = {});

enum class TargetFrame { canonical, second };

/// Renders the scene at time offset dt from the first camera (canonical) or
/// from the second camera (view = scene pose).
RenderOutput render_at(const Scene &scene, double dt, TargetFrame target, const RasterSettings &settings = {},
                       unsigned channels = kAllChannels);

/// Divides point/flow by alpha where alpha > min_alpha (visualization only).
RenderOutput unpremultiply(const RenderOutput &out, double min_alpha = 1e-6);

} // namespace dyn4d
