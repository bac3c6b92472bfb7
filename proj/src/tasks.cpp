#include "dyn4d/tasks.hpp"

#include <cmath>

namespace dyn4d {

namespace {

void require_channels(const RenderOutput &out, bool point, bool flow, const char *op) {
    const bool ok = !out.alpha.empty() && (!point || !out.point.empty()) && (!flow || !out.flow.empty());
    if (!ok) {
        throw ContractError(std::string(op) + " needs a render with the " + (point ? "point, " : "") +
                            (flow ? "flow, " : "") + "alpha channels");
    }
}

Vec3 at(const Map &m, int row, int col) { return Vec3(m(row, col, 0), m(row, col, 1), m(row, col, 2)); }

} // namespace

DepthMap derive_depth(const RenderOutput &out, const RelativePose &view, double alpha_threshold) {
    require_channels(out, true, false, "derive_depth");
    const Mat3 R = quat_to_rotation(quat_normalize(view.q));
    const int h = out.point.height(), w = out.point.width();
    DepthMap d{Map(w, h, 1), Mask(w, h, 1)};
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            const double a = out.alpha(row, col);
            // Premultiplied transform: sum_i w_i (R mu_i + t) = R X + A t.
            const double z = R.row(2).dot(at(out.point, row, col)) + a * view.t.z();
            d.depth(row, col) = a > 0.0 ? z : 0.0;
            d.valid(row, col) = a > alpha_threshold ? 1 : 0;
        }
    }
    return d;
}

Flow2D project_scene_flow(const RenderOutput &first, const RelativePose &pose, const CameraIntrinsics &K,
                          double alpha_threshold) {
    require_channels(first, true, true, "project_scene_flow");
    K.validate();
    const Mat3 R = quat_to_rotation(quat_normalize(pose.q));
    const int h = first.point.height(), w = first.point.width();
    Flow2D f{Map(w, h, 2), Mask(w, h, 1)};
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            const double a = first.alpha(row, col);
            if (!(a > alpha_threshold)) {
                continue;
            }
            const Vec3 x = at(first.point, row, col) / a;
            const Vec3 y = R * (x + at(first.flow, row, col) / a) + pose.t;
            if (x.z() <= 0.0 || y.z() <= 0.0) {
                continue;
            }
            f.flow(row, col, 0) = K.fx * y.x() / y.z() - K.fx * x.x() / x.z();
            f.flow(row, col, 1) = K.fy * y.y() / y.z() - K.fy * x.y() / x.z();
            f.valid(row, col) = 1;
        }
    }
    return f;
}

Flow2D derive_optical_flow(const Scene &scene, const RasterSettings &settings, double alpha_threshold) {
    const RenderOutput first = render_at(scene, 0.0, TargetFrame::canonical, settings, kPoint | kFlow | kAlpha);
    return project_scene_flow(first, scene.pose, scene.intrinsics, alpha_threshold);
}

Mask segment_moving(const RenderOutput &out, double threshold, double alpha_threshold) {
    require_channels(out, false, true, "segment_moving");
    if (!(threshold >= 0.0)) {
        throw InvalidParameter("motion threshold must be non-negative");
    }
    const int h = out.flow.height(), w = out.flow.width();
    Mask m(w, h, 1);
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            m(row, col) = at(out.flow, row, col).norm() > threshold && out.alpha(row, col) > alpha_threshold;
        }
    }
    return m;
}

RelativePose slerp(const RelativePose &a, const RelativePose &b, double u) {
    const Quat qa = quat_normalize(a.q);
    Quat qb = quat_normalize(b.q);
    double c = qa.dot(qb);
    if (c < 0.0) {
        qb = -qb;
        c = -c;
    }
    Quat q;
    if (c > 1.0 - 1e-12) {
        q = quat_normalize((1.0 - u) * qa + u * qb);
    } else {
        const double theta = std::acos(std::min(c, 1.0));
        const double s = std::sin(theta);
        q = (std::sin((1.0 - u) * theta) / s) * qa + (std::sin(u * theta) / s) * qb;
    }
    return {q, (1.0 - u) * a.t + u * b.t};
}

RenderOutput interpolate_4d(const Scene &scene, double dt, const RelativePose &view, const RasterSettings &settings,
                            unsigned channels) {
    return rasterize(scene.cloud, RenderRequest{scene.intrinsics, view, dt, channels}, settings);
}

OpacityMaps opacity_map(const Scene &scene) {
    scene.intrinsics.validate();
    const int w = scene.intrinsics.width, h = scene.intrinsics.height;
    OpacityMaps out{{Map(w, h, 1), Map(w, h, 1)}, {}};
    out.gaussians.reserve(scene.cloud.size());
    for (const RawGaussian &g : scene.cloud.gaussians) {
        const double o = logistic(g.raw.opacity_logit);
        out.gaussians.push_back({g.frame, g.pixel, o});
        if (g.pixel.row >= 0 && g.pixel.row < h && g.pixel.col >= 0 && g.pixel.col < w) {
            out.maps[static_cast<int>(g.frame)](g.pixel.row, g.pixel.col) = o;
        }
    }
    return out;
}

} // namespace dyn4d
