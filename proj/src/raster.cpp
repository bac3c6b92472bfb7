#include "dyn4d/raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dyn4d/parallel.hpp"
#include "dyn4d/sh.hpp"

namespace dyn4d {

namespace {

struct Footprint {
    Vec2 mean;
    Mat2 cov;
    Mat2 conic;
    double radius;
};

// Shared by project_gaussian and the rasterizer so both cull identically.
std::optional<Footprint> footprint(const Vec3 &cam, const Mat3 &view_rot, const Mat3 &cov3,
                                   const CameraIntrinsics &K, const RasterSettings &s) {
    if (!(cam.z() > s.z_near)) {
        return std::nullopt;
    }
    const double z = cam.z();
    Eigen::Matrix<double, 2, 3> J;
    J << K.fx / z, 0.0, -K.fx * cam.x() / (z * z), 0.0, K.fy / z, -K.fy * cam.y() / (z * z);
    const Eigen::Matrix<double, 2, 3> T = J * view_rot;
    Footprint f;
    f.cov = T * cov3 * T.transpose();
    f.cov(0, 0) += s.cov2d_epsilon;
    f.cov(1, 1) += s.cov2d_epsilon;
    const double det = f.cov.determinant();
    if (!std::isfinite(det) || !(det > 0.0)) {
        return std::nullopt;
    }
    f.conic = f.cov.inverse();
    f.mean = Vec2(K.fx * cam.x() / z + K.cx, K.fy * cam.y() / z + K.cy);
    const double a = f.cov(0, 0), d = f.cov(1, 1), b = 0.5 * (f.cov(0, 1) + f.cov(1, 0));
    const double lambda_max = 0.5 * (a + d) + std::sqrt(std::max(0.25 * (a - d) * (a - d) + b * b, 0.0));
    f.radius = s.cutoff_sigma * std::sqrt(lambda_max);
    if (!f.mean.allFinite() || f.mean.x() + f.radius < 0.0 || f.mean.x() - f.radius > K.width - 1 ||
        f.mean.y() + f.radius < 0.0 || f.mean.y() - f.radius > K.height - 1) {
        return std::nullopt;
    }
    return f;
}

template <class Visit>
double visit_pixel(const Rasterizer &r, const std::vector<int> &list, int row, int col, Visit &&visit) {
    const auto &splats = r.splats();
    const double cutoff2 = r.settings().cutoff_sigma * r.settings().cutoff_sigma;
    const double t_min = r.settings().min_transmittance;
    double T = 1.0;
    for (int slot = 0; slot < static_cast<int>(list.size()); ++slot) {
        const int idx = list[slot];
        const auto &s = splats[idx];
        const double dx = col - s.mean.x();
        const double dy = row - s.mean.y();
        const double m =
            s.conic(0, 0) * dx * dx + (s.conic(0, 1) + s.conic(1, 0)) * dx * dy + s.conic(1, 1) * dy * dy;
        if (!(m <= cutoff2)) {
            continue;
        }
        const double g = std::exp(-0.5 * m);
        const double alpha = s.opacity * g;
        visit(Rasterizer::Contributor{idx, slot, g, alpha, T});
        T *= 1.0 - alpha;
        if (T < t_min) {
            break;
        }
    }
    return T;
}

} // namespace

GaussianCloud advect(const GaussianCloud &cloud, double dt) {
    GaussianCloud out = cloud;
    for (auto &g : out.gaussians) {
        g.raw.center = g.raw.center + dt * g.raw.motion;
    }
    return out;
}

std::optional<Projection> project_gaussian(const DynamicGaussian &g, const RelativePose &view,
                                           const CameraIntrinsics &K, const RasterSettings &settings) {
    K.validate();
    const Mat3 W = view.rotation();
    const Vec3 cam = W * g.center + view.t;
    const auto f = footprint(cam, W, build_covariance(g.rotation, g.scale), K, settings);
    if (!f) {
        return std::nullopt;
    }
    return Projection{f->mean, f->cov, cam.z()};
}

Rasterizer::Rasterizer(const GaussianCloud &cloud, const RenderRequest &request, const RasterSettings &settings)
    : cloud_(&cloud), request_(request), settings_(settings) {
    if (!cloud.canonicalized) {
        throw StateError("rasterize: cloud must be canonicalized");
    }
    if (request.channels == 0) {
        throw ContractError("rasterize: empty attribute set");
    }
    if (settings.tile_size <= 0) {
        throw ContractError("rasterize: tile size must be positive");
    }
    cloud.validate();
    request.camera.validate();
    view_rot_ = quat_to_rotation(quat_normalize(request.view.q));
    cam_center_ = -(view_rot_.transpose() * request_.view.t);
    output_.extrapolated = request.dt < 0.0 || request.dt > 1.0;
    project_all();
    bin_tiles();
    composite();
}

void Rasterizer::project_all() {
    const auto &K = request_.camera;
    const std::size_t n = cloud_->size();
    activated_.resize(n);
    splats_.assign(n, Splat{});
    for (std::size_t i = 0; i < n; ++i) {
        activated_[i] = activate(cloud_->gaussians[i]);
        const auto &g = activated_[i];
        auto &s = splats_[i];
        s.position = g.center + request_.dt * g.motion;
        s.cam = view_rot_ * s.position + request_.view.t;
        s.rot = quat_to_rotation_unchecked(g.rotation);
        const Mat3 M = s.rot * g.scale.asDiagonal();
        s.cov3 = M * M.transpose();
        const auto f = footprint(s.cam, view_rot_, s.cov3, K, settings_);
        if (!f) {
            continue;
        }
        s.visible = true;
        s.mean = f->mean;
        s.cov = f->cov;
        s.conic = f->conic;
        s.radius = f->radius;
        s.opacity = g.opacity;
        const Vec3 offset = s.position - cam_center_;
        s.dir_len = offset.norm();
        s.dir = s.dir_len > 0.0 ? Vec3(offset / s.dir_len) : Vec3(0, 0, 1);
        s.color = sh_to_color(cloud_->sh_degree, g.sh, s.dir, &s.color_clamped);
    }
}

void Rasterizer::bin_tiles() {
    const int ts = settings_.tile_size;
    const auto &K = request_.camera;
    tiles_x_ = (K.width + ts - 1) / ts;
    tiles_y_ = (K.height + ts - 1) / ts;
    tile_lists_.assign(static_cast<std::size_t>(tiles_x_) * tiles_y_, {});

    std::vector<int> order;
    order.reserve(splats_.size());
    for (int i = 0; i < static_cast<int>(splats_.size()); ++i) {
        if (splats_[i].visible) {
            order.push_back(i);
        }
    }
    std::sort(order.begin(), order.end(), [this](int a, int b) {
        const double za = splats_[a].cam.z(), zb = splats_[b].cam.z();
        return za < zb || (za == zb && a < b);
    });
    for (int idx : order) {
        const auto &s = splats_[idx];
        const int x0 = std::max(0, static_cast<int>(std::floor((s.mean.x() - s.radius) / ts)));
        const int x1 = std::min(tiles_x_ - 1, static_cast<int>(std::floor((s.mean.x() + s.radius) / ts)));
        const int y0 = std::max(0, static_cast<int>(std::floor((s.mean.y() - s.radius) / ts)));
        const int y1 = std::min(tiles_y_ - 1, static_cast<int>(std::floor((s.mean.y() + s.radius) / ts)));
        for (int ty = y0; ty <= y1; ++ty) {
            for (int tx = x0; tx <= x1; ++tx) {
                tile_lists_[static_cast<std::size_t>(ty) * tiles_x_ + tx].push_back(idx);
            }
        }
    }
}

void Rasterizer::composite() {
    const auto &K = request_.camera;
    const unsigned ch = request_.channels;
    const int W = K.width, H = K.height;
    if (ch & kColor) output_.color = Map(W, H, 3);
    if (ch & kPoint) output_.point = Map(W, H, 3);
    if (ch & kFlow) output_.flow = Map(W, H, 3);
    if (ch & kDepth) output_.depth = Map(W, H, 1);
    if (ch & kAlpha) output_.alpha = Map(W, H, 1);

    const int ts = settings_.tile_size;
    parallel_for(tiles_x_ * tiles_y_, settings_.threads, [&](int tile) {
        const int tx = tile % tiles_x_, ty = tile / tiles_x_;
        const auto &list = tile_lists_[tile];
        for (int row = ty * ts; row < std::min(H, (ty + 1) * ts); ++row) {
            for (int col = tx * ts; col < std::min(W, (tx + 1) * ts); ++col) {
                Vec3 color = Vec3::Zero(), point = Vec3::Zero(), flow = Vec3::Zero();
                double depth = 0.0, alpha = 0.0;
                const double T = visit_pixel(*this, list, row, col, [&](const Contributor &c) {
                    const auto &s = splats_[c.gaussian];
                    const double w = c.transmittance * c.alpha;
                    color += w * s.color;
                    point += w * s.position;
                    flow += w * activated_[c.gaussian].motion;
                    depth += w * s.cam.z();
                    alpha += w;
                });
                if (ch & kColor) {
                    color += T * settings_.background;
                    for (int k = 0; k < 3; ++k) output_.color(row, col, k) = color[k];
                }
                if (ch & kPoint) {
                    for (int k = 0; k < 3; ++k) output_.point(row, col, k) = point[k];
                }
                if (ch & kFlow) {
                    for (int k = 0; k < 3; ++k) output_.flow(row, col, k) = flow[k];
                }
                if (ch & kDepth) output_.depth(row, col) = depth;
                if (ch & kAlpha) output_.alpha(row, col) = alpha;
            }
        }
    });
}

double Rasterizer::pixel_contributors(int row, int col, std::vector<Contributor> &out) const {
    out.clear();
    const int ts = settings_.tile_size;
    const auto &list = tile_lists_[static_cast<std::size_t>(row / ts) * tiles_x_ + col / ts];
    return visit_pixel(*this, list, row, col, [&](const Contributor &c) { out.push_back(c); });
}

std::uint64_t Rasterizer::structure_signature() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    for (std::size_t i = 0; i < splats_.size(); ++i) {
        const auto &s = splats_[i];
        std::uint64_t bits = s.visible ? 1u : 0u;
        for (int k = 0; k < 3; ++k) {
            bits = bits << 1 | (s.color_clamped[k] ? 1u : 0u);
            const double e = std::exp(cloud_->gaussians[i].raw.log_scale[k]);
            bits = bits << 1 | ((e > kMinScale && e < kMaxScale) ? 0u : 1u);
        }
        mix(bits);
    }
    std::vector<Contributor> contrib;
    for (int row = 0; row < request_.camera.height; ++row) {
        for (int col = 0; col < request_.camera.width; ++col) {
            pixel_contributors(row, col, contrib);
            mix(contrib.size());
            for (const auto &c : contrib) {
                mix(static_cast<std::uint64_t>(c.gaussian));
            }
        }
    }
    return h;
}

RenderOutput rasterize(const GaussianCloud &cloud, const RenderRequest &request, const RasterSettings &settings) {
    return Rasterizer(cloud, request, settings).output();
}

RenderOutput render_at(const Scene &scene, double dt, TargetFrame target, const RasterSettings &settings,
                       unsigned channels) {
    RenderRequest req;
    req.camera = scene.intrinsics;
    req.view = target == TargetFrame::canonical ? RelativePose::identity() : scene.pose;
    req.dt = dt;
    req.channels = channels;
    return rasterize(scene.cloud, req, settings);
}

RenderOutput unpremultiply(const RenderOutput &out, double min_alpha) {
    if (out.alpha.empty()) {
        throw ContractError("unpremultiply: alpha channel required");
    }
    RenderOutput res = out;
    for (Map *m : {&res.point, &res.flow}) {
        if (m->empty()) {
            continue;
        }
        for (int r = 0; r < m->height(); ++r) {
            for (int c = 0; c < m->width(); ++c) {
                const double a = out.alpha(r, c);
                for (int k = 0; k < m->channels(); ++k) {
                    (*m)(r, c, k) = a > min_alpha ? (*m)(r, c, k) / a : 0.0;
                }
            }
        }
    }
    return res;
}

} // namespace dyn4d
