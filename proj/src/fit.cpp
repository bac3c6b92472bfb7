#include "dyn4d/fit.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dyn4d/log.hpp"
#include "dyn4d/random.hpp"
#include "dyn4d/sh.hpp"

namespace dyn4d {

void FitConfig::validate() const {
    if (iterations < 0) {
        throw InvalidParameter("iterations must be non-negative");
    }
    for (double r : {lr.center, lr.motion, lr.rotation, lr.scale, lr.color, lr.opacity, lr.pose}) {
        if (!(r > 0.0) || !std::isfinite(r)) {
            throw InvalidParameter("learning rates must be positive and finite");
        }
    }
    if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
        throw InvalidParameter("final_lr_fraction must lie in [0, 1]");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw InvalidParameter("moment decay rates must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) {
        throw InvalidParameter("epsilon must be positive");
    }
    if (!(initial_depth > 0.0) || !std::isfinite(initial_depth)) {
        throw InvalidParameter("initial_depth must be positive");
    }
    if (sh_degree < 0 || sh_degree > kMaxShDegree) {
        throw InvalidParameter("sh_degree must be 0, 1 or 2");
    }
    if (!(init_jitter >= 0.0)) {
        throw InvalidParameter("init_jitter must be non-negative");
    }
    if (raster.threads < 1) {
        throw InvalidParameter("threads must be at least 1");
    }
    weights.validate();
}

namespace {

void require_image(const Map &img, const CameraIntrinsics &K, const char *what) {
    if (img.width() != K.width || img.height() != K.height || img.channels() != 3) {
        throw ContractError(std::string(what) + " has shape " + img.shape_string() + ", expected " +
                            std::to_string(K.height) + "x" + std::to_string(K.width) + "x3");
    }
}

Vec3 pixel_ray(const CameraIntrinsics &K, int row, int col) {
    return Vec3((col - K.cx) / K.fx, (row - K.cy) / K.fy, 1.0);
}

} // namespace

Scene init_scene(const Map &image_t, const Map &image_t1, const CameraIntrinsics &K, const FitConfig &config) {
    config.validate();
    K.validate();
    require_same_shape(image_t, image_t1, "image pair");
    require_image(image_t, K, "first image");
    const bool depth_map = !config.initial_depth_map.empty();
    if (depth_map && (config.initial_depth_map.width() != K.width || config.initial_depth_map.height() != K.height ||
                      config.initial_depth_map.channels() != 1)) {
        throw ContractError("initial depth map has shape " + config.initial_depth_map.shape_string() +
                            ", expected " + std::to_string(K.height) + "x" + std::to_string(K.width) + "x1");
    }

    Rng rng(config.seed);
    Scene scene;
    scene.intrinsics = K;
    scene.pose = RelativePose::identity();
    scene.cloud.sh_degree = config.sh_degree;
    scene.cloud.gaussians.reserve(static_cast<std::size_t>(K.width) * K.height * 2);
    const double f = 0.5 * (K.fx + K.fy);

    for (int frame = 0; frame < 2; ++frame) {
        const Map &img = frame == 0 ? image_t : image_t1;
        for (int row = 0; row < K.height; ++row) {
            for (int col = 0; col < K.width; ++col) {
                double d = depth_map ? config.initial_depth_map(row, col) : config.initial_depth;
                if (!(d > 0.0) || !std::isfinite(d)) {
                    throw InvalidParameter("initial depth must be positive and finite");
                }
                if (config.init_jitter > 0.0) {
                    d = std::max(d + rng.normal(0.0, config.init_jitter), 0.05 * d);
                }
                RawGaussian g;
                g.frame = frame == 0 ? Frame::first : Frame::second;
                g.pixel = {row, col};
                g.raw.center = pixel_ray(K, row, col) * d;
                // Half-pixel standard deviation: with the 2D regularizer the
                // visible blob is about one pixel wide.
                g.raw.log_scale.setConstant(std::log(0.5 * d / f));
                g.raw.sh[0] = rgb_to_sh_dc(Vec3(img(row, col, 0), img(row, col, 1), img(row, col, 2)));
                scene.cloud.gaussians.push_back(g);
            }
        }
    }
    scene.cloud = canonicalize_second_frame(std::move(scene.cloud));
    return scene;
}

namespace {

struct Adam {
    double beta1, beta2, eps;
    double bc1 = 1.0, bc2 = 1.0;

    void begin_step() {
        bc1 *= beta1;
        bc2 *= beta2;
    }
    void update(double &x, double g, double &m, double &v, double lr) const {
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        const double mh = m / (1.0 - bc1);
        const double vh = v / (1.0 - bc2);
        x -= lr * mh / (std::sqrt(vh) + eps);
    }
    template <int N>
    void update(Eigen::Matrix<double, N, 1> &x, const Eigen::Matrix<double, N, 1> &g,
                Eigen::Matrix<double, N, 1> &m, Eigen::Matrix<double, N, 1> &v, double lr) const {
        for (int i = 0; i < N; ++i) {
            update(x[i], g[i], m[i], v[i], lr);
        }
    }
};

double schedule_factor(const FitConfig &c, int iteration) {
    if (c.schedule == LrSchedule::constant || c.iterations <= 1) {
        return 1.0;
    }
    const double progress = static_cast<double>(iteration) / (c.iterations - 1);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return c.final_lr_fraction + (1.0 - c.final_lr_fraction) * cosine;
}

bool finite_components(const LossComponents &c) {
    return std::isfinite(c.motion) && std::isfinite(c.point) && std::isfinite(c.pose) && std::isfinite(c.photo) &&
           std::isfinite(c.smooth);
}

} // namespace

FitResult optimize(Scene scene, const Map &image_t, const Map &image_t1, const Supervision &sup,
                   const FitConfig &config) {
    config.validate();
    scene.intrinsics.validate();
    scene.cloud.validate();
    if (!scene.cloud.canonicalized) {
        throw StateError("optimize expects an initialized (canonicalized) scene");
    }
    require_same_shape(image_t, image_t1, "image pair");
    require_image(image_t, scene.intrinsics, "first image");

    const auto start = std::chrono::steady_clock::now();
    FitResult result;
    FitReport &report = result.report;
    report.trace.reserve(static_cast<std::size_t>(config.iterations));
    report.converged = true;

    const std::array<Map, 2> images{image_t, image_t1};
    const std::size_t n = scene.cloud.size();
    const int ncoef = sh_coeff_count(scene.cloud.sh_degree);
    std::vector<GaussianParams> m1(n, GaussianParams::zero()), m2(n, GaussianParams::zero());
    PoseParams pm1, pm2;
    Adam adam{config.beta1, config.beta2, config.epsilon};
    const FreezeFlags &fz = config.freeze;

    for (int it = 0; it < config.iterations; ++it) {
        const TotalLoss loss = evaluate_objective(scene, images, sup, config.weights, config.raster);
        if (!std::isfinite(loss.value) || !finite_components(loss.components) || !loss.gradient.all_finite()) {
            std::ostringstream msg;
            msg << "non-finite loss or gradient at iteration " << it << "; optimization aborted";
            report.message = msg.str();
            report.converged = false;
            log(LogLevel::error, report.message);
            break;
        }
        report.trace.push_back({it, loss.value, loss.components});
        if (config.log_every > 0 && it % config.log_every == 0) {
            std::ostringstream msg;
            msg << "iter " << it << " loss " << loss.value << " photo " << loss.components.photo;
            log_info(msg.str());
        }

        const double s = schedule_factor(config, it);
        adam.begin_step();
        for (std::size_t i = 0; i < n; ++i) {
            GaussianParams &p = scene.cloud.gaussians[i].raw;
            const GaussianParams &g = loss.gradient.gaussians[i];
            if (!fz.center) adam.update<3>(p.center, g.center, m1[i].center, m2[i].center, s * config.lr.center);
            if (!fz.motion) adam.update<3>(p.motion, g.motion, m1[i].motion, m2[i].motion, s * config.lr.motion);
            if (!fz.rotation) {
                adam.update<4>(p.rotation, g.rotation, m1[i].rotation, m2[i].rotation, s * config.lr.rotation);
                p.rotation = quat_normalize(p.rotation);
            }
            if (!fz.scale) {
                adam.update<3>(p.log_scale, g.log_scale, m1[i].log_scale, m2[i].log_scale, s * config.lr.scale);
            }
            if (!fz.color) {
                for (int k = 0; k < ncoef; ++k) {
                    adam.update<3>(p.sh[k], g.sh[k], m1[i].sh[k], m2[i].sh[k], s * config.lr.color);
                }
            }
            if (!fz.opacity) {
                adam.update(p.opacity_logit, g.opacity_logit, m1[i].opacity_logit, m2[i].opacity_logit,
                            s * config.lr.opacity);
            }
        }
        if (!fz.pose) {
            adam.update<4>(scene.pose.q, loss.gradient.pose.q, pm1.q, pm2.q, s * config.lr.pose);
            scene.pose.q = quat_normalize(scene.pose.q);
            adam.update<3>(scene.pose.t, loss.gradient.pose.t, pm1.t, pm2.t, s * config.lr.pose);
        }
    }

    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.scene = std::move(scene);
    return result;
}

double psnr(const Map &a, const Map &b) {
    const double e = mse(a, b);
    if (e <= 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return -10.0 * std::log10(e);
}

// --- synthetic scenes ----------------------------------------------------------

void SyntheticSpec::validate() const {
    if (width < 1 || height < 1) {
        throw InvalidParameter("synthetic image size must be positive");
    }
    if (!(focal > 0.0) || !(plane_depth > 0.0) || !(texture_period > 0.0)) {
        throw InvalidParameter("focal, plane_depth and texture_period must be positive");
    }
    if (!(std::abs(plane_tilt) < 1.2)) {
        throw InvalidParameter("plane_tilt must be below 1.2 rad in magnitude");
    }
    if (include_sphere && !(sphere_radius > 0.0)) {
        throw InvalidParameter("sphere_radius must be positive");
    }
    if (!(gt_opacity > 0.0 && gt_opacity < 1.0)) {
        throw InvalidParameter("gt_opacity must lie in (0, 1)");
    }
    if (!(gt_footprint > 0.0)) {
        throw InvalidParameter("gt_footprint must be positive");
    }
    if (sh_degree < 0 || sh_degree > kMaxShDegree) {
        throw InvalidParameter("sh_degree must be 0, 1 or 2");
    }
}

namespace {

struct Hit {
    Vec3 point;
    double depth; // along the camera axis
    bool on_sphere;
};

class SyntheticWorld {
public:
    SyntheticWorld(const SyntheticSpec &spec, Rng &rng) : spec_(spec) {
        for (int c = 0; c < 3; ++c) {
            phase_x_[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
            phase_y_[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
        sphere_center_ = spec.sphere_center + Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                                                   rng.uniform(-0.05, 0.05));
        tan_tilt_ = std::tan(spec.plane_tilt);
    }

    /// First intersection of origin + s * dir (s > 0) at the given time.
    Hit trace(const Vec3 &origin, const Vec3 &dir, const Vec3 &forward, double time) const {
        // Plane z = plane_depth + tan(tilt) * y.
        const double denom = dir.z() - tan_tilt_ * dir.y();
        double best = std::numeric_limits<double>::infinity();
        bool sphere = false;
        if (std::abs(denom) > 1e-12) {
            const double s = (spec_.plane_depth + tan_tilt_ * origin.y() - origin.z()) / denom;
            if (s > 0.0) {
                best = s;
            }
        }
        if (spec_.include_sphere) {
            const Vec3 c = sphere_center_ + time * spec_.sphere_velocity;
            const Vec3 oc = origin - c;
            const double a = dir.squaredNorm();
            const double b = oc.dot(dir);
            const double disc = b * b - a * (oc.squaredNorm() - spec_.sphere_radius * spec_.sphere_radius);
            if (disc >= 0.0) {
                const double s = (-b - std::sqrt(disc)) / a;
                if (s > 0.0 && s < best) {
                    best = s;
                    sphere = true;
                }
            }
        }
        if (!std::isfinite(best)) {
            throw InvalidParameter("synthetic camera ray misses the scene; adjust plane_tilt or the camera");
        }
        const Vec3 p = origin + best * dir;
        return {p, (p - origin).dot(forward), sphere};
    }

    Vec3 color(const Hit &h, double time) const {
        Vec3 c;
        if (h.on_sphere) {
            const Vec3 n = (h.point - sphere_center_ - time * spec_.sphere_velocity) / spec_.sphere_radius;
            const double stripes = 0.5 + 0.5 * std::sin(9.0 * n.y() + phase_x_[0]);
            c = Vec3(0.85, 0.35, 0.2) * (0.55 + 0.45 * stripes) + Vec3(0.1, 0.1, 0.1) * n.x();
        } else {
            const double w = 2.0 * std::numbers::pi / spec_.texture_period;
            for (int k = 0; k < 3; ++k) {
                c[k] = 0.5 + 0.3 * std::sin(w * h.point.x() + phase_x_[k]) * std::cos(w * h.point.y() + phase_y_[k]);
            }
        }
        return c.cwiseMax(0.0).cwiseMin(1.0);
    }

private:
    const SyntheticSpec &spec_;
    std::array<double, 3> phase_x_{}, phase_y_{};
    Vec3 sphere_center_;
    double tan_tilt_ = 0.0;
};

} // namespace

SyntheticScene make_synthetic_scene(const SyntheticSpec &spec, std::uint64_t seed, const RasterSettings &settings) {
    spec.validate();
    Rng rng(seed);
    SyntheticWorld world(spec, rng);

    SyntheticScene out;
    CameraIntrinsics &K = out.intrinsics;
    K = {spec.focal, spec.focal, 0.5 * (spec.width - 1), 0.5 * (spec.height - 1), spec.width, spec.height};

    // Second camera: center at the baseline, rotated by yaw about y.
    const Eigen::AngleAxisd yaw(spec.camera_yaw, Vec3::UnitY());
    const Eigen::Quaterniond qe(yaw);
    RelativePose pose;
    pose.q = Quat(qe.w(), qe.x(), qe.y(), qe.z());
    pose.t = -(qe.toRotationMatrix() * spec.camera_baseline);
    const Mat3 R2 = pose.rotation();

    GaussianCloud cloud;
    cloud.sh_degree = spec.sh_degree;
    cloud.gaussians.reserve(static_cast<std::size_t>(spec.width) * spec.height * 2);
    const Vec3 velocity = spec.include_sphere ? spec.sphere_velocity : Vec3::Zero();
    const double opacity_logit = logit(spec.gt_opacity);
    std::vector<bool> on_sphere;

    for (int frame = 0; frame < 2; ++frame) {
        const Vec3 origin = frame == 0 ? Vec3::Zero() : spec.camera_baseline;
        const Mat3 to_world = frame == 0 ? Mat3::Identity() : Mat3(R2.transpose());
        const Vec3 forward = to_world * Vec3::UnitZ();
        for (int row = 0; row < spec.height; ++row) {
            for (int col = 0; col < spec.width; ++col) {
                const Vec3 dir = to_world * pixel_ray(K, row, col);
                const Hit h = world.trace(origin, dir, forward, frame);
                RawGaussian g;
                g.frame = frame == 0 ? Frame::first : Frame::second;
                g.pixel = {row, col};
                const Vec3 v = h.on_sphere ? velocity : Vec3::Zero();
                // Raw second-frame records live at their own time with
                // backward motion; canonicalization below flips them.
                g.raw.center = h.point;
                g.raw.motion = frame == 0 ? v : Vec3(-v);
                g.raw.log_scale.setConstant(std::log(spec.gt_footprint * h.depth / spec.focal));
                g.raw.sh[0] = rgb_to_sh_dc(world.color(h, frame));
                g.raw.opacity_logit = opacity_logit;
                cloud.gaussians.push_back(g);
                on_sphere.push_back(h.on_sphere);
            }
        }
    }
    cloud = canonicalize_second_frame(std::move(cloud));

    out.ground_truth.cloud = std::move(cloud);
    out.ground_truth.pose = pose;
    out.ground_truth.intrinsics = K;

    GaussianCloud sphere_only;
    sphere_only.sh_degree = spec.sh_degree;
    sphere_only.canonicalized = true;
    for (std::size_t i = 0; i < on_sphere.size(); ++i) {
        if (on_sphere[i]) {
            sphere_only.gaussians.push_back(out.ground_truth.cloud.gaussians[i]);
        }
    }

    for (int frame = 0; frame < 2; ++frame) {
        const TargetFrame target = frame == 0 ? TargetFrame::canonical : TargetFrame::second;
        const RenderOutput r = render_at(out.ground_truth, frame, target, settings);
        out.images[frame] = r.color;
        out.supervision.frames[frame].points = r.point;
        out.supervision.frames[frame].flow = r.flow;

        Mask cover(spec.width, spec.height, 1, 0);
        if (!sphere_only.gaussians.empty()) {
            Scene s{sphere_only, pose, K};
            const RenderOutput a = render_at(s, frame, target, settings, kAlpha);
            for (int row = 0; row < spec.height; ++row) {
                for (int col = 0; col < spec.width; ++col) {
                    cover(row, col) = a.alpha(row, col) > 0.0 ? 1 : 0;
                }
            }
        }
        out.sphere_coverage[frame] = std::move(cover);
    }
    out.supervision.pose = pose;
    return out;
}

} // namespace dyn4d
