#include "dyn4d/grad.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "dyn4d/parallel.hpp"
#include "dyn4d/random.hpp"
#include "dyn4d/sh.hpp"

namespace dyn4d {

namespace {

void add_into(Map &dst, const Map &src) {
    if (src.empty()) {
        return;
    }
    if (dst.empty()) {
        dst = src;
        return;
    }
    require_same_shape(dst, src, "cotangent sum");
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += s[i];
    }
}

Map scale_map(Map m, double f) {
    for (auto &v : m.data()) {
        v *= f;
    }
    return m;
}

double dot_maps(const Map &a, const Map &b) {
    if (b.empty()) {
        return 0.0;
    }
    if (a.empty()) {
        throw ContractError("inner_product: upstream given for a channel that was not rendered");
    }
    require_same_shape(a, b, "inner_product");
    double sum = 0.0;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        sum += x[i] * y[i];
    }
    return sum;
}

// Intermediate gradients of one splat, accumulated per tile.
struct SplatGrad {
    Vec2 mean = Vec2::Zero();
    Mat2 conic = Mat2::Zero();
    Vec3 color = Vec3::Zero();
    Vec3 position = Vec3::Zero();
    Vec3 motion = Vec3::Zero();
    double depth = 0.0;
    double opacity = 0.0;

    void add(const SplatGrad &o) {
        mean += o.mean;
        conic += o.conic;
        color += o.color;
        position += o.position;
        motion += o.motion;
        depth += o.depth;
        opacity += o.opacity;
    }
};

void check_upstream(const Map &m, const CameraIntrinsics &K, int channels, bool requested, const char *name) {
    if (m.empty()) {
        return;
    }
    if (!requested) {
        throw ContractError(std::string("backward: upstream for unrequested channel ") + name);
    }
    if (m.width() != K.width || m.height() != K.height || m.channels() != channels) {
        throw ContractError(std::string("backward: upstream ") + name + " has shape " + m.shape_string() +
                            ", expected " + std::to_string(K.height) + "x" + std::to_string(K.width) + "x" +
                            std::to_string(channels));
    }
}

Vec3 read3(const Map &m, int r, int c) {
    return m.empty() ? Vec3::Zero() : Vec3(m(r, c, 0), m(r, c, 1), m(r, c, 2));
}

double read1(const Map &m, int r, int c) { return m.empty() ? 0.0 : m(r, c); }

} // namespace

Cotangents &Cotangents::operator+=(const Cotangents &o) {
    add_into(color, o.color);
    add_into(point, o.point);
    add_into(flow, o.flow);
    add_into(depth, o.depth);
    add_into(alpha, o.alpha);
    return *this;
}

Cotangents Cotangents::scaled(double f) const {
    return {scale_map(color, f), scale_map(point, f), scale_map(flow, f), scale_map(depth, f), scale_map(alpha, f)};
}

ParamGradients ParamGradients::zeros(std::size_t n) {
    ParamGradients g;
    g.gaussians.assign(n, GaussianParams::zero());
    return g;
}

ParamGradients &ParamGradients::operator+=(const ParamGradients &o) {
    if (o.gaussians.size() != gaussians.size()) {
        throw ContractError("ParamGradients: size mismatch");
    }
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        auto &a = gaussians[i];
        const auto &b = o.gaussians[i];
        a.center += b.center;
        a.motion += b.motion;
        a.rotation += b.rotation;
        a.log_scale += b.log_scale;
        for (int k = 0; k < kMaxShCoeffs; ++k) {
            a.sh[k] += b.sh[k];
        }
        a.opacity_logit += b.opacity_logit;
    }
    pose.q += o.pose.q;
    pose.t += o.pose.t;
    return *this;
}

ParamGradients ParamGradients::scaled(double f) const {
    ParamGradients out = *this;
    for (auto &a : out.gaussians) {
        a.center *= f;
        a.motion *= f;
        a.rotation *= f;
        a.log_scale *= f;
        for (auto &c : a.sh) {
            c *= f;
        }
        a.opacity_logit *= f;
    }
    out.pose.q *= f;
    out.pose.t *= f;
    return out;
}

bool ParamGradients::all_finite() const {
    for (const auto &a : gaussians) {
        bool ok = a.center.allFinite() && a.motion.allFinite() && a.rotation.allFinite() &&
                  a.log_scale.allFinite() && std::isfinite(a.opacity_logit);
        for (const auto &c : a.sh) {
            ok = ok && c.allFinite();
        }
        if (!ok) {
            return false;
        }
    }
    return pose.q.allFinite() && pose.t.allFinite();
}

double ParamGradients::max_abs_difference(const ParamGradients &o) const {
    if (o.gaussians.size() != gaussians.size()) {
        throw ContractError("ParamGradients: size mismatch");
    }
    double m = std::max((pose.q - o.pose.q).cwiseAbs().maxCoeff(), (pose.t - o.pose.t).cwiseAbs().maxCoeff());
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const auto &a = gaussians[i];
        const auto &b = o.gaussians[i];
        m = std::max(m, (a.center - b.center).cwiseAbs().maxCoeff());
        m = std::max(m, (a.motion - b.motion).cwiseAbs().maxCoeff());
        m = std::max(m, (a.rotation - b.rotation).cwiseAbs().maxCoeff());
        m = std::max(m, (a.log_scale - b.log_scale).cwiseAbs().maxCoeff());
        for (int k = 0; k < kMaxShCoeffs; ++k) {
            m = std::max(m, (a.sh[k] - b.sh[k]).cwiseAbs().maxCoeff());
        }
        m = std::max(m, std::abs(a.opacity_logit - b.opacity_logit));
    }
    return m;
}

double inner_product(const RenderOutput &out, const Cotangents &up) {
    return dot_maps(out.color, up.color) + dot_maps(out.point, up.point) + dot_maps(out.flow, up.flow) +
           dot_maps(out.depth, up.depth) + dot_maps(out.alpha, up.alpha);
}

ParamGradients backward(const Rasterizer &fwd, const Cotangents &up) {
    const auto &req = fwd.request();
    const auto &K = req.camera;
    const auto &settings = fwd.settings();
    const auto &cloud = fwd.cloud();
    const auto &splats = fwd.splats();
    const auto &act = fwd.activated();
    const unsigned ch = req.channels;
    check_upstream(up.color, K, 3, ch & kColor, "color");
    check_upstream(up.point, K, 3, ch & kPoint, "point");
    check_upstream(up.flow, K, 3, ch & kFlow, "flow");
    check_upstream(up.depth, K, 1, ch & kDepth, "depth");
    check_upstream(up.alpha, K, 1, ch & kAlpha, "alpha");

    const std::size_t n = cloud.size();
    ParamGradients grads = ParamGradients::zeros(n);

    // Pixel pass: per-tile buffers indexed by tile-list slot.
    const auto &lists = fwd.tile_lists();
    const int ts = settings.tile_size;
    const int tiles_x = fwd.tiles_x();
    std::vector<std::vector<SplatGrad>> tile_grads(lists.size());
    const Vec3 background = up.color.empty() ? Vec3::Zero() : settings.background;
    parallel_for(static_cast<int>(lists.size()), settings.threads, [&](int tile) {
        auto &buf = tile_grads[tile];
        buf.assign(lists[tile].size(), SplatGrad{});
        if (buf.empty()) {
            return;
        }
        const int tx = tile % tiles_x, ty = tile / tiles_x;
        std::vector<Rasterizer::Contributor> contrib;
        for (int row = ty * ts; row < std::min(K.height, (ty + 1) * ts); ++row) {
            for (int col = tx * ts; col < std::min(K.width, (tx + 1) * ts); ++col) {
                const Vec3 uc = read3(up.color, row, col);
                const Vec3 up_pt = read3(up.point, row, col);
                const Vec3 uf = read3(up.flow, row, col);
                const double ud = read1(up.depth, row, col);
                const double ua = read1(up.alpha, row, col);
                fwd.pixel_contributors(row, col, contrib);
                // Composite of everything behind the current contributor,
                // relative to its own transmittance.
                Vec3 rc = background, rp = Vec3::Zero(), rf = Vec3::Zero();
                double rd = 0.0, ra = 0.0;
                for (auto it = contrib.rbegin(); it != contrib.rend(); ++it) {
                    const auto &s = splats[it->gaussian];
                    const Vec3 &v = act[it->gaussian].motion;
                    const double a = it->alpha;
                    const double T = it->transmittance;
                    const double w = T * a;
                    auto &gb = buf[it->slot];
                    gb.color += w * uc;
                    gb.position += w * up_pt;
                    gb.motion += w * uf;
                    gb.depth += w * ud;
                    const double d_alpha = T * (uc.dot(s.color - rc) + up_pt.dot(s.position - rp) +
                                                uf.dot(v - rf) + ud * (s.cam.z() - rd) + ua * (1.0 - ra));
                    rc = a * s.color + (1.0 - a) * rc;
                    rp = a * s.position + (1.0 - a) * rp;
                    rf = a * v + (1.0 - a) * rf;
                    rd = a * s.cam.z() + (1.0 - a) * rd;
                    ra = a + (1.0 - a) * ra;

                    gb.opacity += d_alpha * it->g;
                    const double d_g = d_alpha * s.opacity;
                    const double dx = col - s.mean.x();
                    const double dy = row - s.mean.y();
                    const double q01 = s.conic(0, 1) + s.conic(1, 0);
                    const Vec2 dm_dd(2 * s.conic(0, 0) * dx + q01 * dy, q01 * dx + 2 * s.conic(1, 1) * dy);
                    gb.mean += d_g * it->g * 0.5 * dm_dd;
                    const double k = -0.5 * d_g * it->g;
                    gb.conic(0, 0) += k * dx * dx;
                    gb.conic(0, 1) += k * dx * dy;
                    gb.conic(1, 0) += k * dx * dy;
                    gb.conic(1, 1) += k * dy * dy;
                }
            }
        }
    });

    // Fixed-order reduction over tiles.
    std::vector<SplatGrad> sg(n);
    for (std::size_t tile = 0; tile < lists.size(); ++tile) {
        for (std::size_t slot = 0; slot < lists[tile].size(); ++slot) {
            sg[lists[tile][slot]].add(tile_grads[tile][slot]);
        }
    }

    // Per-Gaussian chain rule back to the raw chart.
    const Mat3 &W = fwd.view_rotation();
    const Vec3 &tau = req.view.t;
    const double fx = K.fx, fy = K.fy;
    std::vector<Mat3> d_view_rot(n, Mat3::Zero());
    std::vector<Vec3> d_view_t(n, Vec3::Zero());
    std::vector<Vec3> d_cam_center(n, Vec3::Zero());
    parallel_for(static_cast<int>(n), settings.threads, [&](int i) {
        const auto &s = splats[i];
        if (!s.visible) {
            return;
        }
        const auto &g = act[i];
        const auto &raw = cloud.gaussians[i].raw;
        const SplatGrad &d = sg[i];
        auto &out = grads.gaussians[i];

        // conic = cov^-1
        const Mat2 d_cov = -s.conic.transpose() * d.conic * s.conic.transpose();
        const double x = s.cam.x(), y = s.cam.y(), z = s.cam.z();
        Eigen::Matrix<double, 2, 3> J;
        J << fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z);
        const Eigen::Matrix<double, 2, 3> T = J * W;
        const Mat3 d_cov3 = T.transpose() * d_cov * T;
        const Eigen::Matrix<double, 2, 3> d_T =
            d_cov * T * s.cov3.transpose() + d_cov.transpose() * T * s.cov3;
        const Eigen::Matrix<double, 2, 3> d_J = d_T * W.transpose();
        Mat3 d_W = J.transpose() * d_T;

        Vec3 d_cam = Vec3::Zero();
        d_cam.z() += d_J(0, 0) * (-fx / (z * z));
        d_cam.x() += d_J(0, 2) * (-fx / (z * z));
        d_cam.z() += d_J(0, 2) * (2 * fx * x / (z * z * z));
        d_cam.z() += d_J(1, 1) * (-fy / (z * z));
        d_cam.y() += d_J(1, 2) * (-fy / (z * z));
        d_cam.z() += d_J(1, 2) * (2 * fy * y / (z * z * z));
        d_cam.x() += d.mean.x() * fx / z;
        d_cam.z() += d.mean.x() * (-fx * x / (z * z));
        d_cam.y() += d.mean.y() * fy / z;
        d_cam.z() += d.mean.y() * (-fy * y / (z * z));
        d_cam.z() += d.depth;

        Vec3 d_pos = W.transpose() * d_cam + d.position;
        d_view_t[i] = d_cam;
        d_W += d_cam * s.position.transpose();

        if (!d.color.isZero(0.0)) {
            const Vec3 d_dir = sh_to_color_backward(cloud.sh_degree, g.sh, s.dir, d.color, out.sh);
            const Vec3 d_offset = (d_dir - s.dir * s.dir.dot(d_dir)) / s.dir_len;
            d_pos += d_offset;
            d_cam_center[i] = -d_offset;
        }
        d_view_rot[i] = d_W;

        out.center = d_pos;
        out.motion = req.dt * d_pos + d.motion;

        // cov3 = M M^T with M = R diag(s)
        const Mat3 M = s.rot * g.scale.asDiagonal();
        const Mat3 d_M = (d_cov3 + d_cov3.transpose()) * M;
        Mat3 d_R;
        for (int c = 0; c < 3; ++c) {
            d_R.col(c) = d_M.col(c) * g.scale[c];
            const double d_s = d_M.col(c).dot(s.rot.col(c));
            const double e = std::exp(raw.log_scale[c]);
            out.log_scale[c] = (e > kMinScale && e < kMaxScale) ? d_s * g.scale[c] : 0.0;
        }
        out.rotation = normalize_grad(raw.rotation, rotation_grad_to_quat(g.rotation, d_R));
        out.opacity_logit = d.opacity * g.opacity * (1.0 - g.opacity);
    });

    Mat3 dW_total = Mat3::Zero();
    Vec3 dt_total = Vec3::Zero();
    Vec3 dc_total = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        dW_total += d_view_rot[i];
        dt_total += d_view_t[i];
        dc_total += d_cam_center[i];
    }
    // camera center C = -W^T tau
    dt_total += -(W * dc_total);
    dW_total += -(tau * dc_total.transpose());
    const Quat q_unit = quat_normalize(req.view.q);
    grads.pose.q = normalize_grad(req.view.q, rotation_grad_to_quat(q_unit, dW_total));
    grads.pose.t = dt_total;
    return grads;
}

RenderWithGradients render_with_gradients(const GaussianCloud &cloud, const RenderRequest &request,
                                          const Cotangents &upstream, const RasterSettings &settings) {
    Rasterizer fwd(cloud, request, settings);
    return {fwd.output(), backward(fwd, upstream)};
}

std::string family_name(ParamFamily f) {
    switch (f) {
    case ParamFamily::center: return "center";
    case ParamFamily::motion: return "motion";
    case ParamFamily::rotation: return "rotation";
    case ParamFamily::scale: return "scale";
    case ParamFamily::color: return "color";
    case ParamFamily::opacity: return "opacity";
    case ParamFamily::pose_rotation: return "pose_rotation";
    case ParamFamily::pose_translation: return "pose_translation";
    }
    return "?";
}

bool is_pose_family(ParamFamily f) { return f == ParamFamily::pose_rotation || f == ParamFamily::pose_translation; }

int family_size(ParamFamily f, int sh_degree) {
    switch (f) {
    case ParamFamily::center:
    case ParamFamily::motion:
    case ParamFamily::scale:
    case ParamFamily::pose_translation: return 3;
    case ParamFamily::rotation:
    case ParamFamily::pose_rotation: return 4;
    case ParamFamily::color: return 3 * sh_coeff_count(sh_degree);
    case ParamFamily::opacity: return 1;
    }
    return 0;
}

double &family_component(GaussianParams &p, ParamFamily f, int c) {
    switch (f) {
    case ParamFamily::center: return p.center[c];
    case ParamFamily::motion: return p.motion[c];
    case ParamFamily::rotation: return p.rotation[c];
    case ParamFamily::scale: return p.log_scale[c];
    case ParamFamily::color: return p.sh[c / 3][c % 3];
    case ParamFamily::opacity: return p.opacity_logit;
    default: throw ContractError("family_component: pose family has no per-Gaussian component");
    }
}

double &pose_component(PoseParams &p, ParamFamily f, int c) {
    if (f == ParamFamily::pose_rotation) return p.q[c];
    if (f == ParamFamily::pose_translation) return p.t[c];
    throw ContractError("pose_component: not a pose family");
}

double &pose_component(RelativePose &p, ParamFamily f, int c) {
    if (f == ParamFamily::pose_rotation) return p.q[c];
    if (f == ParamFamily::pose_translation) return p.t[c];
    throw ContractError("pose_component: not a pose family");
}

namespace {

struct Probe {
    double value;
    std::uint64_t signature;
};

Probe evaluate(const GaussianCloud &cloud, const RenderRequest &req, const Cotangents &up,
               const RasterSettings &settings, bool want_signature) {
    Rasterizer r(cloud, req, settings);
    return {inner_product(r.output(), up), want_signature ? r.structure_signature() : 0};
}

// Central difference for one scalar. `slot` points into the perturbed copy.
template <class Mutate>
std::pair<double, bool> central_difference(GaussianCloud &cloud, RenderRequest &req, const Cotangents &up,
                                           const RasterSettings &settings, double step, std::uint64_t base_sig,
                                           bool check_structure, Mutate &&slot) {
    double &x = slot(cloud, req);
    const double x0 = x;
    x = x0 + step;
    const Probe plus = evaluate(cloud, req, up, settings, check_structure);
    x = x0 - step;
    const Probe minus = evaluate(cloud, req, up, settings, check_structure);
    x = x0;
    const bool stable = !check_structure || (plus.signature == base_sig && minus.signature == base_sig);
    return {(plus.value - minus.value) / (2.0 * step), stable};
}

} // namespace

ParamGradients finite_difference_gradient(const GaussianCloud &cloud, const RenderRequest &request,
                                          const Cotangents &upstream, const ParamSelector &selector,
                                          double step, const RasterSettings &settings) {
    if (!(step > 0.0)) {
        throw ContractError("finite_difference_gradient: step must be positive");
    }
    GaussianCloud work = cloud;
    RenderRequest req = request;
    ParamGradients out = ParamGradients::zeros(cloud.size());
    const int comps = family_size(selector.family, cloud.sh_degree);
    if (is_pose_family(selector.family)) {
        for (int c = 0; c < comps; ++c) {
            pose_component(out.pose, selector.family, c) =
                central_difference(work, req, upstream, settings, step, 0, false,
                                   [&](GaussianCloud &, RenderRequest &r) -> double & {
                                       return pose_component(r.view, selector.family, c);
                                   })
                    .first;
        }
        return out;
    }
    std::vector<int> ids = selector.gaussians;
    if (ids.empty()) {
        ids.resize(cloud.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            ids[i] = static_cast<int>(i);
        }
    }
    for (int i : ids) {
        for (int c = 0; c < comps; ++c) {
            family_component(out.gaussians[i], selector.family, c) =
                central_difference(work, req, upstream, settings, step, 0, false,
                                   [&](GaussianCloud &cl, RenderRequest &) -> double & {
                                       return family_component(cl.gaussians[i].raw, selector.family, c);
                                   })
                    .first;
        }
    }
    return out;
}

RandomScene make_random_scene(std::uint64_t seed, int gaussians, int width, int height, int sh_degree,
                              double dt) {
    Rng rng(seed);
    RandomScene s;
    s.cloud.sh_degree = sh_degree;
    s.cloud.canonicalized = true;
    CameraIntrinsics K;
    K.width = width;
    K.height = height;
    K.fx = K.fy = static_cast<double>(std::max(width, height));
    K.cx = 0.5 * (width - 1);
    K.cy = 0.5 * (height - 1);
    for (int i = 0; i < gaussians; ++i) {
        RawGaussian g;
        const double z = rng.uniform(2.0, 4.0);
        g.raw.center = Vec3(rng.uniform(-0.35, 0.35) * z, rng.uniform(-0.35, 0.35) * z, z);
        g.raw.motion = Vec3(rng.normal(0, 0.2), rng.normal(0, 0.2), rng.normal(0, 0.2));
        g.raw.rotation = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        g.raw.log_scale = Vec3(rng.normal(std::log(0.25), 0.3), rng.normal(std::log(0.25), 0.3),
                               rng.normal(std::log(0.25), 0.3));
        for (int k = 0; k < sh_coeff_count(sh_degree); ++k) {
            g.raw.sh[k] = Vec3(rng.normal(0, 0.4), rng.normal(0, 0.4), rng.normal(0, 0.4));
        }
        g.raw.opacity_logit = rng.normal(0.0, 1.0);
        g.frame = i % 2 == 0 ? Frame::first : Frame::second;
        g.pixel = {rng.uniform_int(0, height - 1), rng.uniform_int(0, width - 1)};
        s.cloud.gaussians.push_back(g);
    }
    s.request.camera = K;
    const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    const double angle = rng.uniform(0.02, 0.1);
    s.request.view.q = Quat(std::cos(angle / 2), axis.x() * std::sin(angle / 2), axis.y() * std::sin(angle / 2),
                            axis.z() * std::sin(angle / 2));
    s.request.view.t = Vec3(rng.normal(0, 0.1), rng.normal(0, 0.1), rng.normal(0, 0.1));
    s.request.dt = dt;
    auto fill = [&](int c) {
        Map m(width, height, c);
        for (auto &v : m.data()) {
            v = rng.normal();
        }
        return m;
    };
    s.upstream.color = fill(3);
    s.upstream.point = fill(3);
    s.upstream.flow = fill(3);
    s.upstream.depth = fill(1);
    s.upstream.alpha = fill(1);
    return s;
}

GradcheckReport gradcheck(const GradcheckConfig &cfg) {
    const auto start = std::chrono::steady_clock::now();
    RandomScene scene = make_random_scene(cfg.seed, cfg.gaussians, cfg.width, cfg.height, cfg.sh_degree, cfg.dt);
    RasterSettings settings;
    settings.threads = cfg.threads;
    Rasterizer base(scene.cloud, scene.request, settings);
    ParamGradients analytic = backward(base, scene.upstream);
    if (cfg.corrupt_opacity_sign) {
        for (auto &g : analytic.gaussians) {
            g.opacity_logit = -g.opacity_logit;
        }
    }
    const std::uint64_t sig = base.structure_signature();

    GaussianCloud work = scene.cloud;
    RenderRequest req = scene.request;
    // Probes that cross a discrete branch (sort order, footprint cutoff,
    // clamp) are retried with smaller steps, then skipped.
    auto refined_difference = [&](auto &&slot) {
        double step = cfg.step;
        std::pair<double, bool> r{0.0, false};
        for (int attempt = 0; attempt <= cfg.max_step_refinements; ++attempt, step *= 0.1) {
            r = central_difference(work, req, scene.upstream, settings, step, sig, true, slot);
            if (r.second) {
                break;
            }
        }
        return r;
    };
    GradcheckReport report;
    for (ParamFamily fam : kAllFamilies) {
        FamilyReport fr;
        fr.family = fam;
        double sum = 0.0;
        auto consider = [&](double a, double fd, bool stable, int gaussian, int comp) {
            if (!stable) {
                ++fr.skipped;
                return;
            }
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), cfg.abs_floor});
            ++fr.checked;
            sum += rel;
            if (rel >= fr.max_rel_error) {
                fr.max_rel_error = rel;
                fr.worst_gaussian = gaussian;
                fr.worst_component = comp;
            }
        };
        const int comps = family_size(fam, cfg.sh_degree);
        if (is_pose_family(fam)) {
            for (int c = 0; c < comps; ++c) {
                auto [fd, stable] = refined_difference(
                    [&](GaussianCloud &, RenderRequest &r) -> double & { return pose_component(r.view, fam, c); });
                consider(pose_component(analytic.pose, fam, c), fd, stable, -1, c);
            }
        } else {
            for (int i = 0; i < static_cast<int>(work.size()); ++i) {
                for (int c = 0; c < comps; ++c) {
                    auto [fd, stable] = refined_difference(
                        [&](GaussianCloud &cl, RenderRequest &) -> double & {
                            return family_component(cl.gaussians[i].raw, fam, c);
                        });
                    consider(family_component(analytic.gaussians[i], fam, c), fd, stable, i, c);
                }
            }
        }
        fr.mean_rel_error = fr.checked > 0 ? sum / fr.checked : 0.0;
        fr.passed = fr.checked > 0 && fr.max_rel_error < cfg.tolerance;
        report.passed = report.passed && fr.passed;
        report.families.push_back(fr);
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

std::string GradcheckReport::to_text() const {
    std::ostringstream os;
    os.precision(6);
    for (const auto &f : families) {
        os << (f.passed ? "PASS " : "FAIL ") << family_name(f.family) << " max_rel=" << f.max_rel_error
           << " mean_rel=" << f.mean_rel_error << " checked=" << f.checked << " skipped=" << f.skipped;
        if (!f.passed) {
            os << " worst_gaussian=" << f.worst_gaussian << " worst_component=" << f.worst_component;
        }
        os << '\n';
    }
    os << (passed ? "gradcheck passed" : "gradcheck FAILED") << " in " << seconds << " s\n";
    return os.str();
}

} // namespace dyn4d
