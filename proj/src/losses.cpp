#include "dyn4d/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dyn4d/log.hpp"

namespace dyn4d {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

bool is_valid(const Mask &mask, int r, int c) { return mask.empty() || mask(r, c) != 0; }

void check_mask(const Map &map, const Mask &mask, const char *what) {
    if (!mask.empty() && (mask.width() != map.width() || mask.height() != map.height())) {
        throw ContractError(std::string(what) + ": mask " + mask.shape_string() + " does not match map " +
                            map.shape_string());
    }
}

Vec3 at3(const Map &m, int r, int c) { return {m(r, c, 0), m(r, c, 1), m(r, c, 2)}; }

void add3(Map &m, int r, int c, const Vec3 &v) {
    for (int k = 0; k < 3; ++k) {
        m(r, c, k) += v[k];
    }
}

Vec3 unit_or_zero(const Vec3 &e) {
    const double n = e.norm();
    return n > 0.0 ? Vec3(e / n) : Vec3::Zero();
}

enum class Field { center, motion };

// Shared body of loss_motion / loss_point.
LossResult supervised_term(const GaussianCloud &cloud, const Map &render_t, const Map &render_t1,
                           const Supervision &sup, Field field) {
    const char *name = field == Field::motion ? "loss_motion" : "loss_point";
    LossResult res;
    res.direct = ParamGradients::zeros(cloud.size());
    const std::array<const Map *, 2> renders{&render_t, &render_t1};
    for (int u = 0; u < 2; ++u) {
        const auto &fs = sup.frames[u];
        const Map &gt = field == Field::motion ? fs.flow : fs.points;
        const Mask &valid = field == Field::motion ? fs.flow_valid : fs.point_valid;
        if (gt.empty()) {
            continue;
        }
        const Map &rendered = *renders[u];
        if (gt.channels() != 3) {
            throw ContractError(std::string(name) + ": ground truth must have 3 channels");
        }
        require_same_shape(rendered, gt, name);
        check_mask(gt, valid, name);
        std::size_t count = 0;
        for (int r = 0; r < gt.height(); ++r) {
            for (int c = 0; c < gt.width(); ++c) {
                count += is_valid(valid, r, c) ? 1 : 0;
            }
        }
        if (count == 0) {
            continue;
        }
        const double inv = 1.0 / static_cast<double>(count);
        Map cot(gt.width(), gt.height(), 3);
        double sum = 0.0;
        for (int r = 0; r < gt.height(); ++r) {
            for (int c = 0; c < gt.width(); ++c) {
                if (!is_valid(valid, r, c)) {
                    continue;
                }
                const Vec3 e = at3(rendered, r, c) - at3(gt, r, c);
                sum += e.norm();
                add3(cot, r, c, inv * unit_or_zero(e));
            }
        }
        const Frame frame = u == 0 ? Frame::first : Frame::second;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const auto &g = cloud.gaussians[i];
            if (g.frame != frame) {
                continue;
            }
            const int r = g.pixel.row, c = g.pixel.col;
            if (r < 0 || c < 0 || r >= gt.height() || c >= gt.width()) {
                throw ContractError(std::string(name) + ": Gaussian source pixel outside the ground truth");
            }
            if (!is_valid(valid, r, c)) {
                continue;
            }
            Vec3 value;
            if (field == Field::motion) {
                value = g.raw.motion;
            } else {
                value = u == 0 ? g.raw.center : Vec3(g.raw.center + g.raw.motion);
            }
            const Vec3 e = value - at3(gt, r, c);
            sum += e.norm();
            const Vec3 d = inv * unit_or_zero(e);
            auto &out = res.direct.gaussians[i];
            if (field == Field::motion) {
                out.motion += d;
            } else {
                out.center += d;
                if (u == 1) {
                    out.motion += d;
                }
            }
        }
        res.value += inv * sum;
        if (field == Field::motion) {
            res.cotangents[u].flow = std::move(cot);
        } else {
            res.cotangents[u].point = std::move(cot);
        }
    }
    return res;
}

std::vector<double> gaussian_window(int size) {
    std::vector<double> w(size);
    const double mid = 0.5 * (size - 1);
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        w[i] = std::exp(-0.5 * (i - mid) * (i - mid) / (kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (auto &v : w) {
        v /= sum;
    }
    return w;
}

int ssim_window_size(int width, int height) {
    int s = std::min({kSsimWindow, width, height});
    if (s % 2 == 0) {
        --s;
    }
    return s;
}

// Valid separable correlation of one channel: out is (H-s+1) x (W-s+1).
std::vector<double> filter_valid(const std::vector<double> &img, int W, int H, const std::vector<double> &w) {
    const int s = static_cast<int>(w.size());
    const int ow = W - s + 1, oh = H - s + 1;
    std::vector<double> tmp(static_cast<std::size_t>(H) * ow, 0.0);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (int k = 0; k < s; ++k) {
                acc += w[k] * img[static_cast<std::size_t>(r) * W + c + k];
            }
            tmp[static_cast<std::size_t>(r) * ow + c] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
    for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (int k = 0; k < s; ++k) {
                acc += w[k] * tmp[static_cast<std::size_t>(r + k) * ow + c];
            }
            out[static_cast<std::size_t>(r) * ow + c] = acc;
        }
    }
    return out;
}

// Adjoint of filter_valid.
std::vector<double> filter_valid_adjoint(const std::vector<double> &g, int W, int H, const std::vector<double> &w) {
    const int s = static_cast<int>(w.size());
    const int ow = W - s + 1, oh = H - s + 1;
    std::vector<double> tmp(static_cast<std::size_t>(H) * ow, 0.0);
    for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
            const double v = g[static_cast<std::size_t>(r) * ow + c];
            for (int k = 0; k < s; ++k) {
                tmp[static_cast<std::size_t>(r + k) * ow + c] += w[k] * v;
            }
        }
    }
    std::vector<double> out(static_cast<std::size_t>(H) * W, 0.0);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < ow; ++c) {
            const double v = tmp[static_cast<std::size_t>(r) * ow + c];
            for (int k = 0; k < s; ++k) {
                out[static_cast<std::size_t>(r) * W + c + k] += w[k] * v;
            }
        }
    }
    return out;
}

std::vector<double> channel(const Map &m, int ch) {
    std::vector<double> out(static_cast<std::size_t>(m.width()) * m.height());
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            out[static_cast<std::size_t>(r) * m.width() + c] = m(r, c, ch);
        }
    }
    return out;
}

// Mean SSIM over channels and valid window positions; optionally the
// gradient w.r.t. `x`.
double ssim_impl(const Map &x, const Map &y, Map *grad_x) {
    require_same_shape(x, y, "ssim");
    const int W = x.width(), H = x.height();
    const int s = ssim_window_size(W, H);
    if (s < 1) {
        throw ContractError("ssim: empty image");
    }
    const auto w = gaussian_window(s);
    const int ow = W - s + 1, oh = H - s + 1;
    const double count = static_cast<double>(ow) * oh * x.channels();
    if (grad_x) {
        *grad_x = Map(W, H, x.channels());
    }
    double total = 0.0;
    for (int ch = 0; ch < x.channels(); ++ch) {
        const auto xs = channel(x, ch);
        const auto ys = channel(y, ch);
        std::vector<double> xx(xs.size()), yy(xs.size()), xy(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            xx[i] = xs[i] * xs[i];
            yy[i] = ys[i] * ys[i];
            xy[i] = xs[i] * ys[i];
        }
        const auto mx = filter_valid(xs, W, H, w);
        const auto my = filter_valid(ys, W, H, w);
        const auto exx = filter_valid(xx, W, H, w);
        const auto eyy = filter_valid(yy, W, H, w);
        const auto exy = filter_valid(xy, W, H, w);
        std::vector<double> g_mu(mx.size()), g_xx(mx.size()), g_xy(mx.size());
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double a1 = 2 * mx[i] * my[i] + kSsimC1;
            const double a2 = 2 * (exy[i] - mx[i] * my[i]) + kSsimC2;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1;
            const double b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + kSsimC2;
            const double v = a1 * a2 / (b1 * b2);
            total += v;
            g_mu[i] = (2 * my[i] * a2 - 2 * my[i] * a1) / (b1 * b2) - v * 2 * mx[i] / b1 + v * 2 * mx[i] / b2;
            g_xx[i] = -v / b2;
            g_xy[i] = 2 * a1 / (b1 * b2);
        }
        if (grad_x) {
            const auto d_mu = filter_valid_adjoint(g_mu, W, H, w);
            const auto d_xx = filter_valid_adjoint(g_xx, W, H, w);
            const auto d_xy = filter_valid_adjoint(g_xy, W, H, w);
            for (int r = 0; r < H; ++r) {
                for (int c = 0; c < W; ++c) {
                    const std::size_t i = static_cast<std::size_t>(r) * W + c;
                    (*grad_x)(r, c, ch) = (d_mu[i] + 2 * xs[i] * d_xx[i] + ys[i] * d_xy[i]) / count;
                }
            }
        }
    }
    return total / count;
}

Map clamp_target(const Map &img, const char *name) {
    Map out = img;
    bool clamped = false;
    for (auto &v : out.data()) {
        if (v < 0.0 || v > 1.0) {
            v = std::clamp(v, 0.0, 1.0);
            clamped = true;
        }
    }
    if (clamped) {
        log_warning(std::string(name) + ": target image values outside [0, 1] were clamped");
    }
    return out;
}

// Mean-over-channels absolute difference between two pixels.
double mean_abs_diff(const Map &m, int r0, int c0, int r1, int c1) {
    double s = 0.0;
    for (int k = 0; k < m.channels(); ++k) {
        s += std::abs(m(r1, c1, k) - m(r0, c0, k));
    }
    return s / m.channels();
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Edge-aware smoothness of one map against one image; accumulates into grad.
double smooth_term(const Map &d, const Map &img, Map &grad) {
    const int W = d.width(), H = d.height();
    const int C = d.channels();
    double total = 0.0;
    if (W > 1) {
        const double norm = 1.0 / (static_cast<double>(W - 1) * H);
        double sum = 0.0;
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c + 1 < W; ++c) {
                const double weight = std::exp(-mean_abs_diff(img, r, c, r, c + 1));
                for (int k = 0; k < C; ++k) {
                    const double diff = d(r, c + 1, k) - d(r, c, k);
                    sum += weight * std::abs(diff) / C;
                    const double g = norm * weight * sign(diff) / C;
                    grad(r, c + 1, k) += g;
                    grad(r, c, k) -= g;
                }
            }
        }
        total += norm * sum;
    }
    if (H > 1) {
        const double norm = 1.0 / (static_cast<double>(H - 1) * W);
        double sum = 0.0;
        for (int r = 0; r + 1 < H; ++r) {
            for (int c = 0; c < W; ++c) {
                const double weight = std::exp(-mean_abs_diff(img, r, c, r + 1, c));
                for (int k = 0; k < C; ++k) {
                    const double diff = d(r + 1, c, k) - d(r, c, k);
                    sum += weight * std::abs(diff) / C;
                    const double g = norm * weight * sign(diff) / C;
                    grad(r + 1, c, k) += g;
                    grad(r, c, k) -= g;
                }
            }
        }
        total += norm * sum;
    }
    return total;
}

} // namespace

void LossWeights::validate() const {
    if (!(point >= 0.0) || !(pose >= 0.0) || !(lpips >= 0.0) || !(smooth >= 0.0)) {
        throw InvalidParameter("loss weights must be non-negative");
    }
}

LossResult loss_motion(const GaussianCloud &cloud, const Map &flow_t, const Map &flow_t1, const Supervision &sup) {
    return supervised_term(cloud, flow_t, flow_t1, sup, Field::motion);
}

LossResult loss_point(const GaussianCloud &cloud, const Map &point_t, const Map &point_t1, const Supervision &sup) {
    return supervised_term(cloud, point_t, point_t1, sup, Field::center);
}

LossResult loss_pose(const RelativePose &pred, const RelativePose &gt) {
    LossResult res;
    const Quat q = quat_normalize(pred.q);
    const Quat q_gt = quat_normalize(gt.q);
    const Quat target = q.dot(q_gt) >= 0.0 ? q_gt : Quat(-q_gt);
    const Quat eq = q - target;
    const Vec3 et = pred.t - gt.t;
    res.value = eq.norm() + et.norm();
    const double nq = eq.norm();
    const Quat dq = nq > 0.0 ? Quat(eq / nq) : Quat::Zero();
    res.direct.pose.q = normalize_grad(pred.q, dq);
    res.direct.pose.t = unit_or_zero(et);
    return res;
}

double mse(const Map &a, const Map &b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        s += (x[i] - y[i]) * (x[i] - y[i]);
    }
    return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

double ssim(const Map &a, const Map &b) { return ssim_impl(a, b, nullptr); }

LossResult loss_photometric(const Map &render_t, const Map &render_t1, const Map &image_t, const Map &image_t1,
                            double w_lpips) {
    LossResult res;
    const std::array<const Map *, 2> renders{&render_t, &render_t1};
    const std::array<const Map *, 2> images{&image_t, &image_t1};
    for (int u = 0; u < 2; ++u) {
        const Map &x = *renders[u];
        require_same_shape(x, *images[u], "loss_photometric");
        const Map y = clamp_target(*images[u], "loss_photometric");
        Map grad(x.width(), x.height(), x.channels());
        const double n = static_cast<double>(x.size());
        auto xs = x.data();
        auto ys = y.data();
        auto gs = grad.data();
        double sq = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double e = xs[i] - ys[i];
            sq += e * e;
            gs[i] = 2.0 * e / n;
        }
        res.value += sq / n;
        if (w_lpips > 0.0) {
            Map g_ssim;
            const double s = ssim_impl(x, y, &g_ssim);
            res.value += w_lpips * 0.5 * (1.0 - s);
            auto gss = g_ssim.data();
            for (std::size_t i = 0; i < gs.size(); ++i) {
                gs[i] -= w_lpips * 0.5 * gss[i];
            }
        }
        res.cotangents[u].color = std::move(grad);
    }
    return res;
}

LossResult loss_smooth(const Map &point_t, const Map &point_t1, const Map &flow_t, const Map &flow_t1,
                       const Map &image_t, const Map &image_t1) {
    LossResult res;
    const std::array<const Map *, 2> points{&point_t, &point_t1};
    const std::array<const Map *, 2> flows{&flow_t, &flow_t1};
    const std::array<const Map *, 2> images{&image_t, &image_t1};
    for (int u = 0; u < 2; ++u) {
        const Map &img = *images[u];
        for (const Map *d : {points[u], flows[u]}) {
            if (d->width() != img.width() || d->height() != img.height()) {
                throw ContractError("loss_smooth: map " + d->shape_string() + " does not match image " +
                                    img.shape_string());
            }
        }
        Map gp(img.width(), img.height(), points[u]->channels());
        Map gf(img.width(), img.height(), flows[u]->channels());
        res.value += smooth_term(*points[u], img, gp);
        res.value += smooth_term(*flows[u], img, gf);
        res.cotangents[u].point = std::move(gp);
        res.cotangents[u].flow = std::move(gf);
    }
    return res;
}

namespace {

void check_renders(const Scene &scene, const Rasterizer &rt, const Rasterizer &rt1) {
    if (&rt.cloud() != &scene.cloud || &rt1.cloud() != &scene.cloud) {
        throw ContractError("loss_total: renders must come from scene.cloud");
    }
    if (rt.request().dt != 0.0 || rt1.request().dt != 1.0) {
        throw ContractError("loss_total: renders must be at dt = 0 (frame t) and dt = 1 (frame t+1)");
    }
    if (!(rt.request().view == RelativePose::identity()) || !(rt1.request().view == scene.pose)) {
        throw ContractError("loss_total: renders must use the identity view and the scene pose");
    }
}

} // namespace

TotalLoss loss_total(const Scene &scene, const Rasterizer &render_t, const Rasterizer &render_t1,
                     const std::array<Map, 2> &images, const Supervision &sup, const LossWeights &weights) {
    weights.validate();
    check_renders(scene, render_t, render_t1);
    const RenderOutput &ot = render_t.output();
    const RenderOutput &ot1 = render_t1.output();
    const std::size_t n = scene.cloud.size();

    TotalLoss total;
    total.gradient = ParamGradients::zeros(n);
    std::array<Cotangents, 2> cot;
    auto accumulate = [&](LossResult r, double w, double &component) {
        component = r.value;
        total.value += w * r.value;
        if (w == 0.0) {
            return;
        }
        for (int u = 0; u < 2; ++u) {
            cot[u] += w == 1.0 ? r.cotangents[u] : r.cotangents[u].scaled(w);
        }
        if (!r.direct.gaussians.empty()) {
            total.gradient += w == 1.0 ? r.direct : r.direct.scaled(w);
        } else {
            total.gradient.pose.q += w * r.direct.pose.q;
            total.gradient.pose.t += w * r.direct.pose.t;
        }
    };

    accumulate(loss_motion(scene.cloud, ot.flow, ot1.flow, sup), 1.0, total.components.motion);
    accumulate(loss_point(scene.cloud, ot.point, ot1.point, sup), weights.point, total.components.point);
    if (sup.pose) {
        accumulate(loss_pose(scene.pose, *sup.pose), weights.pose, total.components.pose);
    }
    accumulate(loss_photometric(ot.color, ot1.color, images[0], images[1], weights.lpips), 1.0,
               total.components.photo);
    if (weights.smooth > 0.0) {
        accumulate(loss_smooth(ot.point, ot1.point, ot.flow, ot1.flow, images[0], images[1]), weights.smooth,
                   total.components.smooth);
    } else {
        total.components.smooth =
            loss_smooth(ot.point, ot1.point, ot.flow, ot1.flow, images[0], images[1]).value;
    }

    ParamGradients g_t = backward(render_t, cot[0]);
    ParamGradients g_t1 = backward(render_t1, cot[1]);
    g_t.pose = PoseParams{}; // the first camera is fixed at the identity
    total.gradient += g_t;
    total.gradient += g_t1;
    return total;
}

TotalLoss evaluate_objective(const Scene &scene, const std::array<Map, 2> &images, const Supervision &sup,
                             const LossWeights &weights, const RasterSettings &settings) {
    RenderRequest rt{scene.intrinsics, RelativePose::identity(), 0.0, kAllChannels};
    RenderRequest rt1{scene.intrinsics, scene.pose, 1.0, kAllChannels};
    Rasterizer a(scene.cloud, rt, settings);
    Rasterizer b(scene.cloud, rt1, settings);
    return loss_total(scene, a, b, images, sup, weights);
}

double objective_value(const Scene &scene, const std::array<Map, 2> &images, const Supervision &sup,
                       const LossWeights &weights, const RasterSettings &settings) {
    weights.validate();
    RenderRequest rt{scene.intrinsics, RelativePose::identity(), 0.0, kAllChannels};
    RenderRequest rt1{scene.intrinsics, scene.pose, 1.0, kAllChannels};
    const RenderOutput ot = rasterize(scene.cloud, rt, settings);
    const RenderOutput ot1 = rasterize(scene.cloud, rt1, settings);
    double v = loss_motion(scene.cloud, ot.flow, ot1.flow, sup).value;
    v += weights.point * loss_point(scene.cloud, ot.point, ot1.point, sup).value;
    if (sup.pose) {
        v += weights.pose * loss_pose(scene.pose, *sup.pose).value;
    }
    v += loss_photometric(ot.color, ot1.color, images[0], images[1], weights.lpips).value;
    v += weights.smooth * loss_smooth(ot.point, ot1.point, ot.flow, ot1.flow, images[0], images[1]).value;
    return v;
}

} // namespace dyn4d
