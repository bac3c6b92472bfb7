#include "dyn4d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "dyn4d/log.hpp"

namespace dyn4d {

namespace {

void check_pair(const Map &pred, const Map &gt, const Mask &mask, int channels, const char *what) {
    if (!pred.same_shape(gt)) {
        throw ContractError(std::string(what) + ": prediction " + pred.shape_string() + " and ground truth " +
                            gt.shape_string() + " differ in shape");
    }
    if (channels > 0 && gt.channels() != channels) {
        throw ContractError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                            gt.shape_string());
    }
    if (!mask.empty() && (mask.width() != gt.width() || mask.height() != gt.height() || mask.channels() != 1)) {
        throw ContractError(std::string(what) + ": mask " + mask.shape_string() + " does not match " +
                            gt.shape_string());
    }
}

bool valid(const Mask &mask, int row, int col) { return mask.empty() || mask(row, col) != 0; }

Vec3 at(const Map &m, int row, int col) { return Vec3(m(row, col, 0), m(row, col, 1), m(row, col, 2)); }

struct Accum {
    double sum = 0.0;
    std::size_t count = 0;

    double mean(const char *what) const {
        if (count == 0) {
            throw UndefinedMetric(std::string(what) + " is undefined: no valid pixels");
        }
        return sum / static_cast<double>(count);
    }
};

Accum l2_error(const Map &pred, const Map &gt, const Mask &mask) {
    Accum a;
    for (int row = 0; row < gt.height(); ++row) {
        for (int col = 0; col < gt.width(); ++col) {
            if (valid(mask, row, col)) {
                a.sum += (at(pred, row, col) - at(gt, row, col)).norm();
                ++a.count;
            }
        }
    }
    return a;
}

Accum radius_inliers(const Map &pred, const Map &gt, const Mask &mask, double radius) {
    Accum a;
    for (int row = 0; row < gt.height(); ++row) {
        for (int col = 0; col < gt.width(); ++col) {
            if (valid(mask, row, col)) {
                a.sum += (at(pred, row, col) - at(gt, row, col)).norm() < radius ? 100.0 : 0.0;
                ++a.count;
            }
        }
    }
    return a;
}

// Depth maps may have one channel, or three (z is taken from channel 2).
double depth_at(const Map &m, int row, int col) { return m.channels() == 1 ? m(row, col) : m(row, col, 2); }

template <class F>
Accum depth_accumulate(const Map &pred, const Map &gt, const Mask &mask, F &&term) {
    Accum a;
    std::size_t excluded = 0;
    for (int row = 0; row < gt.height(); ++row) {
        for (int col = 0; col < gt.width(); ++col) {
            if (!valid(mask, row, col)) {
                continue;
            }
            const double g = depth_at(gt, row, col);
            if (!(g > 0.0)) {
                ++excluded;
                continue;
            }
            a.sum += term(depth_at(pred, row, col), g);
            ++a.count;
        }
    }
    if (excluded > 0) {
        log_warning(std::to_string(excluded) + " pixel(s) with non-positive ground-truth depth excluded");
    }
    return a;
}

Accum abs_rel_accum(const Map &pred, const Map &gt, const Mask &mask) {
    return depth_accumulate(pred, gt, mask, [](double p, double g) { return std::abs(p - g) / g; });
}

Accum delta_accum(const Map &pred, const Map &gt, const Mask &mask, double ratio) {
    return depth_accumulate(pred, gt, mask, [ratio](double p, double g) {
        if (!(p > 0.0)) {
            return 0.0;
        }
        return std::max(p / g, g / p) < ratio ? 100.0 : 0.0;
    });
}

double median(std::vector<double> v) {
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    const double hi = v[mid];
    if (n % 2 == 1) {
        return hi;
    }
    const double lo = *std::max_element(v.begin(), v.begin() + mid);
    return 0.5 * (lo + hi);
}

} // namespace

std::size_t count_valid(const Mask &mask, int width, int height) {
    if (mask.empty()) {
        return static_cast<std::size_t>(width) * height;
    }
    std::size_t n = 0;
    for (auto m : mask.data()) {
        n += m != 0;
    }
    return n;
}

AlignedMap median_scale_align(const Map &pred, const Map &gt, const Mask &mask, AlignStatistic stat) {
    check_pair(pred, gt, mask, 3, "median_scale_align");
    std::vector<double> sp, sg;
    for (int row = 0; row < gt.height(); ++row) {
        for (int col = 0; col < gt.width(); ++col) {
            if (!valid(mask, row, col)) {
                continue;
            }
            if (stat == AlignStatistic::norm) {
                sp.push_back(at(pred, row, col).norm());
                sg.push_back(at(gt, row, col).norm());
            } else {
                sp.push_back(pred(row, col, 2));
                sg.push_back(gt(row, col, 2));
            }
        }
    }
    if (sp.empty()) {
        throw UndefinedMetric("median_scale_align: no valid pixels");
    }
    AlignedMap out{pred, 1.0, false};
    const double mp = median(std::move(sp));
    const double scale = median(std::move(sg)) / mp;
    if (mp == 0.0 || !std::isfinite(scale)) {
        out.skipped = true;
        log_warning("median scale alignment skipped: zero or non-finite median prediction");
        return out;
    }
    out.scale = scale;
    for (double &x : out.map.data()) {
        x *= scale;
    }
    return out;
}

double point_epe(const Map &pred, const Map &gt, const Mask &mask) {
    check_pair(pred, gt, mask, 3, "point_epe");
    return l2_error(pred, gt, mask).mean("point EPE");
}

double flow_epe3d(const Map &pred, const Map &gt, const Mask &mask) {
    check_pair(pred, gt, mask, 3, "flow_epe3d");
    return l2_error(pred, gt, mask).mean("flow EPE3D");
}

double depth_abs_rel(const Map &pred, const Map &gt, const Mask &mask) {
    check_pair(pred, gt, mask, 0, "depth_abs_rel");
    return abs_rel_accum(pred, gt, mask).mean("AbsRel");
}

double depth_delta(const Map &pred, const Map &gt, const Mask &mask, double ratio) {
    check_pair(pred, gt, mask, 0, "depth_delta");
    return delta_accum(pred, gt, mask, ratio).mean("depth delta");
}

double flow_delta3d(const Map &pred, const Map &gt, const Mask &mask, double radius) {
    check_pair(pred, gt, mask, 3, "flow_delta3d");
    return radius_inliers(pred, gt, mask, radius).mean("flow delta3D");
}

// --- trajectories ---------------------------------------------------------------

namespace {

void check_trajectories(const Trajectory &pred, const Trajectory &gt) {
    if (pred.size() != gt.size()) {
        throw ContractError("trajectory lengths differ: " + std::to_string(pred.size()) + " vs " +
                            std::to_string(gt.size()));
    }
    if (gt.size() < 2) {
        throw ContractError("trajectories need at least two poses");
    }
}

RelativePose normalized(const RelativePose &p) { return {quat_normalize(p.q), p.t}; }

} // namespace

double pose_ate(const Trajectory &pred, const Trajectory &gt, TrajectoryAlignment mode) {
    check_trajectories(pred, gt);
    const Eigen::Index n = static_cast<Eigen::Index>(gt.size());
    Eigen::Matrix3Xd src(3, n), dst(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        src.col(i) = pred[i].pose.t;
        dst.col(i) = gt[i].pose.t;
    }
    const Vec3 src_mean = src.rowwise().mean();
    const double spread = (src.colwise() - src_mean).squaredNorm();
    Eigen::Matrix3Xd aligned;
    if (spread <= 1e-24) {
        // All predicted positions coincide: only a translation is identifiable.
        aligned = src.colwise() + (Vec3(dst.rowwise().mean()) - src_mean);
    } else {
        const Eigen::Matrix4d T = Eigen::umeyama(src, dst, mode == TrajectoryAlignment::sim3);
        aligned = (T.topLeftCorner<3, 3>() * src).colwise() + Vec3(T.topRightCorner<3, 1>());
    }
    return std::sqrt((aligned - dst).colwise().squaredNorm().mean());
}

RpeResult pose_rpe(const Trajectory &pred, const Trajectory &gt) {
    check_trajectories(pred, gt);
    double st = 0.0, sr = 0.0;
    const std::size_t pairs = gt.size() - 1;
    for (std::size_t i = 0; i < pairs; ++i) {
        const RelativePose rp = compose_pose(invert_pose(normalized(pred[i].pose)), normalized(pred[i + 1].pose));
        const RelativePose rg = compose_pose(invert_pose(normalized(gt[i].pose)), normalized(gt[i + 1].pose));
        const RelativePose e = compose_pose(invert_pose(rg), rp);
        st += e.t.squaredNorm();
        const double w = std::min(1.0, std::abs(quat_normalize(e.q)[0]));
        const double angle = 2.0 * std::acos(w) * 180.0 / std::numbers::pi;
        sr += angle * angle;
    }
    return {std::sqrt(st / pairs), std::sqrt(sr / pairs)};
}

// --- reports -------------------------------------------------------------------

std::string mode_name(AveragingMode mode) {
    return mode == AveragingMode::per_frame ? "per-frame" : "per-valid-pixel";
}

const Metric *MetricReport::find(const std::string &name) const {
    for (const Metric &m : metrics) {
        if (m.name == name) {
            return &m;
        }
    }
    return nullptr;
}

double MetricReport::value(const std::string &name) const {
    const Metric *m = find(name);
    if (!m) {
        throw ContractError("metric '" + name + "' not in report");
    }
    return m->value;
}

std::string MetricReport::to_table() const {
    std::ostringstream os;
    os << "averaging: " << mode_name(mode) << '\n';
    os << std::left << std::setw(16) << "metric" << std::right << std::setw(14) << "value" << "  " << std::left
       << std::setw(8) << "unit" << std::right << std::setw(10) << "count" << '\n';
    for (const Metric &m : metrics) {
        os << std::left << std::setw(16) << m.name << std::right << std::setw(14) << std::setprecision(6)
           << m.value << "  " << std::left << std::setw(8) << m.unit << std::right << std::setw(10) << m.count
           << '\n';
    }
    for (const std::string &n : notes) {
        os << "note: " << n << '\n';
    }
    return os.str();
}

std::string MetricReport::to_key_value() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "mode=" << mode_name(mode) << '\n';
    for (const Metric &m : metrics) {
        os << m.name << '=' << m.value << '\n';
        os << m.name << ".unit=" << m.unit << '\n';
        os << m.name << ".count=" << m.count << '\n';
    }
    return os.str();
}

namespace {

struct Aggregate {
    std::string name, unit;
    double frame_sum = 0.0;   // sum of per-frame means
    std::size_t frames = 0;
    double pixel_sum = 0.0;   // sum over pixels
    std::size_t pixels = 0;

    void add(const Accum &a) {
        if (a.count == 0) {
            return;
        }
        frame_sum += a.sum / static_cast<double>(a.count);
        ++frames;
        pixel_sum += a.sum;
        pixels += a.count;
    }
    void emit(MetricReport &r) const {
        if (pixels == 0) {
            return;
        }
        const double v = r.mode == AveragingMode::per_frame ? frame_sum / static_cast<double>(frames)
                                                            : pixel_sum / static_cast<double>(pixels);
        r.metrics.push_back({name, v, unit, pixels});
    }
};

} // namespace

MetricReport evaluate(const std::vector<EvalFrame> &pred, const std::vector<EvalFrame> &gt, const EvalOptions &options,
                      const std::optional<Trajectory> &pred_traj, const std::optional<Trajectory> &gt_traj) {
    if (pred.size() != gt.size()) {
        throw ContractError("prediction has " + std::to_string(pred.size()) + " frame(s), ground truth " +
                            std::to_string(gt.size()));
    }
    MetricReport report;
    report.mode = options.mode;
    Aggregate epe{"point_epe", "units"}, absrel{"depth_abs_rel", "ratio"}, delta{"depth_delta", "%"};
    Aggregate fepe{"flow_epe3d", "units"}, fdelta{"flow_delta3d", "%"};

    for (std::size_t f = 0; f < gt.size(); ++f) {
        const EvalFrame &p = pred[f];
        const EvalFrame &g = gt[f];
        if (!g.points.empty()) {
            check_pair(p.points, g.points, g.point_valid, 3, "points");
            if (count_valid(g.point_valid, g.points.width(), g.points.height()) > 0) {
                Map aligned = p.points;
                if (options.align) {
                    AlignedMap a = median_scale_align(p.points, g.points, g.point_valid, options.point_statistic);
                    if (a.skipped) {
                        report.notes.push_back("frame " + std::to_string(f) + ": point alignment skipped");
                    }
                    aligned = std::move(a.map);
                }
                epe.add(l2_error(aligned, g.points, g.point_valid));
                absrel.add(abs_rel_accum(aligned, g.points, g.point_valid));
                delta.add(delta_accum(aligned, g.points, g.point_valid, options.delta_ratio));
            }
        }
        if (!g.flow.empty()) {
            check_pair(p.flow, g.flow, g.flow_valid, 3, "flow");
            if (count_valid(g.flow_valid, g.flow.width(), g.flow.height()) > 0) {
                Map aligned = p.flow;
                if (options.align) {
                    AlignedMap a = median_scale_align(p.flow, g.flow, g.flow_valid, AlignStatistic::norm);
                    if (a.skipped) {
                        report.notes.push_back("frame " + std::to_string(f) + ": flow alignment skipped");
                    }
                    aligned = std::move(a.map);
                }
                fepe.add(l2_error(aligned, g.flow, g.flow_valid));
                fdelta.add(radius_inliers(aligned, g.flow, g.flow_valid, options.flow_radius));
            }
        }
    }
    for (const Aggregate *a : {&epe, &absrel, &delta, &fepe, &fdelta}) {
        a->emit(report);
    }

    if (pred_traj.has_value() != gt_traj.has_value()) {
        throw ContractError("both trajectories are needed for pose metrics");
    }
    if (pred_traj) {
        const std::size_t pairs = gt_traj->size() - 1;
        report.metrics.push_back({"ate", pose_ate(*pred_traj, *gt_traj, options.trajectory_alignment), "units",
                                  gt_traj->size()});
        const RpeResult rpe = pose_rpe(*pred_traj, *gt_traj);
        report.metrics.push_back({"rpe_trans", rpe.trans, "units", pairs});
        report.metrics.push_back({"rpe_rot", rpe.rot, "deg", pairs});
    }
    return report;
}

} // namespace dyn4d
