#include "dyn4d/cli.hpp"

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "dyn4d/io.hpp"
#include "dyn4d/log.hpp"
#include "dyn4d/tasks.hpp"

namespace dyn4d {

namespace {

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string out = ".";
    bool verbose = false;
};

Config load_global_config(const GlobalOptions &g) {
    Config c = g.config_path.empty() ? Config{} : load_config(g.config_path);
    if (g.seed) {
        c.fit.seed = *g.seed;
    }
    if (g.threads) {
        if (*g.threads < 1) {
            throw InvalidParameter("--threads must be at least 1");
        }
        c.fit.raster.threads = *g.threads;
    }
    return c;
}

fs::path output_dir(const GlobalOptions &g) {
    const fs::path dir(g.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError("cannot create output directory '" + dir.string() + "'");
    }
    return dir;
}

Mask load_mask(const std::string &path) {
    const Map m = load_map(path);
    if (m.channels() != 1) {
        throw ContractError("mask '" + path + "' must have one channel, got " + m.shape_string());
    }
    Mask out(m.width(), m.height(), 1);
    for (std::size_t i = 0; i < m.size(); ++i) {
        out.data()[i] = m.data()[i] > 0.5 ? 1 : 0;
    }
    return out;
}

Map mask_to_map(const Mask &m) {
    Map out(m.width(), m.height(), 1);
    for (std::size_t i = 0; i < m.size(); ++i) {
        out.data()[i] = m.data()[i] ? 1.0 : 0.0;
    }
    return out;
}

void write_render(const RenderOutput &r, const fs::path &dir, const std::string &suffix) {
    save_image(r.color, dir / ("color" + suffix + ".ppm"));
    save_map(r.point, dir / ("points" + suffix + ".pfm"));
    save_map(r.flow, dir / ("flow" + suffix + ".pfm"));
    save_map(r.depth, dir / ("depth" + suffix + ".pfm"));
    save_map(r.alpha, dir / ("alpha" + suffix + ".pfm"));
}

// --- subcommands ------------------------------------------------------------------

struct SynthArgs {
    bool static_scene = false;
};

int run_synth(const GlobalOptions &g, const SynthArgs &a) {
    const Config c = load_global_config(g);
    SyntheticSpec spec;
    spec.sh_degree = c.fit.sh_degree;
    if (a.static_scene) {
        spec.sphere_velocity = Vec3::Zero();
    }
    const SyntheticScene s = make_synthetic_scene(spec, c.fit.seed, c.fit.raster);
    const fs::path dir = output_dir(g);
    save_image(s.images[0], dir / "image_t.ppm");
    save_image(s.images[1], dir / "image_t1.ppm");
    save_intrinsics(s.intrinsics, dir / "intrinsics.txt");
    save_map(s.supervision.frames[0].points, dir / "gt_points_t.pfm");
    save_map(s.supervision.frames[1].points, dir / "gt_points_t1.pfm");
    save_map(s.supervision.frames[0].flow, dir / "gt_flow_t.pfm");
    save_map(s.supervision.frames[1].flow, dir / "gt_flow_t1.pfm");
    save_map(mask_to_map(s.sphere_coverage[0]), dir / "sphere_mask_t.pfm");
    save_map(mask_to_map(s.sphere_coverage[1]), dir / "sphere_mask_t1.pfm");
    save_trajectory(pose_to_trajectory(s.ground_truth.pose), dir / "gt_trajectory.txt");
    save_scene(s.ground_truth, dir / "gt_scene.d4gs");
    log_info("synthetic scene written to " + dir.string());
    return 0;
}

struct FitArgs {
    std::string image_t, image_t1, intrinsics;
    std::string gt_points_t, gt_points_t1, gt_flow_t, gt_flow_t1, gt_trajectory;
    std::optional<int> iterations;
};

int run_fit(const GlobalOptions &g, const FitArgs &a) {
    Config c = load_global_config(g);
    if (a.iterations) {
        c.fit.iterations = *a.iterations;
    }
    if (!c.initial_depth_map.empty()) {
        c.fit.initial_depth_map = load_map(c.initial_depth_map);
    }
    c.fit.validate();
    const CameraIntrinsics K = load_intrinsics(a.intrinsics);
    const Map it = load_image(a.image_t);
    const Map it1 = load_image(a.image_t1);

    Supervision sup;
    auto opt_map = [](const std::string &p) { return p.empty() ? Map{} : load_map(p); };
    sup.frames[0].points = opt_map(a.gt_points_t);
    sup.frames[1].points = opt_map(a.gt_points_t1);
    sup.frames[0].flow = opt_map(a.gt_flow_t);
    sup.frames[1].flow = opt_map(a.gt_flow_t1);
    if (!a.gt_trajectory.empty()) {
        sup.pose = trajectory_to_pose(load_trajectory(a.gt_trajectory));
    }

    const Scene init = init_scene(it, it1, K, c.fit);
    const FitResult res = optimize(init, it, it1, sup, c.fit);
    const fs::path dir = output_dir(g);
    save_scene(res.scene, dir / "scene.d4gs");
    write_file(dir / "fit_report.txt", fit_report_key_values(res.report));
    write_file(dir / "fit_trace.csv", fit_report_csv(res.report));
    // Wall time lives in its own file so the other outputs stay byte-stable.
    write_file(dir / "fit_timing.txt", "seconds=" + std::to_string(res.report.seconds) + "\n");
    if (!res.report.converged) {
        log(LogLevel::error, res.report.message);
        return 1;
    }
    log_info("fit finished: " + std::to_string(res.report.trace.size()) + " iterations");
    return 0;
}

struct RenderArgs {
    std::string scene;
};

int run_render(const GlobalOptions &g, const RenderArgs &a) {
    const Config c = load_global_config(g);
    const Scene s = load_scene(a.scene);
    const RasterSettings &rs = c.fit.raster;
    const RenderOutput r0 = render_at(s, 0.0, TargetFrame::canonical, rs);
    const RenderOutput r1 = render_at(s, 1.0, TargetFrame::second, rs);
    const fs::path dir = output_dir(g);
    write_render(r0, dir, "_t");
    write_render(r1, dir, "_t1");

    const Flow2D f = project_scene_flow(r0, s.pose, s.intrinsics, c.alpha_threshold);
    Map f3(f.flow.width(), f.flow.height(), 3);
    for (int row = 0; row < f3.height(); ++row) {
        for (int col = 0; col < f3.width(); ++col) {
            f3(row, col, 0) = f.flow(row, col, 0);
            f3(row, col, 1) = f.flow(row, col, 1);
            f3(row, col, 2) = f.valid(row, col);
        }
    }
    save_map(f3, dir / "optical_flow.pfm");
    save_image(flow_to_color(f.flow, f.valid, c.flow_max_norm), dir / "optical_flow.ppm");
    save_gray_image(mask_to_map(segment_moving(r0, c.motion_threshold, c.alpha_threshold)),
                    dir / "moving_mask_t.ppm");
    const OpacityMaps o = opacity_map(s);
    save_map(o.maps[0], dir / "opacity_t.pfm");
    save_map(o.maps[1], dir / "opacity_t1.pfm");
    return 0;
}

struct InterpArgs {
    std::string scene;
    double dt = 0.5;
    std::optional<double> view_fraction;
};

int run_interp(const GlobalOptions &g, const InterpArgs &a) {
    const Config c = load_global_config(g);
    const Scene s = load_scene(a.scene);
    const double u = a.view_fraction.value_or(a.dt);
    const RelativePose view = slerp(RelativePose::identity(), s.pose, u);
    const RenderOutput r = interpolate_4d(s, a.dt, view, c.fit.raster);
    if (r.extrapolated) {
        log_warning("dt outside [0, 1]: linear motion is extrapolated");
    }
    write_render(r, output_dir(g), "_interp");
    return 0;
}

struct EvalArgs {
    std::vector<std::string> pred_points, gt_points, pred_flow, gt_flow, masks;
    std::string pred_trajectory, gt_trajectory, mode;
    bool no_align = false;
};

int run_eval(const GlobalOptions &g, const EvalArgs &a) {
    Config c = load_global_config(g);
    if (!a.mode.empty()) {
        if (a.mode == "per-frame") {
            c.eval.mode = AveragingMode::per_frame;
        } else if (a.mode == "per-valid-pixel") {
            c.eval.mode = AveragingMode::per_valid_pixel;
        } else {
            throw InvalidParameter("--mode must be per-frame or per-valid-pixel");
        }
    }
    if (a.no_align) {
        c.eval.align = false;
    }
    if (a.pred_points.size() != a.gt_points.size() || a.pred_flow.size() != a.gt_flow.size()) {
        throw ContractError("prediction and ground-truth file counts differ");
    }
    const std::size_t frames = std::max(a.gt_points.size(), a.gt_flow.size());
    if ((!a.gt_points.empty() && a.gt_points.size() != frames) || (!a.gt_flow.empty() && a.gt_flow.size() != frames)) {
        throw ContractError("point and flow inputs must cover the same number of frames");
    }
    if (!a.masks.empty() && a.masks.size() != frames) {
        throw ContractError("one --mask per frame is required");
    }
    std::vector<EvalFrame> pred(frames), gt(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        if (!a.gt_points.empty()) {
            pred[f].points = load_map(a.pred_points[f]);
            gt[f].points = load_map(a.gt_points[f]);
        }
        if (!a.gt_flow.empty()) {
            pred[f].flow = load_map(a.pred_flow[f]);
            gt[f].flow = load_map(a.gt_flow[f]);
        }
        if (!a.masks.empty()) {
            gt[f].point_valid = load_mask(a.masks[f]);
            gt[f].flow_valid = gt[f].point_valid;
        }
    }
    std::optional<Trajectory> pt, gtt;
    if (!a.pred_trajectory.empty() || !a.gt_trajectory.empty()) {
        if (a.pred_trajectory.empty() || a.gt_trajectory.empty()) {
            throw ContractError("--pred-trajectory and --gt-trajectory go together");
        }
        pt = load_trajectory(a.pred_trajectory);
        gtt = load_trajectory(a.gt_trajectory);
    }
    const MetricReport report = evaluate(pred, gt, c.eval, pt, gtt);
    const fs::path dir = output_dir(g);
    write_file(dir / "metrics.txt", report.to_table());
    write_file(dir / "metrics.kv", report.to_key_value());
    return 0;
}

struct GradcheckArgs {
    GradcheckConfig cfg;
};

int run_gradcheck(const GlobalOptions &g, GradcheckArgs a) {
    const Config c = load_global_config(g);
    if (g.seed) {
        a.cfg.seed = *g.seed;
    }
    a.cfg.threads = c.fit.raster.threads;
    const GradcheckReport report = gradcheck(a.cfg);
    write_file(output_dir(g) / "gradcheck.txt", report.to_text());
    log(report.passed ? LogLevel::info : LogLevel::error,
        std::string("gradcheck ") + (report.passed ? "passed" : "FAILED"));
    return report.passed ? 0 : 1;
}

} // namespace

int cli_main(const std::vector<std::string> &args) {
    std::vector<char *> argv;
    std::vector<std::string> copy = args;
    for (std::string &s : copy) {
        argv.push_back(s.data());
    }
    argv.push_back(nullptr);
    return cli_main(static_cast<int>(copy.size()), argv.data());
}

int cli_main(int argc, char **argv) {
    CLI::App app{"dyn4d: two-view dynamic 3D Gaussian scene fitting, rendering and evaluation"};
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--config", g.config_path, "key = value configuration file");
    app.add_option("--seed", g.seed, "random seed");
    app.add_option("--threads", g.threads, "worker threads for rendering and gradients");
    app.add_option("--out", g.out, "output directory");
    app.add_flag("-v,--verbose", g.verbose, "progress messages on standard error");

    SynthArgs synth;
    auto *cmd_synth = app.add_subcommand("synth", "write a seeded synthetic scene with dense ground truth");
    cmd_synth->add_flag("--static", synth.static_scene, "sphere does not move");

    FitArgs fit;
    auto *cmd_fit = app.add_subcommand("fit", "optimize a scene for an image pair");
    cmd_fit->add_option("--image-t", fit.image_t, "first image (PPM)")->required();
    cmd_fit->add_option("--image-t1", fit.image_t1, "second image (PPM)")->required();
    cmd_fit->add_option("--intrinsics", fit.intrinsics, "intrinsics file")->required();
    cmd_fit->add_option("--gt-points-t", fit.gt_points_t, "ground-truth point map, first frame (PFM)");
    cmd_fit->add_option("--gt-points-t1", fit.gt_points_t1, "ground-truth point map, second frame (PFM)");
    cmd_fit->add_option("--gt-flow-t", fit.gt_flow_t, "ground-truth scene flow, first frame (PFM)");
    cmd_fit->add_option("--gt-flow-t1", fit.gt_flow_t1, "ground-truth scene flow, second frame (PFM)");
    cmd_fit->add_option("--gt-trajectory", fit.gt_trajectory, "ground-truth two-pose trajectory");
    cmd_fit->add_option("--iterations", fit.iterations, "override the configured iteration count");

    RenderArgs render;
    auto *cmd_render = app.add_subcommand("render", "render both frames and derived maps of a saved scene");
    cmd_render->add_option("--scene", render.scene, "scene container")->required();

    InterpArgs interp;
    auto *cmd_interp = app.add_subcommand("interp", "render an intermediate time and camera");
    cmd_interp->add_option("--scene", interp.scene, "scene container")->required();
    cmd_interp->add_option("--dt", interp.dt, "time offset in [0, 1]");
    cmd_interp->add_option("--view-fraction", interp.view_fraction, "camera slerp fraction (default: dt)");

    EvalArgs ev;
    auto *cmd_eval = app.add_subcommand("eval", "compute point, depth, flow and pose metrics");
    cmd_eval->add_option("--pred-points", ev.pred_points, "predicted point maps, one per frame");
    cmd_eval->add_option("--gt-points", ev.gt_points, "ground-truth point maps");
    cmd_eval->add_option("--pred-flow", ev.pred_flow, "predicted scene flow maps");
    cmd_eval->add_option("--gt-flow", ev.gt_flow, "ground-truth scene flow maps");
    cmd_eval->add_option("--mask", ev.masks, "validity masks (1-channel PFM, > 0.5 is valid)");
    cmd_eval->add_option("--pred-trajectory", ev.pred_trajectory, "predicted trajectory");
    cmd_eval->add_option("--gt-trajectory", ev.gt_trajectory, "ground-truth trajectory");
    cmd_eval->add_option("--mode", ev.mode, "per-frame or per-valid-pixel");
    cmd_eval->add_flag("--no-align", ev.no_align, "skip median scale alignment");

    GradcheckArgs gc;
    auto *cmd_gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
    cmd_gc->add_option("--gaussians", gc.cfg.gaussians, "Gaussians in the random scene");
    cmd_gc->add_option("--width", gc.cfg.width, "image width");
    cmd_gc->add_option("--height", gc.cfg.height, "image height");
    cmd_gc->add_option("--sh-degree", gc.cfg.sh_degree, "SH degree");
    cmd_gc->add_option("--step", gc.cfg.step, "finite-difference step");
    cmd_gc->add_option("--tolerance", gc.cfg.tolerance, "relative error tolerance");

    for (CLI::App *sub : app.get_subcommands({})) {
        sub->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    set_log_level(g.verbose ? LogLevel::info : LogLevel::warning);
    try {
        if (cmd_synth->parsed()) return run_synth(g, synth);
        if (cmd_fit->parsed()) return run_fit(g, fit);
        if (cmd_render->parsed()) return run_render(g, render);
        if (cmd_interp->parsed()) return run_interp(g, interp);
        if (cmd_eval->parsed()) return run_eval(g, ev);
        if (cmd_gc->parsed()) return run_gradcheck(g, gc);
    } catch (const IoError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

} // namespace dyn4d
