#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dyn4d/eval.hpp"
#include "dyn4d/io.hpp"
#include "dyn4d/tasks.hpp"

namespace py = pybind11;
using namespace dyn4d;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Map to_map(const Array &a) {
    if (a.ndim() != 2 && a.ndim() != 3) {
        throw py::value_error("expected an array of shape (H, W) or (H, W, C)");
    }
    const int h = static_cast<int>(a.shape(0));
    const int w = static_cast<int>(a.shape(1));
    const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
    Map m(w, h, c);
    std::copy(a.data(), a.data() + m.size(), m.data().begin());
    return m;
}

py::array_t<double> to_array(const Map &m) {
    std::vector<py::ssize_t> shape{m.height(), m.width()};
    if (m.channels() != 1) {
        shape.push_back(m.channels());
    }
    py::array_t<double> a(shape);
    std::copy(m.data().begin(), m.data().end(), a.mutable_data());
    return a;
}

Mask to_mask(const std::optional<py::array_t<bool, py::array::c_style | py::array::forcecast>> &a, int w, int h) {
    if (!a) {
        return {};
    }
    if (a->ndim() != 2 || a->shape(0) != h || a->shape(1) != w) {
        throw py::value_error("mask must have shape (H, W) matching the maps");
    }
    Mask m(w, h, 1);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.data()[i] = a->data()[i] ? 1 : 0;
    }
    return m;
}

py::dict render_dict(const RenderOutput &r) {
    py::dict d;
    d["color"] = to_array(r.color);
    d["point"] = to_array(r.point);
    d["flow"] = to_array(r.flow);
    d["depth"] = to_array(r.depth);
    d["alpha"] = to_array(r.alpha);
    return d;
}

py::tuple pose_tuple(const RelativePose &p) {
    return py::make_tuple(std::vector<double>(p.q.data(), p.q.data() + 4),
                          std::vector<double>(p.t.data(), p.t.data() + 3));
}

} // namespace

PYBIND11_MODULE(_dyn4d, m) {
    m.doc() = "Two-view dynamic 3D Gaussian splatting: fitting, rendering and metrics";

    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<CameraIntrinsics>(m, "Intrinsics")
        .def(py::init([](double fx, double fy, double cx, double cy, int width, int height) {
                 CameraIntrinsics K{fx, fy, cx, cy, width, height};
                 K.validate();
                 return K;
             }),
             py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"), py::arg("height"))
        .def_readonly("fx", &CameraIntrinsics::fx)
        .def_readonly("fy", &CameraIntrinsics::fy)
        .def_readonly("cx", &CameraIntrinsics::cx)
        .def_readonly("cy", &CameraIntrinsics::cy)
        .def_readonly("width", &CameraIntrinsics::width)
        .def_readonly("height", &CameraIntrinsics::height);

    py::class_<Scene>(m, "Scene")
        .def_property_readonly("num_gaussians", [](const Scene &s) { return s.cloud.size(); })
        .def_property_readonly("sh_degree", [](const Scene &s) { return s.cloud.sh_degree; })
        .def_property_readonly("pose", [](const Scene &s) { return pose_tuple(s.pose); })
        .def_property_readonly("intrinsics", [](const Scene &s) { return s.intrinsics; })
        .def("render", [](const Scene &s, double dt, const std::string &target, int threads) {
                 if (target != "t" && target != "t1") {
                     throw py::value_error("target must be 't' or 't1'");
                 }
                 RasterSettings rs;
                 rs.threads = threads;
                 return render_dict(render_at(s, dt, target == "t" ? TargetFrame::canonical : TargetFrame::second, rs));
             },
             py::arg("dt") = 0.0, py::arg("target") = "t", py::arg("threads") = 1)
        .def("interpolate", [](const Scene &s, double dt, double view_fraction) {
                 return render_dict(interpolate_4d(s, dt, slerp(RelativePose::identity(), s.pose, view_fraction)));
             },
             py::arg("dt"), py::arg("view_fraction"))
        .def("opacity_maps", [](const Scene &s) {
            const OpacityMaps o = opacity_map(s);
            return py::make_tuple(to_array(o.maps[0]), to_array(o.maps[1]));
        })
        .def("save", [](const Scene &s, const std::string &path) { save_scene(s, path); })
        .def("to_bytes", [](const Scene &s) { return py::bytes(encode_scene(s)); });

    m.def("load_scene", [](const std::string &path) { return load_scene(path); });
    m.def("scene_from_bytes", [](const py::bytes &b) { return decode_scene(std::string(b)); });

    m.def("init_scene", [](const Array &image_t, const Array &image_t1, const CameraIntrinsics &K, double depth,
                           int sh_degree) {
              FitConfig cfg;
              cfg.initial_depth = depth;
              cfg.sh_degree = sh_degree;
              return init_scene(to_map(image_t), to_map(image_t1), K, cfg);
          },
          py::arg("image_t"), py::arg("image_t1"), py::arg("intrinsics"), py::arg("initial_depth") = 1.0,
          py::arg("sh_degree") = 1);

    m.def("fit", [](const Scene &scene, const Array &image_t, const Array &image_t1, int iterations,
                    std::uint64_t seed, int threads) {
              FitConfig cfg;
              cfg.iterations = iterations;
              cfg.seed = seed;
              cfg.raster.threads = threads;
              FitResult r;
              {
                  py::gil_scoped_release release;
                  r = optimize(scene, to_map(image_t), to_map(image_t1), Supervision{}, cfg);
              }
              std::vector<double> totals;
              for (const IterationRecord &rec : r.report.trace) {
                  totals.push_back(rec.total);
              }
              return py::make_tuple(r.scene, totals, r.report.converged);
          },
          py::arg("scene"), py::arg("image_t"), py::arg("image_t1"), py::arg("iterations") = 100,
          py::arg("seed") = 0, py::arg("threads") = 1,
          "Photometric-only fit; returns (scene, loss trace, converged).");

    m.def("synthetic_scene", [](std::uint64_t seed, bool static_scene) {
              SyntheticSpec spec;
              if (static_scene) {
                  spec.sphere_velocity = Vec3::Zero();
              }
              const SyntheticScene s = make_synthetic_scene(spec, seed);
              py::dict d;
              d["image_t"] = to_array(s.images[0]);
              d["image_t1"] = to_array(s.images[1]);
              d["points_t"] = to_array(s.supervision.frames[0].points);
              d["points_t1"] = to_array(s.supervision.frames[1].points);
              d["flow_t"] = to_array(s.supervision.frames[0].flow);
              d["flow_t1"] = to_array(s.supervision.frames[1].flow);
              d["intrinsics"] = s.intrinsics;
              d["pose"] = pose_tuple(s.ground_truth.pose);
              d["scene"] = s.ground_truth;
              return d;
          },
          py::arg("seed") = 0, py::arg("static") = false);

    m.def("gradcheck", [](std::uint64_t seed, int gaussians) {
              GradcheckConfig cfg;
              cfg.seed = seed;
              cfg.gaussians = gaussians;
              const GradcheckReport r = gradcheck(cfg);
              return py::make_tuple(r.passed, r.to_text());
          },
          py::arg("seed") = 7, py::arg("gaussians") = 10);

    using OptMask = std::optional<py::array_t<bool, py::array::c_style | py::array::forcecast>>;
    m.def("point_epe", [](const Array &p, const Array &g, const OptMask &mask) {
              const Map gm = to_map(g);
              return point_epe(to_map(p), gm, to_mask(mask, gm.width(), gm.height()));
          },
          py::arg("pred"), py::arg("gt"), py::arg("mask") = py::none());
    m.def("depth_abs_rel", [](const Array &p, const Array &g, const OptMask &mask) {
              const Map gm = to_map(g);
              return depth_abs_rel(to_map(p), gm, to_mask(mask, gm.width(), gm.height()));
          },
          py::arg("pred"), py::arg("gt"), py::arg("mask") = py::none());
    m.def("depth_delta", [](const Array &p, const Array &g, const OptMask &mask, double ratio) {
              const Map gm = to_map(g);
              return depth_delta(to_map(p), gm, to_mask(mask, gm.width(), gm.height()), ratio);
          },
          py::arg("pred"), py::arg("gt"), py::arg("mask") = py::none(), py::arg("ratio") = 1.25);
    m.def("flow_delta3d", [](const Array &p, const Array &g, const OptMask &mask, double radius) {
              const Map gm = to_map(g);
              return flow_delta3d(to_map(p), gm, to_mask(mask, gm.width(), gm.height()), radius);
          },
          py::arg("pred"), py::arg("gt"), py::arg("mask") = py::none(), py::arg("radius") = 0.05);
    m.def("median_scale_align", [](const Array &p, const Array &g, const OptMask &mask, const std::string &stat) {
              const Map gm = to_map(g);
              if (stat != "z" && stat != "norm") {
                  throw py::value_error("stat must be 'z' or 'norm'");
              }
              const AlignedMap a = median_scale_align(to_map(p), gm, to_mask(mask, gm.width(), gm.height()),
                                                      stat == "z" ? AlignStatistic::z_depth : AlignStatistic::norm);
              return py::make_tuple(to_array(a.map), a.scale, a.skipped);
          },
          py::arg("pred"), py::arg("gt"), py::arg("mask") = py::none(), py::arg("stat") = "norm");

    m.def("flow_to_color", [](const Array &flow, double max_norm) {
              return to_array(flow_to_color(to_map(flow), Mask{}, max_norm));
          },
          py::arg("flow"), py::arg("max_norm") = 0.0);
}
