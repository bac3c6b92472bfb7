#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyn4d/raster.hpp"

namespace dyn4d {

/// Per-pixel upstream gradients dL/d(output). Empty maps count as zero.
struct Cotangents {
    Map color;
    Map point;
    Map flow;
    Map depth;
    Map alpha;

    Cotangents &operator+=(const Cotangents &o);
    Cotangents scaled(double factor) const;
};

struct PoseParams {
    Quat q = Quat::Zero();
    Vec3 t = Vec3::Zero();
};

/// Gradients in the raw chart: one GaussianParams record per Gaussian plus
/// the raw (unnormalized) view quaternion and translation.
struct ParamGradients {
    std::vector<GaussianParams> gaussians;
    PoseParams pose;

    static ParamGradients zeros(std::size_t n);
    ParamGradients &operator+=(const ParamGradients &o);
    ParamGradients scaled(double factor) const;
    bool all_finite() const;
    double max_abs_difference(const ParamGradients &o) const;
};

/// ⟨upstream, output⟩ summed over all channels present in upstream.
double inner_product(const RenderOutput &out, const Cotangents &upstream);

/// Reverse-mode gradients of ⟨upstream, output⟩ with the depth ordering and
/// the contributor sets held fixed. Pose gradients refer to request().view.
ParamGradients backward(const Rasterizer &forward, const Cotangents &upstream);

struct RenderWithGradients {
    RenderOutput output;
    ParamGradients gradients;
};

RenderWithGradients render_with_gradients(const GaussianCloud &cloud, const RenderRequest &request,
                                          const Cotangents &upstream, const RasterSettings &settings = {});

enum class ParamFamily { center, motion, rotation, scale, color, opacity, pose_rotation, pose_translation };

inline constexpr ParamFamily kAllFamilies[] = {ParamFamily::center,        ParamFamily::motion,
                                               ParamFamily::rotation,      ParamFamily::scale,
                                               ParamFamily::color,         ParamFamily::opacity,
                                               ParamFamily::pose_rotation, ParamFamily::pose_translation};

std::string family_name(ParamFamily f);
bool is_pose_family(ParamFamily f);
/// Number of scalar components per Gaussian (or for the pose).
int family_size(ParamFamily f, int sh_degree);
double &family_component(GaussianParams &p, ParamFamily f, int component);
double &pose_component(PoseParams &p, ParamFamily f, int component);
double &pose_component(RelativePose &p, ParamFamily f, int component);

struct ParamSelector {
    ParamFamily family = ParamFamily::center;
    std::vector<int> gaussians; // empty selects all; ignored for pose families
};

/// Central differences of ⟨upstream, rasterize(...)⟩ for the selected raw
/// parameters. Only the forward rasterizer is used.
ParamGradients finite_difference_gradient(const GaussianCloud &cloud, const RenderRequest &request,
                                          const Cotangents &upstream, const ParamSelector &selector,
                                          double step, const RasterSettings &settings = {});

struct GradcheckConfig {
    std::uint64_t seed = 7;
    int gaussians = 10;
    int width = 16;
    int height = 16;
    int sh_degree = 1;
    double dt = 0.5;
    double step = 1e-4;
    double tolerance = 1e-3;
    double abs_floor = 1e-6; // denominator floor for the relative error
    int max_step_refinements = 2; // retry a structure-changing probe at step/10, step/100
    int threads = 1;
    bool corrupt_opacity_sign = false; // fault injection for testing the checker
};

struct FamilyReport {
    ParamFamily family;
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    int checked = 0;
    int skipped = 0; // perturbation changed the contributor structure
    int worst_gaussian = -1;
    int worst_component = -1;
    bool passed = true;
};

struct GradcheckReport {
    std::vector<FamilyReport> families;
    bool passed = true;
    double seconds = 0.0;

    std::string to_text() const;
};

/// A seeded random scene used by gradcheck and the tests.
struct RandomScene {
    GaussianCloud cloud;
    RenderRequest request;
    Cotangents upstream;
};

RandomScene make_random_scene(std::uint64_t seed, int gaussians, int width, int height, int sh_degree,
                              double dt);

GradcheckReport gradcheck(const GradcheckConfig &config);

} // namespace dyn4d
