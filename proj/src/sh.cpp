#include "dyn4d/sh.hpp"

namespace dyn4d {

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                           0.5462742152960396};

} // namespace

std::array<double, kMaxShCoeffs> sh_basis(int degree, const Vec3 &dir) {
    std::array<double, kMaxShCoeffs> b{};
    const double x = dir.x(), y = dir.y(), z = dir.z();
    b[0] = kShC0;
    if (degree >= 1) {
        b[1] = -kC1 * y;
        b[2] = kC1 * z;
        b[3] = -kC1 * x;
    }
    if (degree >= 2) {
        b[4] = kC2[0] * x * y;
        b[5] = kC2[1] * y * z;
        b[6] = kC2[2] * (2 * z * z - x * x - y * y);
        b[7] = kC2[3] * x * z;
        b[8] = kC2[4] * (x * x - y * y);
    }
    return b;
}

Vec3 sh_to_color(int degree, const std::array<Vec3, kMaxShCoeffs> &sh, const Vec3 &dir,
                 std::array<bool, 3> *clamped) {
    const auto b = sh_basis(degree, dir);
    Vec3 c = Vec3::Constant(0.5);
    for (int k = 0; k < sh_coeff_count(degree); ++k) {
        c += b[k] * sh[k];
    }
    for (int ch = 0; ch < 3; ++ch) {
        const bool clip = c[ch] < 0.0;
        if (clamped) {
            (*clamped)[ch] = clip;
        }
        if (clip) {
            c[ch] = 0.0;
        }
    }
    return c;
}

Vec3 sh_to_color_backward(int degree, const std::array<Vec3, kMaxShCoeffs> &sh, const Vec3 &dir,
                          const Vec3 &d_color, std::array<Vec3, kMaxShCoeffs> &d_sh) {
    std::array<bool, 3> clamped{};
    sh_to_color(degree, sh, dir, &clamped);
    Vec3 dc = d_color;
    for (int ch = 0; ch < 3; ++ch) {
        if (clamped[ch]) {
            dc[ch] = 0.0;
        }
    }
    const auto b = sh_basis(degree, dir);
    const int n = sh_coeff_count(degree);
    for (int k = 0; k < n; ++k) {
        d_sh[k] += b[k] * dc;
    }
    Vec3 d_dir = Vec3::Zero();
    if (degree < 1) {
        return d_dir;
    }
    const double x = dir.x(), y = dir.y(), z = dir.z();
    // Per-coefficient scalar weights: g_k = <sh[k], dc>.
    std::array<double, kMaxShCoeffs> g{};
    for (int k = 0; k < n; ++k) {
        g[k] = sh[k].dot(dc);
    }
    d_dir.x() += -kC1 * g[3];
    d_dir.y() += -kC1 * g[1];
    d_dir.z() += kC1 * g[2];
    if (degree >= 2) {
        d_dir.x() += kC2[0] * y * g[4] + kC2[2] * (-2 * x) * g[6] + kC2[3] * z * g[7] + kC2[4] * 2 * x * g[8];
        d_dir.y() += kC2[0] * x * g[4] + kC2[1] * z * g[5] + kC2[2] * (-2 * y) * g[6] + kC2[4] * (-2 * y) * g[8];
        d_dir.z() += kC2[1] * y * g[5] + kC2[2] * 4 * z * g[6] + kC2[3] * x * g[7];
    }
    return d_dir;
}

} // namespace dyn4d
