#pragma once

#include <array>

#include "dyn4d/core.hpp"

namespace dyn4d {

inline constexpr double kShC0 = 0.28209479177387814;

/// Real SH basis values for a unit direction, up to degree 2.
std::array<double, kMaxShCoeffs> sh_basis(int degree, const Vec3 &dir);

/// Color = sum_k basis_k * sh[k] + 0.5, clamped below at 0 per channel.
/// `clamped[c]` reports whether channel c hit the clamp.
Vec3 sh_to_color(int degree, const std::array<Vec3, kMaxShCoeffs> &sh, const Vec3 &dir,
                 std::array<bool, 3> *clamped = nullptr);

/// Backward of sh_to_color given dL/dcolor. Accumulates into d_sh and returns
/// dL/ddir (unit-direction gradient, before normalization).
Vec3 sh_to_color_backward(int degree, const std::array<Vec3, kMaxShCoeffs> &sh, const Vec3 &dir,
                          const Vec3 &d_color, std::array<Vec3, kMaxShCoeffs> &d_sh);

/// DC coefficient reproducing an RGB color (inverse of the degree-0 path).
inline Vec3 rgb_to_sh_dc(const Vec3 &rgb) { return (rgb.array() - 0.5) / kShC0; }

} // namespace dyn4d
