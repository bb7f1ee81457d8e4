#pragma once

#include <array>
#include <span>
#include <vector>

#include "prepline/mesh.hpp"

namespace prepline::detail {

/// Points closer than this fraction of the bounding-box diagonal to a hull
/// plane are treated as lying on it.
inline constexpr double kHullTolerance = 1e-6;

/// Outward-oriented triangles of the convex hull (quickhull).
std::vector<std::array<int, 3>> convex_hull(std::span<const Vec3> points);

}  // namespace prepline::detail
