#pragma once

#include "cforge/gaussian_cloud.hpp"

#include <filesystem>
#include <iosfwd>

namespace cforge {

/// Binary little-endian PLY in the usual splat layout: x y z, f_dc_0..2,
/// opacity, scale_0..2, rot_0..3 (all float32). Readers of that layout see
/// log scales, opacity logits and DC color coefficients.
void write_ply(std::ostream& out, const GaussianCloud& cloud);
void write_ply(const std::filesystem::path& path, const GaussianCloud& cloud);

/// Accepts any float32 vertex layout that carries the required properties;
/// extra properties (normals, f_rest_*) are skipped.
GaussianCloud read_ply(std::istream& in);
GaussianCloud read_ply(const std::filesystem::path& path);

}  // namespace cforge
