#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "xinc/tensor.hpp"

namespace xinc {

using Rgb8 = std::array<std::uint8_t, 3>;

/// Viridis lookup; t is clamped to [0,1] and mapped to the nearest of 256 entries.
Rgb8 viridis(double t);

struct HeatmapRange {
  double lo = 0.0;
  double hi = 0.0;  // lo == hi selects the raster's own min and max
};

/// [H x W] raster -> [3 x H x W] colour image in [0,1].
Tensor heatmap(const Tensor& raster, HeatmapRange range = {});

/// Tiles equally sized [3 x H x W] images row-major into `columns` columns.
Tensor tile_grid(const std::vector<Tensor>& images, std::size_t columns, std::size_t gap = 2, float background = 1.0f);

/// |flow| per pixel, [H x W].
Tensor flow_magnitude(const Tensor& flow);
/// Draws flow vectors sampled every `step` pixels as line segments on `base`.
Tensor overlay_flow(const Tensor& base, const Tensor& flow, std::size_t step = 8, float scale = 1.0f);

}  // namespace xinc
