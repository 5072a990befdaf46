#include "xinc/render.hpp"

#include <algorithm>
#include <cmath>

#include "xinc/errors.hpp"

namespace xinc {

namespace {

constexpr Rgb8 kViridis[256] = {
#include "colormap_viridis.inc"
};

void check_rgb(const Tensor& t, const char* what) {
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw DimensionError(std::string(what) + ": expected [3 x H x W], got " + shape_string(t.shape()));
  }
}

}  // namespace

Rgb8 viridis(double t) {
  if (std::isnan(t)) t = 0.0;
  const long i = std::lround(std::clamp(t, 0.0, 1.0) * 255.0);
  return kViridis[i];
}

Tensor heatmap(const Tensor& raster, HeatmapRange range) {
  if (raster.rank() != 2) throw DimensionError("heatmap: expected [H x W], got " + shape_string(raster.shape()));
  if (range.lo == range.hi && !raster.empty()) {
    const auto [lo, hi] = std::minmax_element(raster.values().begin(), raster.values().end());
    range = {*lo, *hi};
  }
  const std::size_t h = raster.dim(0), w = raster.dim(1), n = h * w;
  const double span = range.hi - range.lo;
  Tensor out({3, h, w});
  for (std::size_t p = 0; p < n; ++p) {
    const Rgb8 c = viridis(span > 0 ? (raster[p] - range.lo) / span : 0.0);
    for (std::size_t ch = 0; ch < 3; ++ch) out[ch * n + p] = static_cast<float>(c[ch]) / 255.0f;
  }
  return out;
}

Tensor tile_grid(const std::vector<Tensor>& images, std::size_t columns, std::size_t gap, float background) {
  if (images.empty()) throw ArgumentError("tile_grid: no images");
  if (columns == 0) throw ArgumentError("tile_grid: columns must be >= 1");
  for (const auto& im : images) {
    check_rgb(im, "tile_grid");
    if (im.shape() != images[0].shape()) throw DimensionError("tile_grid: images differ in size");
  }
  const std::size_t h = images[0].dim(1), w = images[0].dim(2);
  const std::size_t cols = std::min(columns, images.size());
  const std::size_t rows = (images.size() + cols - 1) / cols;
  const std::size_t H = rows * h + (rows - 1) * gap, W = cols * w + (cols - 1) * gap;
  Tensor out({3, H, W});
  out.fill(background);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::size_t oy = (i / cols) * (h + gap), ox = (i % cols) * (w + gap);
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(images[i].ptr() + (ch * h + y) * w, w, out.ptr() + (ch * H + oy + y) * W + ox);
  }
  return out;
}

Tensor flow_magnitude(const Tensor& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2) throw DimensionError("flow must be [2 x H x W], got " + shape_string(flow.shape()));
  const std::size_t h = flow.dim(1), w = flow.dim(2), n = h * w;
  Tensor mag({h, w});
  for (std::size_t p = 0; p < n; ++p) mag[p] = std::hypot(flow[p], flow[n + p]);
  return mag;
}

Tensor overlay_flow(const Tensor& base, const Tensor& flow, std::size_t step, float scale) {
  check_rgb(base, "overlay_flow");
  if (flow.rank() != 3 || flow.dim(0) != 2 || flow.dim(1) != base.dim(1) || flow.dim(2) != base.dim(2)) {
    throw DimensionError("overlay_flow: flow " + shape_string(flow.shape()) + " does not match image " +
                         shape_string(base.shape()));
  }
  if (step == 0) throw ArgumentError("overlay_flow: step must be >= 1");
  const std::size_t h = base.dim(1), w = base.dim(2), n = h * w;
  Tensor out = base;
  auto plot = [&](long x, long y, float r, float g, float b) {
    if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return;
    const std::size_t p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
    out[p] = r;
    out[n + p] = g;
    out[2 * n + p] = b;
  };
  for (std::size_t y = step / 2; y < h; y += step)
    for (std::size_t x = step / 2; x < w; x += step) {
      const std::size_t p = y * w + x;
      long x0 = static_cast<long>(x), y0 = static_cast<long>(y);
      const long x1 = std::lround(static_cast<double>(x) + scale * flow[p]);
      const long y1 = std::lround(static_cast<double>(y) + scale * flow[n + p]);
      const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
      const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
      long err = dx + dy;
      while (true) {
        plot(x0, y0, 1.0f, 1.0f, 1.0f);
        if (x0 == x1 && y0 == y1) break;
        const long e2 = 2 * err;
        if (e2 >= dy) {
          err += dy;
          x0 += sx;
        }
        if (e2 <= dx) {
          err += dx;
          y0 += sy;
        }
      }
      plot(x1, y1, 1.0f, 0.2f, 0.2f);
    }
  return out;
}

}  // namespace xinc
