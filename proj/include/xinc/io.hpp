#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xinc/canvas.hpp"
#include "xinc/tensor.hpp"

namespace xinc {

using TextChunks = std::map<std::string, std::string>;

// PNG

/// Any 8/16-bit PNG decoded to [3 x H x W] in [0,1] (alpha dropped, grey expanded).
Tensor read_png_rgb(const std::filesystem::path& path);
/// Values clamped to [0,1] and quantised to 8 bits.
void write_png_rgb(const std::filesystem::path& path, const Tensor& frame, const TextChunks& text = {});

struct MaskFrame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> ids;  // row-major
};

/// 8- or 16-bit greyscale PNG holding raw ids.
MaskFrame read_png_mask(const std::filesystem::path& path);
void write_png_mask(const std::filesystem::path& path, const MaskFrame& mask, const TextChunks& text = {});
TextChunks read_png_text(const std::filesystem::path& path);

/// 8-bit quantisation used on export: round(clamp(v, 0, 1) * 255).
std::uint8_t quantize8(float v);

// Frame sets

struct FrameSet {
  std::vector<Tensor> frames;
  std::vector<std::filesystem::path> paths;
  std::vector<std::optional<MaskFrame>> masks;  // aligned with frames by file name
  double fps = 0.0;

  std::size_t height() const { return frames.empty() ? 0 : frames[0].dim(1); }
  std::size_t width() const { return frames.empty() ? 0 : frames[0].dim(2); }
  std::size_t labeled() const;
};

/// Regular files in `dir` whose names match the glob `pattern`, in lexicographic order.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& pattern);
FrameSet load_frames(const std::filesystem::path& dir, const std::string& pattern = "*.png");
/// Fills `set.masks` from files in `dir` that share a frame's file name.
void load_masks(FrameSet& set, const std::filesystem::path& dir);

/// Bilinear resize so the frame covers the target, then a centred crop.
Tensor normalize_geometry(const Tensor& frame, std::size_t height, std::size_t width);
/// Same geometry for id masks, with nearest-neighbour sampling.
MaskFrame normalize_geometry(const MaskFrame& mask, std::size_t height, std::size_t width);
/// Applies normalize_geometry to every frame and mask of the set.
void normalize_frames(FrameSet& set, std::size_t height, std::size_t width);

// Canvas container:
//   8 bytes   magic "XINCCNVS"
//   8 bytes   little-endian u64, length of the JSON index
//   index     UTF-8 JSON
//   payload   little-endian f32 maps, layer after layer

inline constexpr int kCanvasVersion = 1;

void save_canvas(const std::filesystem::path& path, const NeuralCanvas& canvas, const nlohmann::json& extra = {});
NeuralCanvas load_canvas(const std::filesystem::path& path);
nlohmann::json read_canvas_index(const std::filesystem::path& path);

// Rasters and metrics

/// Little-endian f32 values plus a `<path>.json` sidecar with the shape.
void write_raster(const std::filesystem::path& path, const Tensor& raster, const nlohmann::json& meta = {});
Tensor read_raster(const std::filesystem::path& path);
/// Middlebury .flo optical flow as [2 x H x W] (u, v).
Tensor read_flo(const std::filesystem::path& path);
void write_flo(const std::filesystem::path& path, const Tensor& flow);

/// Shortest round-trippable decimal for a double; "nan" and "inf" spelled out.
std::string format_number(double v);

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header, std::string config_hash = {});
  CsvWriter& row(const std::vector<std::string>& cells);
  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::size_t columns_;
  std::string text_;
};

void write_json(const std::filesystem::path& path, const nlohmann::json& value);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace xinc
