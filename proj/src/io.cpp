#include "xinc/io.hpp"

#include <fnmatch.h>
#include <png.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "detail/files.hpp"
#include "xinc/errors.hpp"
#include "xinc/hash.hpp"

namespace xinc {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngImage {
  std::size_t width = 0;
  std::size_t height = 0;
  int channels = 0;        // after expansion: 1 (grey) or 3 (rgb)
  int bit_depth = 8;       // 8 or 16
  std::vector<std::uint8_t> bytes;  // rows, 16-bit samples big-endian
  TextChunks text;
};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

/// Decodes to 8/16-bit grey or RGB without alpha. Returns an error message on failure.
std::string decode_png(std::FILE* file, bool want_rgb, PngImage& img) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return "cannot allocate decoder";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return "cannot allocate decoder";
  }
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return "corrupt or truncated PNG";
  }
  png_init_io(png, file);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (want_rgb) {
    png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  img.bytes.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.bytes.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, info);
  png_textp text = nullptr;
  int n_text = 0;
  png_get_text(png, info, &text, &n_text);
  for (int i = 0; i < n_text; ++i) img.text[text[i].key] = text[i].text ? text[i].text : "";
  png_destroy_read_struct(&png, &info, nullptr);
  return {};
}

PngImage load_png(const fs::path& path, bool want_rgb) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  std::uint8_t sig[8] = {};
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }
  std::rewind(file.get());
  PngImage img;
  const std::string err = decode_png(file.get(), want_rgb, img);
  if (!err.empty()) throw IoError(path.string() + ": " + err);
  return img;
}

std::string encode_png(std::FILE* file, std::size_t width, std::size_t height, int color_type, int bit_depth,
                       png_bytepp rows, png_textp text, int n_text) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return "cannot allocate encoder";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return "cannot allocate encoder";
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return "encoding failed";
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (n_text > 0) png_set_text(png, info, text, n_text);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return {};
}

void save_png(const fs::path& path, std::size_t width, std::size_t height, int color_type, int bit_depth,
              std::vector<std::uint8_t>& bytes, const TextChunks& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write " + path.string());
  const std::size_t rowbytes = bytes.size() / std::max<std::size_t>(height, 1);
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = bytes.data() + y * rowbytes;
  std::vector<png_text> chunks;
  for (const auto& [key, value] : text) {
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = const_cast<char*>(key.c_str());
    t.text = const_cast<char*>(value.c_str());
    chunks.push_back(t);
  }
  const std::string err = encode_png(file.get(), width, height, color_type, bit_depth, rows.data(), chunks.data(),
                                     static_cast<int>(chunks.size()));
  if (!err.empty()) throw IoError(path.string() + ": " + err);
  if (std::fflush(file.get()) != 0) throw IoError("short write to " + path.string());
}

}  // namespace

std::uint8_t quantize8(float v) {
  const float c = std::clamp(std::isnan(v) ? 0.0f : v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Tensor read_png_rgb(const fs::path& path) {
  const PngImage img = load_png(path, true);
  const std::size_t n = img.width * img.height;
  Tensor frame({3, img.height, img.width});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) frame[c * n + p] = static_cast<float>(img.bytes[p * 3 + c]) / 255.0f;
  return frame;
}

void write_png_rgb(const fs::path& path, const Tensor& frame, const TextChunks& text) {
  if (frame.rank() != 3 || frame.dim(0) != 3) {
    throw DimensionError("write_png_rgb: expected [3 x H x W], got " + shape_string(frame.shape()));
  }
  const std::size_t h = frame.dim(1), w = frame.dim(2), n = h * w;
  std::vector<std::uint8_t> bytes(n * 3);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) bytes[p * 3 + c] = quantize8(frame[c * n + p]);
  save_png(path, w, h, PNG_COLOR_TYPE_RGB, 8, bytes, text);
}

MaskFrame read_png_mask(const fs::path& path) {
  const PngImage img = load_png(path, false);
  if (img.channels != 1) throw IoError(path.string() + ": masks must be single-channel greyscale PNGs");
  MaskFrame m{img.height, img.width, std::vector<std::uint32_t>(img.width * img.height)};
  for (std::size_t p = 0; p < m.ids.size(); ++p) {
    m.ids[p] = img.bit_depth == 16 ? (static_cast<std::uint32_t>(img.bytes[2 * p]) << 8) | img.bytes[2 * p + 1]
                                   : img.bytes[p];
  }
  return m;
}

void write_png_mask(const fs::path& path, const MaskFrame& mask, const TextChunks& text) {
  if (mask.ids.size() != mask.height * mask.width) throw DimensionError("write_png_mask: size mismatch");
  std::vector<std::uint8_t> bytes(mask.ids.size() * 2);
  for (std::size_t p = 0; p < mask.ids.size(); ++p) {
    if (mask.ids[p] > 0xffff) throw ArgumentError("mask id " + std::to_string(mask.ids[p]) + " exceeds 16 bits");
    bytes[2 * p] = static_cast<std::uint8_t>(mask.ids[p] >> 8);
    bytes[2 * p + 1] = static_cast<std::uint8_t>(mask.ids[p] & 0xff);
  }
  save_png(path, mask.width, mask.height, PNG_COLOR_TYPE_GRAY, 16, bytes, text);
}

TextChunks read_png_text(const fs::path& path) { return load_png(path, false).text; }

// ---------------------------------------------------------------------------
// Frame sets

std::size_t FrameSet::labeled() const {
  return static_cast<std::size_t>(std::count_if(masks.begin(), masks.end(), [](const auto& m) { return m.has_value(); }));
}

std::vector<fs::path> list_files(const fs::path& dir, const std::string& pattern) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (fnmatch(pattern.c_str(), entry.path().filename().c_str(), 0) == 0) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return files;
}

FrameSet load_frames(const fs::path& dir, const std::string& pattern) {
  FrameSet set;
  set.paths = list_files(dir, pattern);
  if (set.paths.empty()) throw IoError("no frames matching '" + pattern + "' in " + dir.string());
  for (const auto& p : set.paths) {
    Tensor f = read_png_rgb(p);
    if (!set.frames.empty() && f.shape() != set.frames[0].shape()) {
      throw DimensionError("frame " + p.string() + " is " + shape_string(f.shape()) + ", expected " +
                           shape_string(set.frames[0].shape()));
    }
    set.frames.push_back(std::move(f));
  }
  set.masks.assign(set.frames.size(), std::nullopt);
  return set;
}

void load_masks(FrameSet& set, const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  set.masks.assign(set.frames.size(), std::nullopt);
  for (std::size_t i = 0; i < set.paths.size(); ++i) {
    const fs::path candidate = dir / set.paths[i].filename();
    if (!fs::exists(candidate)) continue;
    MaskFrame m = read_png_mask(candidate);
    if (m.height != set.frames[i].dim(1) || m.width != set.frames[i].dim(2)) {
      throw DimensionError("mask " + candidate.string() + " is " + std::to_string(m.height) + "x" +
                           std::to_string(m.width) + ", its frame is " + shape_string(set.frames[i].shape()));
    }
    set.masks[i] = std::move(m);
  }
  if (set.labeled() == 0) throw IoError("no masks in " + dir.string() + " match the frame file names");
}

namespace {

struct CoverGeometry {
  std::size_t scaled_h, scaled_w, top, left;
  double scale;
};

CoverGeometry cover(std::size_t h, std::size_t w, std::size_t th, std::size_t tw) {
  if (th == 0 || tw == 0) throw ArgumentError("target size must be positive");
  if (h < th || w < tw) {
    throw ArgumentError("source " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than target " +
                        std::to_string(th) + "x" + std::to_string(tw));
  }
  const double scale = std::max(static_cast<double>(th) / static_cast<double>(h),
                                static_cast<double>(tw) / static_cast<double>(w));
  CoverGeometry g;
  g.scale = scale;
  g.scaled_h = std::max(th, static_cast<std::size_t>(std::lround(static_cast<double>(h) * scale)));
  g.scaled_w = std::max(tw, static_cast<std::size_t>(std::lround(static_cast<double>(w) * scale)));
  g.top = (g.scaled_h - th) / 2;
  g.left = (g.scaled_w - tw) / 2;
  return g;
}

/// Half-pixel-centre source coordinate of output index i.
double source_coord(std::size_t i, std::size_t in, std::size_t out) {
  const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  return std::clamp(s, 0.0, static_cast<double>(in - 1));
}

}  // namespace

Tensor normalize_geometry(const Tensor& frame, std::size_t height, std::size_t width) {
  if (frame.rank() != 3) throw DimensionError("normalize_geometry: expected [C x H x W], got " + shape_string(frame.shape()));
  const std::size_t c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  const CoverGeometry g = cover(h, w, height, width);
  if (h == height && w == width) return frame;
  Tensor out({c, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = source_coord(y + g.top, h, g.scaled_h);
    const std::size_t y0 = static_cast<std::size_t>(sy), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = source_coord(x + g.left, w, g.scaled_w);
      const std::size_t x0 = static_cast<std::size_t>(sx), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float* src = frame.ptr() + ch * h * w;
        const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
        const double bottom = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
        out[(ch * height + y) * width + x] = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

MaskFrame normalize_geometry(const MaskFrame& mask, std::size_t height, std::size_t width) {
  const CoverGeometry g = cover(mask.height, mask.width, height, width);
  if (mask.height == height && mask.width == width) return mask;
  MaskFrame out{height, width, std::vector<std::uint32_t>(height * width)};
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = static_cast<std::size_t>(std::lround(source_coord(y + g.top, mask.height, g.scaled_h)));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = static_cast<std::size_t>(std::lround(source_coord(x + g.left, mask.width, g.scaled_w)));
      out.ids[y * width + x] = mask.ids[sy * mask.width + sx];
    }
  }
  return out;
}

void normalize_frames(FrameSet& set, std::size_t height, std::size_t width) {
  for (auto& f : set.frames) f = normalize_geometry(f, height, width);
  for (auto& m : set.masks)
    if (m) *m = normalize_geometry(*m, height, width);
}

// ---------------------------------------------------------------------------
// Canvas container

namespace {

constexpr char kCanvasMagic[8] = {'X', 'I', 'N', 'C', 'C', 'N', 'V', 'S'};

std::string payload_hash(const char* data, std::size_t size) {
  Fnv1a h;
  h.update(std::as_bytes(std::span(data, size)));
  return h.hex();
}

}  // namespace

void save_canvas(const fs::path& path, const NeuralCanvas& canvas, const nlohmann::json& extra) {
  nlohmann::json index;
  index["format"] = "xinc-canvas";
  index["version"] = kCanvasVersion;
  index["kind"] = canvas.kind;
  index["model_hash"] = canvas.model_hash;
  index["frame"] = canvas.frame_index;
  index["dtype"] = "f32le";
  std::size_t offset = 0;
  std::string payload;
  index["layers"] = nlohmann::json::array();
  for (const auto& l : canvas.layers) {
    const std::size_t bytes = l.maps.size() * sizeof(float);
    index["layers"].push_back({{"id", l.id},
                               {"neuron_count", l.count()},
                               {"height", l.count() ? l.height() : 0},
                               {"width", l.count() ? l.width() : 0},
                               {"in_channels", l.in_channels},
                               {"dtype", "f32le"},
                               {"offset", offset},
                               {"bytes", bytes}});
    payload.append(reinterpret_cast<const char*>(l.maps.ptr()), bytes);
    offset += bytes;
  }
  index["payload_bytes"] = payload.size();
  index["payload_hash"] = payload_hash(payload.data(), payload.size());
  if (!extra.is_null()) index["meta"] = extra;
  const std::string json = index.dump();
  const std::uint64_t len = json.size();
  std::string file(kCanvasMagic, 8);
  file.append(reinterpret_cast<const char*>(&len), 8);
  file += json;
  file += payload;
  detail::write_bytes(path, file.data(), file.size());
}

namespace {

std::pair<nlohmann::json, std::size_t> parse_canvas_header(const std::vector<char>& bytes, const fs::path& path) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCanvasMagic, 8) != 0) {
    throw IntegrityError(path.string() + " is not a canvas container");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  if (len > bytes.size() - 16) throw IntegrityError(path.string() + ": truncated index");
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(path.string() + ": unreadable index (" + e.what() + ")");
  }
  const int version = index.value("version", -1);
  if (version != kCanvasVersion) {
    throw IntegrityError(path.string() + ": canvas version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCanvasVersion) + ")");
  }
  return {std::move(index), 16 + static_cast<std::size_t>(len)};
}

}  // namespace

nlohmann::json read_canvas_index(const fs::path& path) { return parse_canvas_header(detail::read_bytes(path), path).first; }

NeuralCanvas load_canvas(const fs::path& path) {
  const std::vector<char> bytes = detail::read_bytes(path);
  const auto [index, start] = parse_canvas_header(bytes, path);
  const std::size_t payload_bytes = index.at("payload_bytes").get<std::size_t>();
  if (bytes.size() - start != payload_bytes) {
    throw IntegrityError(path.string() + ": payload is " + std::to_string(bytes.size() - start) + " bytes, index says " +
                         std::to_string(payload_bytes));
  }
  if (payload_hash(bytes.data() + start, payload_bytes) != index.at("payload_hash").get<std::string>()) {
    throw IntegrityError(path.string() + ": payload hash mismatch");
  }
  NeuralCanvas canvas;
  canvas.kind = index.at("kind").get<std::string>();
  canvas.model_hash = index.at("model_hash").get<std::string>();
  canvas.frame_index = index.at("frame").get<std::size_t>();
  for (const auto& l : index.at("layers")) {
    CanvasLayer layer;
    layer.id = l.at("id").get<std::string>();
    layer.in_channels = l.at("in_channels").get<std::size_t>();
    const std::size_t n = l.at("neuron_count"), h = l.at("height"), w = l.at("width");
    const std::size_t offset = l.at("offset"), size = l.at("bytes");
    if (size != n * h * w * sizeof(float) || offset + size > payload_bytes) {
      throw IntegrityError(path.string() + ": layer " + layer.id + " has an inconsistent extent");
    }
    layer.maps = Tensor({n, h, w});
    std::memcpy(layer.maps.ptr(), bytes.data() + start + offset, size);
    canvas.layers.push_back(std::move(layer));
  }
  return canvas;
}

// ---------------------------------------------------------------------------
// Rasters, flow, CSV, JSON

void write_raster(const fs::path& path, const Tensor& raster, const nlohmann::json& meta) {
  detail::write_bytes(path, raster.ptr(), raster.size() * sizeof(float));
  nlohmann::json side = meta.is_null() ? nlohmann::json::object() : meta;
  side["shape"] = raster.shape();
  side["dtype"] = "f32le";
  write_json(fs::path(path.string() + ".json"), side);
}

Tensor read_raster(const fs::path& path) {
  const nlohmann::json side = read_json(fs::path(path.string() + ".json"));
  const Shape shape = side.at("shape").get<Shape>();
  const std::vector<char> bytes = detail::read_bytes(path);
  Tensor t(shape);
  if (bytes.size() != t.size() * sizeof(float)) {
    throw IntegrityError(path.string() + ": " + std::to_string(bytes.size()) + " bytes for shape " + shape_string(shape));
  }
  std::memcpy(t.ptr(), bytes.data(), bytes.size());
  return t;
}

namespace {
constexpr float kFloMagic = 202021.25f;
}

Tensor read_flo(const fs::path& path) {
  const std::vector<char> bytes = detail::read_bytes(path);
  float magic = 0;
  std::int32_t w = 0, h = 0;
  if (bytes.size() < 12) throw IntegrityError(path.string() + ": truncated flow file");
  std::memcpy(&magic, bytes.data(), 4);
  std::memcpy(&w, bytes.data() + 4, 4);
  std::memcpy(&h, bytes.data() + 8, 4);
  if (magic != kFloMagic) throw IntegrityError(path.string() + " is not a .flo file");
  if (w <= 0 || h <= 0) throw IntegrityError(path.string() + ": bad flow dimensions");
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() != 12 + n * 8) throw IntegrityError(path.string() + ": flow payload size mismatch");
  Tensor flow({2, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t p = 0; p < n; ++p) {
    std::memcpy(&flow[p], bytes.data() + 12 + p * 8, 4);
    std::memcpy(&flow[n + p], bytes.data() + 12 + p * 8 + 4, 4);
  }
  return flow;
}

void write_flo(const fs::path& path, const Tensor& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2) throw DimensionError("flow must be [2 x H x W]");
  const std::size_t h = flow.dim(1), w = flow.dim(2), n = h * w;
  std::vector<char> bytes(12 + n * 8);
  const std::int32_t wi = static_cast<std::int32_t>(w), hi = static_cast<std::int32_t>(h);
  std::memcpy(bytes.data(), &kFloMagic, 4);
  std::memcpy(bytes.data() + 4, &wi, 4);
  std::memcpy(bytes.data() + 8, &hi, 4);
  for (std::size_t p = 0; p < n; ++p) {
    std::memcpy(bytes.data() + 12 + p * 8, &flow[p], 4);
    std::memcpy(bytes.data() + 12 + p * 8 + 4, &flow[n + p], 4);
  }
  detail::write_bytes(path, bytes.data(), bytes.size());
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::vector<std::string> header, std::string config_hash) : columns_(header.size()) {
  if (!config_hash.empty()) text_ += "# config_hash=" + config_hash + "\n";
  row(header);
}

CsvWriter& CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) {
    throw ArgumentError("csv row has " + std::to_string(cells.size()) + " cells, header has " + std::to_string(columns_));
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) text_ += ',';
    text_ += cells[i];
  }
  text_ += '\n';
  return *this;
}

std::string CsvWriter::str() const { return text_; }

void CsvWriter::save(const fs::path& path) const { detail::write_text(path, text_); }

void write_json(const fs::path& path, const nlohmann::json& value) { detail::write_text(path, value.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace xinc
