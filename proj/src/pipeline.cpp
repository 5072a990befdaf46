#include "xinc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "xinc/analysis.hpp"
#include "xinc/dissect.hpp"
#include "xinc/hash.hpp"
#include "xinc/io.hpp"
#include "xinc/render.hpp"

namespace xinc {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

TrainConfig RunConfig::train_config() const {
  TrainConfig t = model == "nerv" ? nerv_train_defaults() : ffn_train_defaults();
  t.epochs = epochs;
  if (lr) t.lr = *lr;
  t.warmup_fraction = warmup_fraction;
  t.seed = seed;
  t.pixel_batch = pixel_batch;
  return t;
}

fs::path RunConfig::checkpoint_dir() const { return checkpoint.empty() ? fs::path(out) / "model" : fs::path(checkpoint); }

fs::path RunConfig::canvas_dir() const { return canvas.empty() ? fs::path(out) / "canvas" : fs::path(canvas); }

json RunConfig::to_json() const {
  const TrainConfig t = train_config();
  json j;
  j["model"] = model;
  j["seed"] = seed;
  j["frames"] = frames;
  j["frame_pattern"] = frame_pattern;
  j["masks"] = masks;
  j["height"] = height;
  j["width"] = width;
  j["frame_index"] = frame_index;
  j["train"] = {{"epochs", t.epochs},           {"lr", t.lr},       {"warmup_fraction", t.warmup_fraction},
                {"pixel_batch", t.pixel_batch}, {"beta1", t.beta1}, {"beta2", t.beta2},
                {"eps", t.eps},                 {"f64", f64}};
  j["ffn"] = describe(ffn);
  j["nerv"] = describe(nerv);
  j["layers"] = layers;
  j["analysis"] = {{"which", analysis.which},
                   {"k_rgb", analysis.k_rgb},
                   {"k_gabor", analysis.k_gabor},
                   {"grid", {analysis.grid_y, analysis.grid_x}},
                   {"percentiles", analysis.percentiles},
                   {"neuron_clusters", analysis.neuron_clusters},
                   {"curve_length", analysis.curve_length},
                   {"instance_neurons", analysis.instance_neurons}};
  j["outputs"] = {{"out", out}, {"checkpoint", checkpoint_dir().string()}, {"canvas", canvas_dir().string()}};
  return j;
}

std::string RunConfig::hash() const {
  json j = to_json();
  j.erase("outputs");
  return hash_text(j.dump());
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + what);
  }
}

template <typename V>
void read(const json& j, const char* key, V& into, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

const std::set<std::string> kAnalyses{"variance", "density", "intensity", "instances", "temporal", "embed"};

}  // namespace

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j,
                 {"model", "seed", "frames", "frame_pattern", "masks", "out", "checkpoint", "canvas", "height", "width",
                  "frame_index", "train", "ffn", "nerv", "layers", "analysis"},
                 "run config");
  RunConfig c;
  read(j, "model", c.model, "config");
  read(j, "seed", c.seed, "config");
  read(j, "frames", c.frames, "config");
  read(j, "frame_pattern", c.frame_pattern, "config");
  read(j, "masks", c.masks, "config");
  read(j, "out", c.out, "config");
  read(j, "checkpoint", c.checkpoint, "config");
  read(j, "canvas", c.canvas, "config");
  read(j, "height", c.height, "config");
  read(j, "width", c.width, "config");
  read(j, "frame_index", c.frame_index, "config");
  read(j, "layers", c.layers, "config");
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, {"epochs", "lr", "warmup_fraction", "pixel_batch", "f64"}, "train");
    read(t, "epochs", c.epochs, "train");
    if (t.contains("lr")) {
      double lr = 0;
      read(t, "lr", lr, "train");
      c.lr = lr;
    }
    read(t, "warmup_fraction", c.warmup_fraction, "train");
    read(t, "pixel_batch", c.pixel_batch, "train");
    read(t, "f64", c.f64, "train");
  }
  if (j.contains("ffn")) c.ffn = ffn_config_from_json(j["ffn"]);
  if (j.contains("nerv")) c.nerv = nerv_config_from_json(j["nerv"]);
  if (j.contains("analysis")) {
    const json& a = j["analysis"];
    reject_unknown(a,
                   {"which", "k_rgb", "k_gabor", "grid", "percentiles", "neuron_clusters", "curve_length",
                    "instance_neurons"},
                   "analysis");
    read(a, "which", c.analysis.which, "analysis");
    read(a, "k_rgb", c.analysis.k_rgb, "analysis");
    read(a, "k_gabor", c.analysis.k_gabor, "analysis");
    if (a.contains("grid")) {
      std::vector<std::size_t> g;
      read(a, "grid", g, "analysis");
      if (g.size() != 2) throw ConfigError("analysis.grid must be [rows, columns]");
      c.analysis.grid_y = g[0];
      c.analysis.grid_x = g[1];
    }
    read(a, "percentiles", c.analysis.percentiles, "analysis");
    read(a, "neuron_clusters", c.analysis.neuron_clusters, "analysis");
    read(a, "curve_length", c.analysis.curve_length, "analysis");
    read(a, "instance_neurons", c.analysis.instance_neurons, "analysis");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_json(path)); }

void validate(const RunConfig& c, Stage stage) {
  if (c.model != "ffn" && c.model != "nerv") throw ConfigError("model must be 'ffn' or 'nerv', got '" + c.model + "'");
  if (c.height == 0 || c.width == 0) throw ConfigError("frame size must be positive");
  c.train_config().validate();
  const auto need_dir = [](const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string(what) + " directory is required");
    std::error_code ec;
    if (!fs::is_directory(path, ec)) throw ConfigError(std::string(what) + " directory does not exist: " + path);
  };
  if (stage == Stage::train) {
    need_dir(c.frames, "frames");
    if (c.model == "nerv") {
      NervConfig n = c.nerv;
      n.height = c.height;
      n.width = c.width;
      std::size_t scale = 1;
      for (int s : n.strides) {
        if (s < 1) throw ConfigError("nerv strides must be positive");
        scale *= static_cast<std::size_t>(s);
      }
      if (c.height % scale || c.width % scale) {
        throw ConfigError("frame size " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                          " is not divisible by the total stride " + std::to_string(scale));
      }
    }
  }
  if (stage == Stage::dissect) {
    std::error_code ec;
    if (!fs::exists(c.checkpoint_dir() / "manifest.json", ec)) {
      throw ConfigError("no checkpoint at " + c.checkpoint_dir().string());
    }
  }
  if (stage == Stage::analyze) {
    std::error_code ec;
    if (!fs::is_directory(c.canvas_dir(), ec)) throw ConfigError("canvas directory does not exist: " + c.canvas_dir().string());
    need_dir(c.frames, "frames");
    if (!c.masks.empty()) need_dir(c.masks, "masks");
    for (const auto& w : c.analysis.which) {
      if (!kAnalyses.count(w)) throw ConfigError("unknown analysis '" + w + "'");
    }
    if (c.analysis.k_rgb < 2 || c.analysis.k_gabor < 2) throw ConfigError("pixel cluster counts must be >= 2");
    if (c.analysis.grid_y == 0 || c.analysis.grid_x == 0 || c.height % c.analysis.grid_y || c.width % c.analysis.grid_x) {
      throw ConfigError("grid " + std::to_string(c.analysis.grid_y) + "x" + std::to_string(c.analysis.grid_x) +
                        " does not divide " + std::to_string(c.height) + "x" + std::to_string(c.width));
    }
    for (double x : c.analysis.percentiles) {
      if (!(x > 0 && x < 100)) throw ConfigError("percentiles must lie in (0, 100)");
    }
    if (c.analysis.neuron_clusters < 1) throw ConfigError("neuron_clusters must be >= 1");
    if (c.analysis.curve_length < 2) throw ConfigError("curve_length must be >= 2");
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ArgumentError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const UnsupportedKernelError*>(&e)) {
    return kExitConfig;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const IntegrityError*>(&e) ||
      dynamic_cast<const std::filesystem::filesystem_error*>(&e)) {
    return kExitIo;
  }
  return kExitFailure;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

std::string frame_tag(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04zu", index);
  return buf;
}

TextChunks hash_chunk(const std::string& hash) { return {{"xinc:config_hash", hash}}; }

FrameSet load_inputs(const RunConfig& c, bool with_masks) {
  FrameSet set = load_frames(c.frames, c.frame_pattern);
  if (with_masks && !c.masks.empty()) load_masks(set, c.masks);
  normalize_frames(set, c.height, c.width);
  return set;
}

template <typename Model>
json fit_summary(const FitReport& r, const RunConfig& c, std::size_t frame_count) {
  json psnrs = json::array();
  for (double p : r.final_psnr) psnrs.push_back(psnr_capped(p));
  double mean = 0.0;
  for (double p : r.final_psnr) mean += psnr_capped(p);
  mean /= static_cast<double>(std::max<std::size_t>(r.final_psnr.size(), 1));
  return {{"config_hash", c.hash()},   {"model", c.model},         {"seed", r.seed},
          {"model_hash", r.model_hash}, {"epochs", r.epoch_loss.size()}, {"frame_count", frame_count},
          {"final_psnr", psnrs},        {"mean_psnr", mean},       {"final_loss", r.epoch_loss.back()}};
}

void write_fit_outputs(const RunConfig& c, const FitReport& r, const json& summary) {
  const fs::path out(c.out);
  CsvWriter csv({"epoch", "loss", "lr"}, c.hash());
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    csv.row({std::to_string(e + 1), format_number(r.epoch_loss[e]), format_number(r.epoch_lr[e])});
  }
  csv.save(out / "fit.csv");
  write_json(out / "fit.json", summary);
  write_json(out / "timing.json", {{"wall_seconds", r.wall_seconds}});
}

ProgressFn progress_logger(std::ostream& log, std::size_t epochs) {
  const std::size_t every = std::max<std::size_t>(1, epochs / 20);
  return [&log, every, epochs](std::size_t epoch, double loss, double lr) {
    if (epoch % every == 0 || epoch == epochs) {
      log << "epoch " << epoch << "/" << epochs << "  loss " << loss << "  lr " << lr << "\n" << std::flush;
    }
  };
}

template <typename T>
void train_ffn(const RunConfig& c, const FrameSet& set, std::ostream& log) {
  if (c.frame_index >= set.frames.size()) {
    throw ConfigError("frame_index " + std::to_string(c.frame_index) + " but only " + std::to_string(set.frames.size()) +
                      " frames");
  }
  const TrainConfig tc = c.train_config();
  const std::vector<Tensor> frame{set.frames[c.frame_index]};
  auto result = train(build_ffn<T>(c.seed, c.ffn), std::span<const Tensor>(frame), tc, progress_logger(log, tc.epochs));
  const FfnModel<float> model = cast_model<float>(result.model);
  json summary = fit_summary<FfnModel<float>>(result.report, c, 1);
  summary["frame_index"] = c.frame_index;
  summary["frames"] = {set.paths[c.frame_index].filename().string()};
  save_checkpoint(c.checkpoint_dir(), model,
                  {{"config_hash", c.hash()}, {"frame_count", 1}, {"frame_index", c.frame_index},
                   {"height", c.height}, {"width", c.width}, {"fit", summary}});
  write_fit_outputs(c, result.report, summary);
  const Tensor recon = rows_to_frame(forward_ffn(model, pixel_grid<float>(c.height, c.width)), c.height, c.width);
  write_png_rgb(fs::path(c.out) / "recon" / (frame_tag(c.frame_index) + ".png"), recon, hash_chunk(c.hash()));
  log << "PSNR " << psnr_capped(result.report.final_psnr[0]) << " dB\n";
}

template <typename T>
void train_nerv(const RunConfig& c, const FrameSet& set, std::ostream& log) {
  NervConfig nc = c.nerv;
  nc.height = c.height;
  nc.width = c.width;
  const TrainConfig tc = c.train_config();
  NervModel<T> initial = build_nerv<T>(c.seed, nc);
  log << "nerv widths";
  for (auto w : initial.channels) log << " " << w;
  log << ", " << param_count(initial) << " parameters\n";
  auto result = train(std::move(initial), std::span<const Tensor>(set.frames), tc, progress_logger(log, tc.epochs));
  const NervModel<float> model = cast_model<float>(result.model);
  const std::size_t count = set.frames.size();
  json summary = fit_summary<NervModel<float>>(result.report, c, count);
  json names = json::array();
  for (const auto& p : set.paths) names.push_back(p.filename().string());
  summary["frames"] = names;
  save_checkpoint(c.checkpoint_dir(), model,
                  {{"config_hash", c.hash()}, {"frame_count", count}, {"height", c.height}, {"width", c.width},
                   {"fit", summary}});
  write_fit_outputs(c, result.report, summary);
  for (std::size_t t = 0; t < count; ++t) {
    write_png_rgb(fs::path(c.out) / "recon" / (frame_tag(t) + ".png"), forward_nerv(model, t, count), hash_chunk(c.hash()));
  }
  log << "mean PSNR " << summary["mean_psnr"].get<double>() << " dB\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// train

void cmd_train(const RunConfig& c, std::ostream& log) {
  validate(c, Stage::train);
  const FrameSet set = load_inputs(c, false);
  log << "loaded " << set.frames.size() << " frame(s) at " << c.height << "x" << c.width << ", config " << c.hash() << "\n";
  if (c.model == "ffn") {
    c.f64 ? train_ffn<double>(c, set, log) : train_ffn<float>(c, set, log);
  } else {
    c.f64 ? train_nerv<double>(c, set, log) : train_nerv<float>(c, set, log);
  }
}

// ---------------------------------------------------------------------------
// dissect

namespace {

bool wanted(const RunConfig& c, const std::string& id) {
  return c.layers.empty() || std::find(c.layers.begin(), c.layers.end(), id) != c.layers.end();
}

void check_layer_selection(const RunConfig& c, const std::vector<std::string>& available) {
  for (const auto& l : c.layers) {
    if (std::find(available.begin(), available.end(), l) == available.end()) {
      std::string list;
      for (const auto& a : available) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError("unknown layer '" + l + "' (available: " + list + ")");
    }
  }
}

}  // namespace

void cmd_dissect(const RunConfig& c, std::ostream& log) {
  validate(c, Stage::dissect);
  const fs::path dir = c.checkpoint_dir();
  const json training = read_manifest(dir).value("training", json::object());
  const json meta = {{"config_hash", c.hash()}};
  const fs::path out = c.canvas_dir();
  if (checkpoint_kind(dir) == "ffn") {
    const FfnModel<float> model = load_ffn(dir);
    std::vector<std::string> ids;
    for (std::size_t l = 1; l <= model.layers.size(); ++l) ids.push_back("layer" + std::to_string(l));
    check_layer_selection(c, ids);
    const std::size_t h = training.value("height", c.height), w = training.value("width", c.width);
    const std::size_t frame = training.value("frame_index", c.frame_index);
    NeuralCanvas canvas = canvas_ffn(model, h, w, frame);
    std::erase_if(canvas.layers, [&](const CanvasLayer& l) { return !wanted(c, l.id); });
    save_canvas(out / (frame_tag(frame) + ".xcv"), canvas, meta);
    log << "wrote canvas for frame " << frame << " (" << canvas.layers.size() << " layers)\n";
    return;
  }
  const NervModel<float> model = load_nerv(dir);
  std::vector<std::string> ids;
  for (std::size_t b = 1; b <= model.blocks.size(); ++b) ids.push_back("block" + std::to_string(b));
  ids.push_back("head");
  check_layer_selection(c, ids);
  const std::size_t count = training.value("frame_count", std::size_t{1});
  for (std::size_t t = 0; t < count; ++t) {
    NeuralCanvas canvas;
    canvas.kind = "nerv";
    canvas.model_hash = model_hash(model);
    canvas.frame_index = t;
    for (std::size_t b = 1; b <= model.blocks.size(); ++b) {
      if (wanted(c, "block" + std::to_string(b))) canvas.layers.push_back(block_contributions(model, b, t, count));
    }
    if (wanted(c, "head")) canvas.layers.push_back(head_contributions(model, t, count));
    save_canvas(out / (frame_tag(t) + ".xcv"), canvas, meta);
    log << "wrote canvas for frame " << t << "/" << count << "\n" << std::flush;
  }
}

// ---------------------------------------------------------------------------
// analyze

namespace {

struct AnalysisContext {
  const RunConfig& cfg;
  std::string hash;
  fs::path out;
  std::ostream& log;

  bool enabled(const char* name) const {
    return std::find(cfg.analysis.which.begin(), cfg.analysis.which.end(), name) != cfg.analysis.which.end();
  }

  void warn(const std::vector<std::string>& warnings, const std::string& where) const {
    for (const auto& w : warnings) log << "warning (" << where << "): " << w << "\n";
  }

  void save_map(const fs::path& stem, const Tensor& raster, HeatmapRange range = {}) const {
    write_raster(fs::path(stem.string() + ".f32"), raster, {{"config_hash", hash}});
    write_png_rgb(fs::path(stem.string() + ".png"), heatmap(raster, range), hash_chunk(hash));
  }
};

std::string percentile_tag(double x) {
  std::string s = format_number(x);
  std::replace(s.begin(), s.end(), '.', '_');
  return "p" + s;
}

json analyze_variance(const AnalysisContext& ctx, const NeuralCanvas& canvas,
                      const std::vector<std::pair<std::string, const PixelClustering*>>& clusterings,
                      const std::string& tag) {
  std::vector<std::string> header{"layer", "neuron"};
  for (const auto& [name, _] : clusterings) header.push_back(name);
  CsvWriter csv(header, ctx.hash);
  json summary = json::object();
  for (const auto& layer : canvas.layers) {
    std::vector<DeltaSpread> spreads;
    json entry = json::object();
    for (const auto& [name, clustering] : clusterings) {
      if (!clustering) {
        spreads.emplace_back();
        entry[name] = nullptr;
        continue;
      }
      spreads.push_back(layer_delta_variance(layer, *clustering));
      entry[name] = {{"median_std", spreads.back().median()}, {"dead", spreads.back().dead}, {"clusters", clustering->k}};
    }
    summary[layer.id] = entry;
    for (std::size_t j = 0; j < layer.count(); ++j) {
      std::vector<std::string> row{layer.id, std::to_string(j)};
      for (const auto& s : spreads) row.push_back(s.per_neuron.empty() ? "nan" : format_number(s.per_neuron[j]));
      csv.row(row);
    }
  }
  csv.save(ctx.out / "variance" / (tag + ".csv"));
  return summary;
}

json analyze_density(const AnalysisContext& ctx, const NeuralCanvas& canvas, const std::string& tag) {
  const auto& a = ctx.cfg.analysis;
  CsvWriter counts({"layer", "neuron", "pixels_above_share", "rank"}, ctx.hash);
  CsvWriter curve({"layer", "index", "sorted_count"}, ctx.hash);
  json summary = json::object();
  for (const auto& layer : canvas.layers) {
    const PixelShareCounts share = pixels_per_neuron(layer, a.curve_length);
    std::vector<std::size_t> rank(layer.count());
    {
      std::vector<std::size_t> order(layer.count());
      for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
      std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return share.counts[x] < share.counts[y]; });
      for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
    }
    for (std::size_t j = 0; j < layer.count(); ++j) {
      counts.row({layer.id, std::to_string(j), std::to_string(share.counts[j]), std::to_string(rank[j])});
    }
    for (std::size_t i = 0; i < share.curve.size(); ++i) {
      curve.row({layer.id, std::to_string(i), format_number(share.curve[i])});
    }
    const std::size_t pixels = layer.height() * layer.width();
    std::size_t sparse = 0;
    for (auto n : share.counts) sparse += static_cast<double>(n) < 0.01 * static_cast<double>(pixels);
    json entry = {{"neurons", layer.count()},
                  {"fraction_under_1pct_pixels", static_cast<double>(sparse) / static_cast<double>(layer.count())}};
    const std::vector<double> taus = contribution_mass_percentiles(layer, a.percentiles);
    json thresholds = json::object();
    for (std::size_t q = 0; q < a.percentiles.size(); ++q) {
      const Tensor density = neurons_per_pixel(layer, taus[q]);
      double mean = 0.0;
      for (float v : density.values()) mean += v;
      mean /= static_cast<double>(density.size());
      thresholds[percentile_tag(a.percentiles[q])] = {{"x", a.percentiles[q]}, {"tau", taus[q]}, {"mean_density", mean}};
      ctx.save_map(ctx.out / "density" / (tag + "_" + layer.id + "_" + percentile_tag(a.percentiles[q])), density,
                   {0.0, 100.0});
    }
    entry["thresholds"] = thresholds;
    summary[layer.id] = entry;
  }
  counts.save(ctx.out / "density" / (tag + "_counts.csv"));
  curve.save(ctx.out / "density" / (tag + "_curve.csv"));
  return summary;
}

json analyze_intensity(const AnalysisContext& ctx, const NeuralCanvas& canvas, const Tensor& frame,
                       const std::string& tag) {
  json summary = json::object();
  for (const auto& layer : canvas.layers) {
    const IntensityDelta d = intensity_delta(layer, frame);
    ctx.save_map(ctx.out / "intensity" / (tag + "_" + layer.id + "_sum"), d.sum);
    ctx.save_map(ctx.out / "intensity" / (tag + "_" + layer.id + "_delta"), d.delta, {-1.0, 1.0});
    double mad = 0.0;
    for (float v : d.delta.values()) mad += std::abs(v);
    mad /= static_cast<double>(d.delta.size());
    summary[layer.id] = {{"mean_abs_delta", mad},
                         {"sum_degenerate", d.sum_degenerate},
                         {"intensity_degenerate", d.intensity_degenerate}};
    if (d.sum_degenerate) ctx.log << "warning: " << tag << " " << layer.id << " contribution sum is constant\n";
  }
  return summary;
}

void analyze_instances(const AnalysisContext& ctx, const NeuralCanvas& canvas, const MaskFrame& mask, CsvWriter& csv) {
  for (const auto& layer : canvas.layers) {
    std::vector<std::size_t> neurons = ctx.cfg.analysis.instance_neurons;
    if (neurons.empty()) {
      neurons.resize(layer.count());
      for (std::size_t j = 0; j < neurons.size(); ++j) neurons[j] = j;
    }
    std::erase_if(neurons, [&](std::size_t j) { return j >= layer.count(); });
    const InstanceSeries s = instance_series({{canvas.frame_index, &layer, &mask.ids}}, neurons);
    for (std::size_t n = 0; n < neurons.size(); ++n)
      for (std::size_t i = 0; i < s.instance_ids.size(); ++i) {
        const double v = s.percent[n][0][i];
        csv.row({layer.id, std::to_string(neurons[n]), std::to_string(canvas.frame_index),
                 std::to_string(s.instance_ids[i]), format_number(v)});
      }
  }
}

json analyze_temporal(const AnalysisContext& ctx, const NeuralCanvas& current, const NeuralCanvas& previous,
                      CsvWriter& csv) {
  json summary = json::object();
  for (const auto& layer : current.layers) {
    const auto it = std::find_if(previous.layers.begin(), previous.layers.end(),
                                 [&](const CanvasLayer& l) { return l.id == layer.id; });
    if (it == previous.layers.end()) continue;
    const Tensor f = temporal_fluctuation(layer, *it);
    double total = 0.0;
    for (float v : f.values()) total += v;
    ctx.save_map(ctx.out / "temporal" / (frame_tag(current.frame_index) + "_" + layer.id), f);
    csv.row({layer.id, std::to_string(previous.frame_index), std::to_string(current.frame_index), format_number(total)});
    summary[layer.id] = total;
  }
  return summary;
}

json analyze_embeddings(const AnalysisContext& ctx, const NeuralCanvas& canvas, const PixelClustering& gabor,
                        const std::string& tag) {
  std::vector<std::string> header{"layer", "neuron"};
  for (std::size_t c = 0; c < gabor.k; ++c) header.push_back("mass_" + std::to_string(c));
  for (const char* h : {"total", "cluster", "x", "y"}) header.push_back(h);
  CsvWriter csv(header, ctx.hash);
  json summary = json::object();
  for (const auto& layer : canvas.layers) {
    const auto emb = neuron_embeddings(layer, gabor);
    std::size_t live = 0;
    for (const auto& e : emb) live += e.total() >= kDeadMass;
    if (live < ctx.cfg.analysis.neuron_clusters) {
      ctx.log << "warning: " << tag << " " << layer.id << " has " << live << " live neurons, fewer than "
              << ctx.cfg.analysis.neuron_clusters << " clusters; skipped\n";
      summary[layer.id] = nullptr;
      continue;
    }
    const NeuronClusters nc = cluster_neurons(emb, ctx.cfg.analysis.neuron_clusters, ctx.cfg.seed);
    ctx.warn(nc.warnings, tag + " " + layer.id);
    const auto xy = project_2d(emb);
    std::vector<std::size_t> sizes(nc.k, 0);
    for (std::size_t j = 0; j < emb.size(); ++j) {
      std::vector<std::string> row{layer.id, std::to_string(j)};
      for (double m : emb[j].mass) row.push_back(format_number(m));
      row.push_back(format_number(emb[j].total()));
      row.push_back(std::to_string(nc.labels[j]));
      row.push_back(format_number(xy[j][0]));
      row.push_back(format_number(xy[j][1]));
      csv.row(row);
      if (nc.labels[j] >= 0) ++sizes[static_cast<std::size_t>(nc.labels[j])];
    }
    summary[layer.id] = {{"clusters", nc.k}, {"sizes", sizes}};
  }
  csv.save(ctx.out / "embed" / (tag + ".csv"));
  return summary;
}

}  // namespace

void cmd_analyze(const RunConfig& c, std::ostream& log) {
  validate(c, Stage::analyze);
  const AnalysisContext ctx{c, c.hash(), fs::path(c.out) / "analysis", log};
  const FrameSet set = load_inputs(c, ctx.enabled("variance") || ctx.enabled("instances"));
  const std::vector<fs::path> canvases = list_files(c.canvas_dir(), "*.xcv");
  if (canvases.empty()) throw IoError("no canvas files in " + c.canvas_dir().string());

  json summary = {{"config_hash", ctx.hash}, {"frames", json::array()}};
  CsvWriter instances({"layer", "neuron", "frame", "instance_id", "percent"}, ctx.hash);
  CsvWriter temporal({"layer", "frame_from", "frame_to", "total_fluctuation"}, ctx.hash);
  bool any_instances = false, any_temporal = false;
  std::optional<NeuralCanvas> previous;

  for (const auto& path : canvases) {
    NeuralCanvas canvas = load_canvas(path);
    const std::size_t fi = canvas.frame_index;
    if (fi >= set.frames.size()) {
      throw ConfigError(path.string() + " refers to frame " + std::to_string(fi) + " but only " +
                        std::to_string(set.frames.size()) + " frames were loaded");
    }
    const Tensor& frame = set.frames[fi];
    const std::string tag = frame_tag(fi);
    const MaskFrame* mask = fi < set.masks.size() && set.masks[fi] ? &*set.masks[fi] : nullptr;
    json fs_entry = {{"frame", fi}, {"canvas", path.filename().string()}};
    log << "analyzing " << tag << "\n" << std::flush;

    std::optional<PixelClustering> gabor;
    if (ctx.enabled("variance") || ctx.enabled("embed")) {
      gabor = cluster_gabor(frame, c.analysis.k_gabor, c.seed);
      ctx.warn(gabor->warnings, tag + " gabor");
    }
    if (ctx.enabled("variance")) {
      const PixelClustering grid = gridcells(c.height, c.width, c.analysis.grid_y, c.analysis.grid_x);
      const PixelClustering rgb = cluster_rgb(frame, c.analysis.k_rgb, c.seed);
      ctx.warn(rgb.warnings, tag + " rgb");
      std::optional<PixelClustering> inst;
      if (mask) {
        inst = instance_clusters(mask->ids, mask->height, mask->width);
        if (inst->k < 2) {
          log << "warning: " << tag << " mask has a single id; instance variance skipped\n";
          inst.reset();
        }
      }
      fs_entry["variance"] = analyze_variance(
          ctx, canvas, {{"instances", inst ? &*inst : nullptr}, {"rgb", &rgb}, {"gabor", &*gabor}, {"gridcells", &grid}},
          tag);
    }
    if (ctx.enabled("density")) fs_entry["density"] = analyze_density(ctx, canvas, tag);
    if (ctx.enabled("intensity")) fs_entry["intensity"] = analyze_intensity(ctx, canvas, frame, tag);
    if (ctx.enabled("instances") && mask) {
      analyze_instances(ctx, canvas, *mask, instances);
      any_instances = true;
    }
    if (ctx.enabled("embed")) fs_entry["embed"] = analyze_embeddings(ctx, canvas, *gabor, tag);
    if (ctx.enabled("temporal")) {
      if (previous) {
        fs_entry["temporal"] = analyze_temporal(ctx, canvas, *previous, temporal);
        any_temporal = true;
      }
      previous = std::move(canvas);
    }
    summary["frames"].push_back(fs_entry);
  }
  if (ctx.enabled("instances")) {
    if (any_instances) {
      instances.save(ctx.out / "instances.csv");
    } else {
      log << "warning: no canvas frame has a mask; instance series skipped\n";
    }
  }
  if (ctx.enabled("temporal")) {
    if (any_temporal) {
      temporal.save(ctx.out / "temporal.csv");
    } else {
      log << "warning: temporal fluctuation needs at least two canvases\n";
    }
  }
  write_json(ctx.out / "summary.json", summary);
}

// ---------------------------------------------------------------------------
// render

void cmd_render(const RenderRequest& r, const std::string& config_hash, std::ostream& log) {
  if (r.output.empty()) throw ConfigError("render needs an output path");
  std::vector<Tensor> tiles;
  for (const auto& p : r.rasters) {
    if (p.extension() == ".png") {
      tiles.push_back(read_png_rgb(p));
      continue;
    }
    Tensor raster = read_raster(p);
    if (raster.rank() == 3 && raster.dim(0) == 1) raster.reshape({raster.dim(1), raster.dim(2)});
    tiles.push_back(heatmap(raster, {r.lo, r.hi}));
  }
  if (!r.flow.empty()) {
    const Tensor flow = read_flo(r.flow);
    if (!r.base.empty()) {
      tiles.push_back(overlay_flow(read_png_rgb(r.base), flow, r.flow_step));
    }
    tiles.push_back(heatmap(flow_magnitude(flow)));
  }
  if (tiles.empty()) throw ConfigError("render needs at least one raster or a flow file");
  for (std::size_t i = 1; i < tiles.size(); ++i) {
    if (tiles[i].shape() != tiles[0].shape()) {
      throw DimensionError("render inputs differ in size: " + shape_string(tiles[0].shape()) + " vs " +
                           shape_string(tiles[i].shape()));
    }
  }
  const Tensor image = tiles.size() == 1 ? tiles[0] : tile_grid(tiles, r.columns);
  TextChunks text;
  if (!config_hash.empty()) text = hash_chunk(config_hash);
  write_png_rgb(r.output, image, text);
  log << "wrote " << r.output.string() << " (" << tiles.size() << " panel" << (tiles.size() == 1 ? "" : "s") << ")\n";
}

}  // namespace xinc
