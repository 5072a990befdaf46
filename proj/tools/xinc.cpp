// xinc: train, dissect and analyze implicit neural representations.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xinc/pipeline.hpp"
#include "xinc/tensor.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model, frames, masks, out, checkpoint, canvas, grid, which, layers;
  std::optional<std::size_t> k_rgb, k_gabor, epochs, frame_index, height, width;
  std::vector<double> percentiles;
  std::optional<double> lr;
  bool f64 = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> items;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

xinc::RunConfig resolve(const Overrides& o) {
  xinc::RunConfig c = o.config.empty() ? xinc::RunConfig{} : xinc::load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.model) c.model = *o.model;
  if (o.frames) c.frames = *o.frames;
  if (o.masks) c.masks = *o.masks;
  if (o.out) c.out = *o.out;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.canvas) c.canvas = *o.canvas;
  if (o.layers) c.layers = split_list(*o.layers);
  if (o.which) c.analysis.which = split_list(*o.which);
  if (o.k_rgb) c.analysis.k_rgb = *o.k_rgb;
  if (o.k_gabor) c.analysis.k_gabor = *o.k_gabor;
  if (o.grid) {
    std::size_t gy = 0, gx = 0;
    char sep = 0, extra = 0;
    if (std::sscanf(o.grid->c_str(), "%zu%c%zu%c", &gy, &sep, &gx, &extra) != 3 || (sep != 'x' && sep != 'X')) {
      throw xinc::ConfigError("--grid expects GYxGX, got '" + *o.grid + "'");
    }
    c.analysis.grid_y = gy;
    c.analysis.grid_x = gx;
  }
  if (!o.percentiles.empty()) c.analysis.percentiles = o.percentiles;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.frame_index) c.frame_index = *o.frame_index;
  if (o.height) c.height = *o.height;
  if (o.width) c.width = *o.width;
  if (o.lr) c.lr = *o.lr;
  if (o.f64) c.f64 = true;
  return c;
}

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "JSON run configuration");
  app->add_option("--seed", o.seed, "Random seed");
  app->add_option("--model", o.model, "Model kind")->check(CLI::IsMember({"ffn", "nerv"}));
  app->add_option("--frames", o.frames, "Directory of input frames");
  app->add_option("--masks", o.masks, "Directory of instance masks");
  app->add_option("--out", o.out, "Output directory");
  app->add_option("--checkpoint", o.checkpoint, "Checkpoint directory (default <out>/model)");
  app->add_option("--canvas", o.canvas, "Canvas directory (default <out>/canvas)");
  app->add_option("--height", o.height, "Frame height");
  app->add_option("--width", o.width, "Frame width");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit neural canvas toolkit"};
  app.require_subcommand(1);
  Overrides o;

  auto* train = app.add_subcommand("train", "Fit a model to frames");
  add_common(train, o);
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--lr", o.lr, "Peak learning rate");
  train->add_option("--frame-index", o.frame_index, "FFN: which frame to fit");
  train->add_flag("--f64", o.f64, "Train in double precision");

  auto* dissect = app.add_subcommand("dissect", "Write per-neuron contribution canvases");
  add_common(dissect, o);
  dissect->add_option("--layers", o.layers, "Comma-separated layer ids");

  auto* analyze = app.add_subcommand("analyze", "Run the canvas analyses");
  add_common(analyze, o);
  analyze->add_option("--which", o.which, "Comma-separated subset of variance,density,intensity,instances,temporal,embed");
  analyze->add_option("--k-rgb", o.k_rgb, "RGB pixel clusters");
  analyze->add_option("--k-gabor", o.k_gabor, "Gabor pixel clusters");
  analyze->add_option("--grid", o.grid, "Grid cells as GYxGX");
  analyze->add_option("--percentile", o.percentiles, "Mass percentile x (repeatable)");

  xinc::RenderRequest render_req;
  std::string range, render_hash;
  auto* render = app.add_subcommand("render", "Render rasters to a PNG grid");
  render->add_option("inputs", render_req.rasters, "Raster (.f32) or PNG inputs");
  render->add_option("-o,--output", render_req.output, "Output PNG")->required();
  render->add_option("--columns", render_req.columns, "Grid columns");
  render->add_option("--range", range, "Colour range LO:HI (default per raster)");
  render->add_option("--flow", render_req.flow, "Optical flow (.flo) to visualise");
  render->add_option("--base", render_req.base, "Image under the flow overlay");
  render->add_option("--flow-step", render_req.flow_step, "Flow arrow spacing");
  render->add_option("--config-hash", render_hash, "Hash to embed in the PNG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : xinc::kExitConfig;
  }

  try {
    if (render->parsed()) {
      if (!range.empty()) {
        char extra = 0;
        if (std::sscanf(range.c_str(), "%lf:%lf%c", &render_req.lo, &render_req.hi, &extra) != 2) {
          throw xinc::ConfigError("--range expects LO:HI, got '" + range + "'");
        }
      }
      xinc::cmd_render(render_req, render_hash, std::cerr);
      return xinc::kExitOk;
    }
    const xinc::RunConfig cfg = resolve(o);
    if (train->parsed()) xinc::cmd_train(cfg, std::cerr);
    if (dissect->parsed()) xinc::cmd_dissect(cfg, std::cerr);
    if (analyze->parsed()) xinc::cmd_analyze(cfg, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return xinc::exit_code_for(e);
  }
  return xinc::kExitOk;
}
