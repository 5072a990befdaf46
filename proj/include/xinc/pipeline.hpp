#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xinc/models.hpp"
#include "xinc/trainer.hpp"

namespace xinc {

struct AnalysisConfig {
  std::vector<std::string> which{"variance", "density", "intensity", "instances", "temporal", "embed"};
  std::size_t k_rgb = 8;
  std::size_t k_gabor = 8;
  std::size_t grid_y = 4;
  std::size_t grid_x = 8;
  std::vector<double> percentiles{10.0, 50.0};
  std::size_t neuron_clusters = 4;
  std::size_t curve_length = 256;
  std::vector<std::size_t> instance_neurons;  // empty: every neuron
};

struct RunConfig {
  std::string model = "ffn";
  std::uint64_t seed = 0;
  std::string frames;
  std::string frame_pattern = "*.png";
  std::string masks;
  std::string out = "out";
  std::string checkpoint;  // default <out>/model
  std::string canvas;      // default <out>/canvas
  std::size_t height = 128;
  std::size_t width = 256;
  std::size_t frame_index = 0;  // FFN: the frame to fit
  std::size_t epochs = 1000;
  std::optional<double> lr;     // default depends on the model
  double warmup_fraction = 0.2;
  std::size_t pixel_batch = 0;
  bool f64 = false;
  FfnConfig ffn;
  NervConfig nerv;
  std::vector<std::string> layers;  // dissect selection, empty: all
  AnalysisConfig analysis;

  TrainConfig train_config() const;
  std::filesystem::path checkpoint_dir() const;
  std::filesystem::path canvas_dir() const;
  /// Effective configuration; output locations live under "outputs".
  nlohmann::json to_json() const;
  /// FNV-1a of the effective configuration without output locations.
  std::string hash() const;
};

/// Strict: unknown keys and ill-typed values raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

enum class Stage { train, dissect, analyze };
/// Throws ConfigError when a stage lacks inputs or parameters are out of range.
void validate(const RunConfig& cfg, Stage stage);

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3, kExitIo = 4 };
/// Maps the library's exception types onto exit codes.
int exit_code_for(const std::exception& e);

// Commands. Progress and warnings go to `log`.

void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_dissect(const RunConfig& cfg, std::ostream& log);
void cmd_analyze(const RunConfig& cfg, std::ostream& log);

struct RenderRequest {
  std::vector<std::filesystem::path> rasters;  // .f32 with sidecar, or PNG images
  std::filesystem::path flow;                  // optional .flo
  std::filesystem::path base;                  // optional PNG under the flow overlay
  std::filesystem::path output;
  std::size_t columns = 4;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t flow_step = 8;
};

void cmd_render(const RenderRequest& request, const std::string& config_hash, std::ostream& log);

}  // namespace xinc
