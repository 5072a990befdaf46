#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xinc/ops.hpp"
#include "xinc/tensor.hpp"

namespace xinc {

template <typename T>
struct AffineLayer {
  BasicTensor<T> weight;  // [in x out]
  BasicTensor<T> bias;    // [out]

  std::size_t inputs() const { return weight.dim(0); }
  std::size_t outputs() const { return weight.dim(1); }
};

template <typename T>
struct ConvLayer {
  BasicTensor<T> weight;  // [out x in x k x k]
  BasicTensor<T> bias;    // [out]

  std::size_t inputs() const { return weight.dim(1); }
  std::size_t outputs() const { return weight.dim(0); }
  int kernel() const { return static_cast<int>(weight.dim(2)); }
};

// ---------------------------------------------------------------------------
// Fourier-feature MLP

struct FfnConfig {
  std::size_t frequencies = 104;  // encoder output is 2 * frequencies
  std::vector<std::size_t> hidden{104, 104};
  std::size_t outputs = 3;
  double sigma = 10.0;
};

/// Random Fourier features: encode(v) = [cos(2 pi B v); sin(2 pi B v)].
template <typename T>
struct FourierEncoder {
  BasicTensor<T> frequencies;  // B, [F x 2], entries ~ N(0, sigma^2)
  double sigma = 10.0;

  std::size_t output_dim() const { return 2 * frequencies.dim(0); }
  /// coords [N x 2] -> [N x 2F]
  BasicTensor<T> encode(const BasicTensor<T>& coords) const;
};

template <typename T>
struct FfnModel {
  FfnConfig config;
  std::uint64_t seed = 0;
  FourierEncoder<T> encoder;
  std::vector<AffineLayer<T>> layers;
  Activation hidden_activation = Activation::relu;
  Activation output_activation = Activation::identity;
};

template <typename T>
struct FfnTrace {
  BasicTensor<T> encoded;            // [N x 2F]
  std::vector<BasicTensor<T>> pre;   // per layer, [N x n_l], bias included
  std::vector<BasicTensor<T>> post;  // activation(pre)
};

template <typename T>
FfnModel<T> build_ffn(std::uint64_t seed, const FfnConfig& config = {});
template <typename T>
FfnModel<T> build_ffn(std::uint64_t seed, double sigma) {
  FfnConfig cfg;
  cfg.sigma = sigma;
  return build_ffn<T>(seed, cfg);
}

/// coords [N x 2] in [0,1]^2 as (x, y) -> [N x outputs].
template <typename T>
BasicTensor<T> forward_ffn(const FfnModel<T>& model, const BasicTensor<T>& coords, FfnTrace<T>* trace = nullptr);

/// Pixel-centre coordinates ((x + 0.5) / W, (y + 0.5) / H), row-major over (y, x).
template <typename T>
BasicTensor<T> pixel_grid(std::size_t height, std::size_t width);

// ---------------------------------------------------------------------------
// NeRV-style decoder

struct NervConfig {
  std::size_t height = 128;
  std::size_t width = 256;
  std::vector<int> strides{4, 2, 2};
  int block_kernel = 3;
  int head_kernel = 3;
  double pe_base = 1.25;
  std::size_t pe_length = 80;
  std::size_t stem_hidden = 512;
  double width_decay = 1.2;
  std::size_t min_width = 6;
  std::size_t target_params = 1'000'000;
  std::size_t max_params = 1'050'000;
  std::size_t max_base_width = 4096;
  Activation block_activation = Activation::gelu;
  Activation head_activation = Activation::sigmoid;
  /// Explicit stage widths C_0..C_n; bypasses the solver when non-empty.
  std::vector<std::size_t> widths;
};

/// Result of the base-width search.
struct NervWidths {
  std::vector<std::size_t> channels;  // C_0 (stem volume) .. C_n (head input)
  std::size_t param_count = 0;
};

std::size_t nerv_param_count(const NervConfig& config, const std::vector<std::size_t>& channels);
/// Width schedule C_{i+1} = max(round(C_i / decay), min_width) for a given C_0.
std::vector<std::size_t> nerv_width_schedule(const NervConfig& config, std::size_t base_width);
/// Base width whose parameter count is closest to the target without exceeding max_params.
NervWidths solve_nerv_widths(const NervConfig& config);

/// Sinusoidal frame-index embedding, interleaved [sin(b^j pi t), cos(b^j pi t)], j < length.
struct NervPositionalEncoder {
  double base = 1.25;
  std::size_t length = 80;

  std::size_t output_dim() const { return 2 * length; }
  template <typename T>
  BasicTensor<T> encode(double t_norm) const;
};

template <typename T>
struct NervModel {
  NervConfig config;
  std::uint64_t seed = 0;
  NervPositionalEncoder encoder;
  std::vector<std::size_t> channels;  // resolved widths C_0..C_n
  AffineLayer<T> stem_hidden;         // pe -> stem_hidden
  AffineLayer<T> stem_out;            // stem_hidden -> C_0 * h0 * w0
  std::vector<ConvLayer<T>> blocks;   // conv to C_{i+1} * s_i^2 channels, then shuffle by s_i
  ConvLayer<T> head;                  // C_n -> 3

  std::size_t base_height() const;
  std::size_t base_width() const;
  /// Spatial size after block i (i = 0 is the stem volume).
  std::pair<std::size_t, std::size_t> resolution(std::size_t stage) const;
};

template <typename T>
struct NervTrace {
  BasicTensor<T> embedding;
  BasicTensor<T> stem_hidden_pre, stem_hidden_post;
  BasicTensor<T> stem_pre, stem_post;       // stem_post reshaped to [C_0 x h0 x w0]
  std::vector<BasicTensor<T>> block_input;  // input of block i
  std::vector<BasicTensor<T>> block_conv;   // conv output before the shuffle
  std::vector<BasicTensor<T>> block_pre;    // shuffled, pre-activation
  std::vector<BasicTensor<T>> block_post;   // activated
  BasicTensor<T> head_input;
  BasicTensor<T> head_pre;
  BasicTensor<T> output;
};

template <typename T>
NervModel<T> build_nerv(std::uint64_t seed, const NervConfig& config = {});

/// Frame embedding position t_index / t_count.
double nerv_time(std::size_t t_index, std::size_t t_count);

template <typename T>
BasicTensor<T> forward_nerv(const NervModel<T>& model, std::size_t t_index, std::size_t t_count,
                            NervTrace<T>* trace = nullptr);
template <typename T>
BasicTensor<T> forward_nerv_at(const NervModel<T>& model, double t_norm, NervTrace<T>* trace = nullptr);

// ---------------------------------------------------------------------------
// Parameter access, shared by the optimiser, checkpoints and hashing.

template <typename T>
struct NamedParam {
  std::string name;
  BasicTensor<T>* tensor;
};

template <typename T>
std::vector<NamedParam<T>> parameters(FfnModel<T>& model);
template <typename T>
std::vector<NamedParam<T>> parameters(NervModel<T>& model);
template <typename T>
struct ConstNamedParam {
  std::string name;
  const BasicTensor<T>* tensor;
};

template <typename T>
std::vector<ConstNamedParam<T>> parameters(const FfnModel<T>& model);
template <typename T>
std::vector<ConstNamedParam<T>> parameters(const NervModel<T>& model);

template <typename T>
std::size_t param_count(const FfnModel<T>& model);
template <typename T>
std::size_t param_count(const NervModel<T>& model);

/// Same architecture, all parameters zero.
template <typename T>
FfnModel<T> zeros_like(const FfnModel<T>& model);
template <typename T>
NervModel<T> zeros_like(const NervModel<T>& model);

template <typename To, typename From>
FfnModel<To> cast_model(const FfnModel<From>& model);
template <typename To, typename From>
NervModel<To> cast_model(const NervModel<From>& model);

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json + weights.bin (little-endian f32, manifest layout).

nlohmann::json describe(const FfnConfig& config);
nlohmann::json describe(const NervConfig& config);
/// Strict parsers: unknown keys raise ConfigError.
FfnConfig ffn_config_from_json(const nlohmann::json& j);
NervConfig nerv_config_from_json(const nlohmann::json& j);

/// Hash over the architecture descriptor and the f32 weight bytes.
template <typename T>
std::string model_hash(const FfnModel<T>& model);
template <typename T>
std::string model_hash(const NervModel<T>& model);

template <typename T>
nlohmann::json model_manifest(const FfnModel<T>& model);
template <typename T>
nlohmann::json model_manifest(const NervModel<T>& model);

/// Writes manifest.json and weights.bin into dir; `extra` is merged under "training".
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const FfnModel<T>& model, const nlohmann::json& extra = {});
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const NervModel<T>& model, const nlohmann::json& extra = {});

std::string checkpoint_kind(const std::filesystem::path& dir);
nlohmann::json read_manifest(const std::filesystem::path& dir);
FfnModel<float> load_ffn(const std::filesystem::path& dir);
NervModel<float> load_nerv(const std::filesystem::path& dir);

}  // namespace xinc
