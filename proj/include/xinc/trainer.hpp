#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xinc/models.hpp"

namespace xinc {

struct TrainConfig {
  std::size_t epochs = 1000;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_fraction = 0.2;
  std::uint64_t seed = 0;
  /// FFN only: pixels per optimiser step, 0 for the full frame.
  std::size_t pixel_batch = 0;

  void validate() const;
};

/// Adam at 2e-2 over full-frame batches.
TrainConfig ffn_train_defaults();
/// Adam at 2e-3, one frame per step.
TrainConfig nerv_train_defaults();

/// Linear warmup over warmup_fraction * epochs, then cosine decay to zero.
/// `progress` is the fractional epoch (step / steps_per_epoch).
double scheduled_lr(const TrainConfig& cfg, double progress);

struct FitReport {
  std::vector<double> epoch_loss;  // mean step loss within each epoch
  std::vector<double> epoch_lr;    // learning rate at each epoch's first step
  std::vector<double> final_psnr;  // per frame, on outputs clamped to [0,1]
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string model_hash;
};

template <typename Model>
struct TrainResult {
  Model model;
  FitReport report;
};

using ProgressFn = std::function<void(std::size_t epoch, double loss, double lr)>;

/// Frames are [3 x H x W] in [0,1]; the FFN takes exactly one.
template <typename T>
TrainResult<FfnModel<T>> train(FfnModel<T> model, std::span<const Tensor> frames, const TrainConfig& cfg,
                               const ProgressFn& progress = {});
template <typename T>
TrainResult<NervModel<T>> train(NervModel<T> model, std::span<const Tensor> frames, const TrainConfig& cfg,
                                const ProgressFn& progress = {});

// Loss (mean squared error) and its reverse-mode gradient. `grads` receives the
// gradient for every trainable tensor and must share the model's architecture.

template <typename T>
double ffn_loss_and_grad(const FfnModel<T>& model, const BasicTensor<T>& encoded, const BasicTensor<T>& target,
                         FfnModel<T>* grads);
template <typename T>
double nerv_loss_and_grad(const NervModel<T>& model, double t_norm, const BasicTensor<T>& target,
                          NervModel<T>* grads);

/// Frame [3 x H x W] to per-pixel rows [H*W x 3].
template <typename T>
BasicTensor<T> frame_to_rows(const Tensor& frame);
/// Inverse of frame_to_rows.
Tensor rows_to_frame(const Tensor& rows, std::size_t height, std::size_t width);

/// 10 log10(1 / MSE) with peak 1.0; +inf when the frames are identical.
double psnr(const Tensor& prediction, const Tensor& target);
/// PSNR as written to CSV: infinite values capped at 100 dB.
double psnr_capped(double value);

/// One upsampling block in isolation: conv, pixel shuffle, activation, applied
/// to a fixed input.
template <typename T>
struct NervBlockSlice {
  ConvLayer<T> conv;
  std::size_t stride = 2;
  Activation activation = Activation::gelu;
  BasicTensor<T> input;
};

template <typename T>
BasicTensor<T> forward_block(const NervBlockSlice<T>& slice);
template <typename T>
double block_loss_and_grad(const NervBlockSlice<T>& slice, const BasicTensor<T>& target, ConvLayer<T>* grads);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::size_t param_count = 0;
  double step = 0.0;
};

/// Reverse-mode gradients against central finite differences on randomly probed
/// parameters (step 1e-3 for float, 1e-6 for double). The difference quotient
/// comes from an independent extended-precision forward pass over the same
/// parameter values. Models must stay at or below 2,000 parameters.
template <typename T>
GradCheckResult grad_check(const FfnModel<T>& model, std::uint64_t probe_seed, std::size_t probes = 64);
template <typename T>
GradCheckResult grad_check(const NervModel<T>& model, std::uint64_t probe_seed, std::size_t probes = 64);
template <typename T>
GradCheckResult grad_check(const NervBlockSlice<T>& slice, std::uint64_t probe_seed, std::size_t probes = 64);

FfnConfig micro_ffn_config();
NervConfig micro_nerv_config();
/// Micro FFN with identity hidden activations (303 parameters).
template <typename T>
FfnModel<T> micro_ffn(std::uint64_t seed);
/// 4 -> 3 channel block at stride 2 on a 6x6 input (444 parameters).
template <typename T>
NervBlockSlice<T> micro_nerv_block(std::uint64_t seed);

inline constexpr std::size_t kGradCheckMaxParams = 2000;

}  // namespace xinc
