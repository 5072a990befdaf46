#pragma once

#include <cstddef>
#include <vector>

#include "xinc/canvas.hpp"
#include "xinc/models.hpp"

namespace xinc {

// FFN

/// Map j of layer `layer` (1-based) is v . W[:, j] at every pixel, where v is the
/// layer's input (the Fourier encoding for layer 1). Bias is not attributed.
template <typename T>
CanvasLayer mlp_layer(const FfnModel<T>& model, std::size_t layer, std::size_t height, std::size_t width);
template <typename T>
std::vector<ContributionMap> mlp_contributions(const FfnModel<T>& model, std::size_t layer, std::size_t height,
                                               std::size_t width, std::size_t frame_index = 0);
/// Layers "layer1".."layerN" at the given resolution.
template <typename T>
NeuralCanvas canvas_ffn(const FfnModel<T>& model, std::size_t height, std::size_t width, std::size_t frame_index = 0);

// NeRV

/// Per-kernel conv maps of one block placed at post-shuffle resolution. Kernel
/// (co, ci) keeps phase co mod r^2 at offset (phase / r, phase mod r) of every
/// r x r cell; the rest of the cell is zero.
template <typename T>
struct UnrolledBlockMaps {
  std::size_t block = 0;  // 1-based
  std::size_t stride = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;  // conv outputs, C_next * r^2
  BasicTensor<T> maps;           // [(out_channels * in_channels) x h*r x w*r]

  std::size_t phase_of(std::size_t map_index) const;
  std::pair<std::size_t, std::size_t> offset_of(std::size_t map_index) const;
};

/// Steps before activation: per-kernel conv, then phase-masked placement.
template <typename T>
UnrolledBlockMaps<T> unroll_block(const NervModel<T>& model, std::size_t block, const BasicTensor<T>& block_input);

/// Head kernels (C_in * 3 maps) passed through the head activation.
template <typename T>
CanvasLayer head_contributions(const NervModel<T>& model, std::size_t t_index, std::size_t t_count);
/// Block kernels (1-based block) carried to output resolution: unroll, block
/// activation, then box filter and nearest upsampling for every later layer.
template <typename T>
CanvasLayer block_contributions(const NervModel<T>& model, std::size_t block, std::size_t t_index,
                                std::size_t t_count);
/// Layers "block1".."blockN", then "head".
template <typename T>
NeuralCanvas canvas_nerv(const NervModel<T>& model, std::size_t t_index, std::size_t t_count);

/// Same propagation applied to an already unrolled, activated stack.
template <typename T>
BasicTensor<T> propagate_to_output(const NervModel<T>& model, std::size_t block, BasicTensor<T> maps);

}  // namespace xinc
