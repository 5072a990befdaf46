#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xinc/tensor.hpp"

namespace xinc {

/// One neuron's (or kernel's) contribution at every pixel of a frame.
struct ContributionMap {
  std::string layer_id;
  std::size_t neuron_id = 0;
  std::size_t frame_index = 0;
  Tensor grid;  // [H x W], signed
};

/// All contribution maps of one layer, stored contiguously.
struct CanvasLayer {
  std::string id;
  std::size_t in_channels = 0;  // conv layers: map j is kernel (j / in_channels, j % in_channels)
  Tensor maps;                  // [n x H x W]

  std::size_t count() const { return maps.empty() ? 0 : maps.dim(0); }
  std::size_t height() const { return maps.dim(1); }
  std::size_t width() const { return maps.dim(2); }
  const float* map_ptr(std::size_t j) const { return maps.ptr() + j * height() * width(); }
  ContributionMap map(std::size_t j, std::size_t frame_index = 0) const;
};

struct NeuralCanvas {
  std::string kind;  // "ffn" or "nerv"
  std::string model_hash;
  std::size_t frame_index = 0;
  std::vector<CanvasLayer> layers;

  const CanvasLayer& layer(const std::string& id) const;
  std::vector<std::string> layer_ids() const;
  /// FNV-1a over ids, shapes and map bytes.
  std::string content_hash() const;
};

}  // namespace xinc
