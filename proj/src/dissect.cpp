#include "xinc/dissect.hpp"

#include <algorithm>

#include "xinc/ops.hpp"
#include "xinc/parallel.hpp"

namespace xinc {

namespace {

/// [N x n] rows (one per pixel) -> [n x H x W] float maps.
template <typename T>
Tensor columns_to_maps(const BasicTensor<T>& rows, std::size_t height, std::size_t width) {
  const std::size_t n = rows.dim(1), pixels = height * width;
  Tensor maps({n, height, width});
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t j = 0; j < n; ++j) maps[j * pixels + p] = static_cast<float>(rows[p * n + j]);
  return maps;
}

constexpr std::size_t kPropagateChunk = 64;

}  // namespace

template <typename T>
CanvasLayer mlp_layer(const FfnModel<T>& model, std::size_t layer, std::size_t height, std::size_t width) {
  if (layer < 1 || layer > model.layers.size()) {
    throw ArgumentError("FFN layer must lie in [1, " + std::to_string(model.layers.size()) + "], got " +
                        std::to_string(layer));
  }
  FfnTrace<T> trace;
  forward_ffn(model, pixel_grid<T>(height, width), &trace);
  const BasicTensor<T>& v = layer == 1 ? trace.encoded : trace.post[layer - 2];
  CanvasLayer out;
  out.id = "layer" + std::to_string(layer);
  out.maps = columns_to_maps(matmul(v, model.layers[layer - 1].weight), height, width);
  return out;
}

template <typename T>
std::vector<ContributionMap> mlp_contributions(const FfnModel<T>& model, std::size_t layer, std::size_t height,
                                               std::size_t width, std::size_t frame_index) {
  const CanvasLayer l = mlp_layer(model, layer, height, width);
  std::vector<ContributionMap> maps;
  for (std::size_t j = 0; j < l.count(); ++j) maps.push_back(l.map(j, frame_index));
  return maps;
}

template <typename T>
NeuralCanvas canvas_ffn(const FfnModel<T>& model, std::size_t height, std::size_t width, std::size_t frame_index) {
  if (model.layers.empty()) throw ArgumentError("FFN has no layers to dissect");
  NeuralCanvas canvas;
  canvas.kind = "ffn";
  canvas.model_hash = model_hash(model);
  canvas.frame_index = frame_index;
  FfnTrace<T> trace;
  forward_ffn(model, pixel_grid<T>(height, width), &trace);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const BasicTensor<T>& v = l == 0 ? trace.encoded : trace.post[l - 1];
    CanvasLayer layer;
    layer.id = "layer" + std::to_string(l + 1);
    layer.maps = columns_to_maps(matmul(v, model.layers[l].weight), height, width);
    canvas.layers.push_back(std::move(layer));
  }
  return canvas;
}

template <typename T>
std::size_t UnrolledBlockMaps<T>::phase_of(std::size_t map_index) const {
  return (map_index / in_channels) % (stride * stride);
}

template <typename T>
std::pair<std::size_t, std::size_t> UnrolledBlockMaps<T>::offset_of(std::size_t map_index) const {
  const std::size_t p = phase_of(map_index);
  return {p / stride, p % stride};
}

namespace {

template <typename T>
void check_block(const NervModel<T>& model, std::size_t block) {
  if (block < 1 || block > model.blocks.size()) {
    throw ArgumentError("NeRV block must lie in [1, " + std::to_string(model.blocks.size()) + "], got " +
                        std::to_string(block));
  }
}

}  // namespace

template <typename T>
UnrolledBlockMaps<T> unroll_block(const NervModel<T>& model, std::size_t block, const BasicTensor<T>& block_input) {
  check_block(model, block);
  const ConvLayer<T>& conv = model.blocks[block - 1];
  const BasicTensor<T> per_kernel = conv2d_per_kernel(block_input, conv.weight);
  UnrolledBlockMaps<T> u;
  u.block = block;
  u.stride = model.config.strides[block - 1];
  u.in_channels = conv.weight.dim(1);
  u.out_channels = conv.weight.dim(0);
  const std::size_t r = u.stride, h = block_input.dim(1), w = block_input.dim(2);
  const std::size_t n = per_kernel.dim(0), ow = w * r;
  u.maps = BasicTensor<T>({n, h * r, ow});
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const auto [dy, dx] = u.offset_of(j);
      const T* src = per_kernel.ptr() + j * h * w;
      T* dst = u.maps.ptr() + j * h * r * ow;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) dst[(y * r + dy) * ow + x * r + dx] = src[y * w + x];
    }
  });
  return u;
}

template <typename T>
BasicTensor<T> propagate_to_output(const NervModel<T>& model, std::size_t block, BasicTensor<T> maps) {
  check_block(model, block);
  for (std::size_t j = block; j < model.blocks.size(); ++j) {
    maps = nearest_upsample(box_filter(maps, static_cast<int>(model.blocks[j].kernel())),
                            static_cast<int>(model.config.strides[j]));
  }
  return box_filter(maps, static_cast<int>(model.head.kernel()));
}

namespace {

template <typename T>
CanvasLayer head_layer(const NervModel<T>& model, const BasicTensor<T>& head_input) {
  CanvasLayer out;
  out.id = "head";
  out.in_channels = model.head.weight.dim(1);
  out.maps = activation(conv2d_per_kernel(head_input, model.head.weight), model.config.head_activation)
                 .template cast<float>();
  return out;
}

template <typename T>
CanvasLayer block_layer(const NervModel<T>& model, std::size_t block, const BasicTensor<T>& block_input) {
  const UnrolledBlockMaps<T> u = unroll_block(model, block, block_input);
  const std::size_t n = u.maps.dim(0), plane = u.maps.dim(1) * u.maps.dim(2);
  CanvasLayer out;
  out.id = "block" + std::to_string(block);
  out.in_channels = u.in_channels;
  out.maps = Tensor({n, model.config.height, model.config.width});
  const std::size_t out_plane = model.config.height * model.config.width;
  for (std::size_t begin = 0; begin < n; begin += kPropagateChunk) {
    const std::size_t count = std::min(kPropagateChunk, n - begin);
    BasicTensor<T> chunk({count, u.maps.dim(1), u.maps.dim(2)});
    std::copy_n(u.maps.ptr() + begin * plane, count * plane, chunk.ptr());
    chunk = propagate_to_output(model, block, activation(chunk, model.config.block_activation));
    if (chunk.dim(1) != model.config.height || chunk.dim(2) != model.config.width) {
      throw DimensionError("block " + std::to_string(block) + " propagates to " + shape_string(chunk.shape()));
    }
    for (std::size_t i = 0; i < count * out_plane; ++i) out.maps[begin * out_plane + i] = static_cast<float>(chunk[i]);
  }
  return out;
}

}  // namespace

template <typename T>
CanvasLayer head_contributions(const NervModel<T>& model, std::size_t t_index, std::size_t t_count) {
  NervTrace<T> trace;
  forward_nerv(model, t_index, t_count, &trace);
  return head_layer(model, trace.head_input);
}

template <typename T>
CanvasLayer block_contributions(const NervModel<T>& model, std::size_t block, std::size_t t_index,
                                std::size_t t_count) {
  check_block(model, block);
  NervTrace<T> trace;
  forward_nerv(model, t_index, t_count, &trace);
  return block_layer(model, block, trace.block_input[block - 1]);
}

template <typename T>
NeuralCanvas canvas_nerv(const NervModel<T>& model, std::size_t t_index, std::size_t t_count) {
  NervTrace<T> trace;
  forward_nerv(model, t_index, t_count, &trace);
  NeuralCanvas canvas;
  canvas.kind = "nerv";
  canvas.model_hash = model_hash(model);
  canvas.frame_index = t_index;
  for (std::size_t b = 1; b <= model.blocks.size(); ++b) {
    canvas.layers.push_back(block_layer(model, b, trace.block_input[b - 1]));
  }
  canvas.layers.push_back(head_layer(model, trace.head_input));
  return canvas;
}

#define XINC_INSTANTIATE_DISSECT(T)                                                                              \
  template CanvasLayer mlp_layer(const FfnModel<T>&, std::size_t, std::size_t, std::size_t);                    \
  template std::vector<ContributionMap> mlp_contributions(const FfnModel<T>&, std::size_t, std::size_t,          \
                                                          std::size_t, std::size_t);                             \
  template NeuralCanvas canvas_ffn(const FfnModel<T>&, std::size_t, std::size_t, std::size_t);                  \
  template struct UnrolledBlockMaps<T>;                                                                          \
  template UnrolledBlockMaps<T> unroll_block(const NervModel<T>&, std::size_t, const BasicTensor<T>&);           \
  template BasicTensor<T> propagate_to_output(const NervModel<T>&, std::size_t, BasicTensor<T>);                 \
  template CanvasLayer head_contributions(const NervModel<T>&, std::size_t, std::size_t);                        \
  template CanvasLayer block_contributions(const NervModel<T>&, std::size_t, std::size_t, std::size_t);          \
  template NeuralCanvas canvas_nerv(const NervModel<T>&, std::size_t, std::size_t);

XINC_INSTANTIATE_DISSECT(float)
XINC_INSTANTIATE_DISSECT(double)

}  // namespace xinc
