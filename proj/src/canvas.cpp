#include "xinc/canvas.hpp"

#include <algorithm>

#include "xinc/errors.hpp"
#include "xinc/hash.hpp"

namespace xinc {

ContributionMap CanvasLayer::map(std::size_t j, std::size_t frame_index) const {
  if (j >= count()) throw ArgumentError("layer " + id + " has no map " + std::to_string(j));
  ContributionMap m{id, j, frame_index, Tensor({height(), width()})};
  std::copy_n(map_ptr(j), height() * width(), m.grid.ptr());
  return m;
}

const CanvasLayer& NeuralCanvas::layer(const std::string& id) const {
  for (const auto& l : layers)
    if (l.id == id) return l;
  throw ArgumentError("canvas has no layer '" + id + "'");
}

std::vector<std::string> NeuralCanvas::layer_ids() const {
  std::vector<std::string> ids;
  for (const auto& l : layers) ids.push_back(l.id);
  return ids;
}

std::string NeuralCanvas::content_hash() const {
  Fnv1a h;
  h.update(kind);
  h.update(model_hash);
  for (const auto& l : layers) {
    h.update(l.id);
    h.update(shape_string(l.maps.shape()));
    h.update_values<float>(l.maps.values());
  }
  return h.hex();
}

}  // namespace xinc
