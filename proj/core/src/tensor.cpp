#include "cfn/tensor.hpp"

namespace cfn {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("empty shape");
  if (shape.size() > kMaxRank) throw ShapeError("rank > 4 not supported: " + to_string(shape));
  for (const auto extent : shape) {
    if (extent == 0) throw ShapeError("zero extent in shape " + to_string(shape));
  }
}

}  // namespace cfn
