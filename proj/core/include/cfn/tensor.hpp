#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "cfn/errors.hpp"
#include "cfn/rng.hpp"

namespace cfn {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 4;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
inline constexpr DType dtype_of = std::is_same_v<T, float> ? DType::f32 : DType::f64;

std::string to_string(const Shape& shape);

// Throws ShapeError unless 1 <= rank <= 4 and every extent >= 1.
void validate_shape(const Shape& shape);

inline std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (const auto extent : shape) n *= extent;
  return n;
}

// Dense row-major array. Activations use N x C x H x W.
//
// A default-constructed tensor is the empty placeholder (rank 0, no data);
// every kernel rejects it. All other tensors satisfy
// size() == product(shape()) with every extent >= 1.
template <typename T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "Tensor supports float and double only");

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(element_count(shape_), T{0});
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  // Uniform on [lo, hi); the same seed always yields the same buffer.
  static Tensor uniform(Shape shape, std::uint64_t seed, double lo, double hi) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major offset of a full index tuple.
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    std::size_t off = 0;
    std::size_t axis = 0;
    for (const auto i : index) off = off * shape_[axis++] + i;
    return off;
  }

  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  Tensor reshaped(Shape shape) const {
    if (element_count(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool bitwise_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

struct ZerosFill {};
struct ConstantFill {
  double value = 0.0;
};
struct UniformFill {
  std::uint64_t seed = 0;
  double lo = 0.0;
  double hi = 1.0;
};
using Fill = std::variant<ZerosFill, ConstantFill, UniformFill>;

template <typename T>
Tensor<T> create(Shape shape, const Fill& fill) {
  validate_shape(shape);
  if (const auto* c = std::get_if<ConstantFill>(&fill)) {
    return Tensor<T>::full(std::move(shape), static_cast<T>(c->value));
  }
  if (const auto* u = std::get_if<UniformFill>(&fill)) {
    return Tensor<T>::uniform(std::move(shape), u->seed, u->lo, u->hi);
  }
  return Tensor<T>::zeros(std::move(shape));
}

}  // namespace cfn
