#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace isnet {

using Shape = std::vector<std::size_t>;

// Product of extents; the empty shape denotes a scalar with one element.
std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

enum class Precision { f32, f64 };

// Dense row-major array. Value type: copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T{0}) {}
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access, bounds-checked against the shape.
  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  T item() const;

  // Same elements under a new shape; throws DimensionError on count mismatch.
  Tensor reshaped(Shape shape) const;

  void fill(T value);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

// Interprets a rank-3 [C,H,W] or rank-4 [B,C,H,W] shape as batched planes.
struct Planes {
  std::size_t batch;
  std::size_t channels;
  std::size_t height;
  std::size_t width;

  std::size_t area() const { return height * width; }
  std::size_t per_sample() const { return channels * height * width; }
};

Planes as_planes(const Shape& shape, const char* what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace isnet
