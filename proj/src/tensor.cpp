#include "isnet/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "isnet/error.hpp"

namespace isnet {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  if (std::find(shape_.begin(), shape_.end(), 0u) != shape_.end())
    throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
  data_.assign(numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (std::find(shape_.begin(), shape_.end(), 0u) != shape_.end())
    throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
  if (data_.size() != numel(shape_))
    throw DimensionError("element count " + std::to_string(data_.size()) + " does not match shape " +
                         to_string(shape_));
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw UsageError("item() on non-scalar tensor of shape " + to_string(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (numel(shape) != data_.size())
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size())
    throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " + to_string(shape_));
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range for shape " + to_string(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

Planes as_planes(const Shape& shape, const char* what) {
  if (shape.size() == 3) return {1, shape[0], shape[1], shape[2]};
  if (shape.size() == 4) return {shape[0], shape[1], shape[2], shape[3]};
  throw DimensionError(std::string(what) + " expects [C,H,W] or [B,C,H,W], got " + to_string(shape));
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace isnet
