#include "pdpp/array.hpp"

#include <cmath>
#include <sstream>

namespace pdpp {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
ArrayT<T>::ArrayT(Shape shape, T fill) : shape_(std::move(shape)) {
  for (int d : shape_)
    require(d > 0, ErrorCode::kShapeMismatch, "non-positive dimension in shape " + shape_str(shape_));
  data_.assign(numel(shape_), fill);
}

template <class T>
ArrayT<T>::ArrayT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (int d : shape_)
    require(d > 0, ErrorCode::kShapeMismatch, "non-positive dimension in shape " + shape_str(shape_));
  require(numel(shape_) == data_.size(), ErrorCode::kShapeMismatch,
          "shape " + shape_str(shape_) + " does not match data length " + std::to_string(data_.size()));
}

template <class T>
int ArrayT<T>::dim(int axis) const {
  if (axis < 0) axis += rank();
  require(axis >= 0 && axis < rank(), ErrorCode::kShapeMismatch,
          "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  return shape_[axis];
}

template <class T>
std::size_t ArrayT<T>::offset(std::initializer_list<int> idx) const {
  std::size_t off = 0;
  std::size_t k = 0;
  for (int i : idx) off = off * static_cast<std::size_t>(shape_[k++]) + static_cast<std::size_t>(i);
  return off;
}

template <class T>
T& ArrayT<T>::at(std::initializer_list<int> idx) {
  return data_[offset(idx)];
}

template <class T>
const T& ArrayT<T>::at(std::initializer_list<int> idx) const {
  return data_[offset(idx)];
}

template <class T>
ArrayT<T> ArrayT<T>::reshaped(Shape shape) const {
  require(numel(shape) == data_.size(), ErrorCode::kShapeMismatch,
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return ArrayT(std::move(shape), data_);
}

template <class T>
void ArrayT<T>::fill(T v) {
  for (auto& x : data_) x = v;
}

template <class T>
bool ArrayT<T>::all_finite() const {
  for (T x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

template class ArrayT<float>;
template class ArrayT<double>;

}  // namespace pdpp
