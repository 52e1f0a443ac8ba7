#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "pdpp/error.hpp"

namespace pdpp {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array. Value type; copies are deep.
template <class T>
class ArrayT {
 public:
  ArrayT() = default;
  explicit ArrayT(Shape shape, T fill = T(0));
  ArrayT(Shape shape, std::vector<T> data);

  static ArrayT zeros(Shape shape) { return ArrayT(std::move(shape)); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major multi-index access; bounds are not checked.
  T& at(std::initializer_list<int> idx);
  const T& at(std::initializer_list<int> idx) const;

  ArrayT reshaped(Shape shape) const;
  void fill(T v);
  bool all_finite() const;

  template <class U>
  ArrayT<U> cast() const {
    ArrayT<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const ArrayT& o) const = default;

 private:
  std::size_t offset(std::initializer_list<int> idx) const;

  Shape shape_;
  std::vector<T> data_;
};

using Array = ArrayT<float>;
using ArrayD = ArrayT<double>;

extern template class ArrayT<float>;
extern template class ArrayT<double>;

}  // namespace pdpp
