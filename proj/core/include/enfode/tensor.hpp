#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace enfode {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Allocator whose default-construct is a no-op, so resize() skips the
/// zero fill when a kernel is about to overwrite every element.
template <class T>
struct NoInitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = NoInitAllocator<U>;
  };
  template <class U>
  void construct(U*) noexcept {}
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(static_cast<Args&&>(args)...);
  }
};

using DataVec = std::vector<double, NoInitAllocator<double>>;

/// Dense row-major f64 tensor. Plain value type; copies are deep.
struct Tensor {
  Shape shape;
  DataVec data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  static Tensor scalar(double v);
  static Tensor from(Shape s, std::vector<double> d);
  /// Allocation without the zero fill, for kernels that overwrite
  /// every element.
  static Tensor uninit(Shape s);
  static Tensor from_raw(Shape s, DataVec d);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  double max_abs() const;
  bool all_finite() const;
};

/// Largest elementwise |a-b|; throws on shape mismatch.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace enfode
