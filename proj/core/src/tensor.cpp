#include "enfode/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace enfode {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  for (int64_t d : shape)
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension in " + shape_str(shape));
  data.assign(static_cast<size_t>(numel(shape)), fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t(Shape{});
  t.data[0] = v;
  return t;
}

Tensor Tensor::uninit(Shape s) {
  Tensor t;
  t.shape = std::move(s);
  t.data.resize(static_cast<size_t>(numel(t.shape)));  // no-init allocator
  return t;
}

Tensor Tensor::from_raw(Shape s, DataVec d) {
  if (numel(s) != static_cast<int64_t>(d.size()))
    throw std::invalid_argument("Tensor::from_raw: shape does not match data length");
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(d);
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> d) {
  if (numel(s) != static_cast<int64_t>(d.size()))
    throw std::invalid_argument("Tensor::from: " + shape_str(s) + " does not hold " +
                                std::to_string(d.size()) + " values");
  Tensor t;
  t.shape = std::move(s);
  t.data.assign(d.begin(), d.end());
  return t;
}

static int64_t flat_index(const Shape& shape, std::initializer_list<int64_t> idx) {
  if (idx.size() != shape.size()) throw std::invalid_argument("Tensor::at: rank mismatch");
  int64_t flat = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= shape[k]) throw std::out_of_range("Tensor::at: index out of range");
    flat = flat * shape[k] + i;
    ++k;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<int64_t> idx) { return data[flat_index(shape, idx)]; }
double Tensor::at(std::initializer_list<int64_t> idx) const { return data[flat_index(shape, idx)]; }

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::fabs(v));
  return m;
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw std::invalid_argument("max_abs_diff: shapes " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace enfode
