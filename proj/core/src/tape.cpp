#include "enfode/tape.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace enfode {

namespace {

constexpr double kTwoOverSqrtPi = 1.1283791670955125738961589031;
constexpr double kInvSqrt2 = 0.7071067811865475244008443621;
constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599;

[[noreturn]] void op_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

void check_axis(const std::string& op, const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    op_error(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
}

// Shape of a padded/sliced/summed result along one axis.
Shape with_axis(Shape s, int axis, int64_t len) {
  s[static_cast<size_t>(axis)] = len;
  return s;
}

int64_t outer_of(const Shape& s, int axis) {
  int64_t o = 1;
  for (int d = 0; d < axis; ++d) o *= s[static_cast<size_t>(d)];
  return o;
}

int64_t inner_of(const Shape& s, int axis) {
  int64_t in = 1;
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) in *= s[d];
  return in;
}

Shape broadcast_shape(const std::string& op, const Shape& a, const Shape& b) {
  const size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
  Shape out(r, 1);
  for (size_t k = 0; k < r; ++k) {
    int64_t da = k < ra ? a[ra - 1 - k] : 1;
    int64_t db = k < rb ? b[rb - 1 - k] : 1;
    if (da != db && da != 1 && db != 1)
      op_error(op, "shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    out[r - 1 - k] = std::max(da, db);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Value
// ---------------------------------------------------------------------------

const Tensor& Value::val() const { return tape_->val(id_); }
const Shape& Value::shape() const { return tape_->val(id_).shape; }
bool Value::requires_grad() const { return tape_->node_requires_grad(id_); }

double Value::scalar() const {
  const Tensor& t = val();
  if (t.size() != 1) throw std::logic_error("Value::scalar on tensor " + shape_str(t.shape));
  return t.data[0];
}

Value GradMap::at(const Value& leaf) const {
  auto it = grads.find(leaf.id());
  if (it == grads.end())
    throw std::logic_error("GradMap: no gradient for node " + std::to_string(leaf.id()));
  return it->second;
}

Value GradMap::at_or_zero(const Value& leaf, Tape& tape) const {
  auto it = grads.find(leaf.id());
  if (it != grads.end()) return it->second;
  return tape.constant(Tensor(leaf.shape()));
}

// ---------------------------------------------------------------------------
// Forward kernels
// ---------------------------------------------------------------------------

Tensor Tape::eval(const Node& n) const {
  auto in = [&](size_t k) -> const Tensor& { return nodes_[static_cast<size_t>(n.in[k])].out; };
  switch (n.op) {
    case Op::Leaf:
      return n.out;
    case Op::Add: {
      const Tensor &a = in(0), &b = in(1);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = a.data[i] + b.data[i];
      return o;
    }
    case Op::Sub: {
      const Tensor &a = in(0), &b = in(1);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = a.data[i] - b.data[i];
      return o;
    }
    case Op::Mul: {
      const Tensor &a = in(0), &b = in(1);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = a.data[i] * b.data[i];
      return o;
    }
    case Op::Div: {
      const Tensor &a = in(0), &b = in(1);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = a.data[i] / b.data[i];
      return o;
    }
    case Op::Neg: {
      const Tensor& a = in(0);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = -a.data[i];
      return o;
    }
    case Op::Matmul: {
      const Tensor &a = in(0), &b = in(1);
      const bool ta = n.aux[0] != 0, tb = n.aux[1] != 0;
      const double* A = a.data.data();
      const double* B = b.data.data();
      if (!ta && !tb) {
        const int64_t m = a.shape[0], k = a.shape[1], c = b.shape[1];
        Tensor o(Shape{m, c});
        double* C = o.data.data();
        for (int64_t i = 0; i < m; ++i) {
          double* Ci = C + i * c;
          const double* Ai = A + i * k;
          for (int64_t l = 0; l < k; ++l) {
            const double av = Ai[l];
            const double* Bl = B + l * c;
            for (int64_t j = 0; j < c; ++j) Ci[j] += av * Bl[j];
          }
        }
        return o;
      }
      if (!ta && tb) {  // A B^T: rows dot rows, both contiguous
        const int64_t m = a.shape[0], k = a.shape[1], c = b.shape[0];
        Tensor o = Tensor::uninit(Shape{m, c});
        double* C = o.data.data();
        for (int64_t i = 0; i < m; ++i) {
          const double* Ai = A + i * k;
          double* Ci = C + i * c;
          for (int64_t j = 0; j < c; ++j) {
            const double* Bj = B + j * k;
            double acc = 0.0;
            for (int64_t l = 0; l < k; ++l) acc += Ai[l] * Bj[l];
            Ci[j] = acc;
          }
        }
        return o;
      }
      // A^T B: rank-1 accumulation over the shared leading index
      const int64_t k = a.shape[0], m = a.shape[1], c = b.shape[1];
      Tensor o(Shape{m, c});
      double* C = o.data.data();
      for (int64_t l = 0; l < k; ++l) {
        const double* Al = A + l * m;
        const double* Bl = B + l * c;
        for (int64_t i = 0; i < m; ++i) {
          const double av = Al[i];
          double* Ci = C + i * c;
          for (int64_t j = 0; j < c; ++j) Ci[j] += av * Bl[j];
        }
      }
      return o;
    }
    case Op::Transpose: {
      const Tensor& a = in(0);
      const int64_t r = a.shape[0], c = a.shape[1];
      Tensor o = Tensor::uninit(Shape{c, r});
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) o.data[static_cast<size_t>(j * r + i)] = a.data[static_cast<size_t>(i * c + j)];
      return o;
    }
    case Op::Reshape: {
      Tensor o = in(0);
      o.shape = Shape(n.aux.begin(), n.aux.end());
      return o;
    }
    case Op::Broadcast: {
      const Tensor& a = in(0);
      const Shape out_shape(n.aux.begin(), n.aux.end());
      Tensor o = Tensor::uninit(out_shape);
      const size_t ro = out_shape.size(), ra = a.shape.size();
      if (a.data.size() == 1) {  // scalar spread
        std::fill(o.data.begin(), o.data.end(), a.data[0]);
        return o;
      }
      // fast path: input equals the trailing dims of the output
      bool leading_repeat = true;
      for (size_t k = 0; k < ra; ++k)
        if (a.shape[k] != out_shape[ro - ra + k]) { leading_repeat = false; break; }
      if (leading_repeat) {
        const size_t block = a.data.size();
        const size_t reps = block == 0 ? 0 : o.data.size() / block;
        for (size_t r = 0; r < reps; ++r)
          std::memcpy(o.data.data() + r * block, a.data.data(), block * sizeof(double));
        return o;
      }
      std::vector<int64_t> stride(ro, 0);
      int64_t s = 1;
      for (size_t k = ra; k-- > 0;) {
        const size_t ok = ro - ra + k;
        stride[ok] = (a.shape[k] == 1 && out_shape[ok] != 1) ? 0 : s;
        s *= a.shape[k];
      }
      for (int64_t idx = 0; idx < o.size(); ++idx) {
        int64_t rem = idx, off = 0;
        for (size_t k = ro; k-- > 0;) {
          const int64_t coord = rem % out_shape[k];
          rem /= out_shape[k];
          off += coord * stride[k];
        }
        o.data[static_cast<size_t>(idx)] = a.data[static_cast<size_t>(off)];
      }
      return o;
    }
    case Op::Sum: {
      const Tensor& a = in(0);
      const int axis = n.axis;
      const int64_t outer = outer_of(a.shape, axis), mid = a.shape[static_cast<size_t>(axis)],
                    inner = inner_of(a.shape, axis);
      Shape os(n.aux.begin(), n.aux.end());
      Tensor o(os);
      for (int64_t ot = 0; ot < outer; ++ot)
        for (int64_t m = 0; m < mid; ++m) {
          const double* src = a.data.data() + (ot * mid + m) * inner;
          double* dst = o.data.data() + ot * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      return o;
    }
    case Op::Concat: {
      const int axis = n.axis;
      const Tensor& first = in(0);
      int64_t total_mid = 0;
      for (size_t k = 0; k < n.in.size(); ++k) total_mid += in(k).shape[static_cast<size_t>(axis)];
      Tensor o = Tensor::uninit(with_axis(first.shape, axis, total_mid));
      const int64_t outer = outer_of(first.shape, axis), inner = inner_of(first.shape, axis);
      int64_t off = 0;
      for (size_t k = 0; k < n.in.size(); ++k) {
        const Tensor& p = in(k);
        const int64_t mid = p.shape[static_cast<size_t>(axis)];
        for (int64_t ot = 0; ot < outer; ++ot)
          std::memcpy(o.data.data() + (ot * total_mid + off) * inner,
                      p.data.data() + ot * mid * inner,
                      static_cast<size_t>(mid * inner) * sizeof(double));
        off += mid;
      }
      return o;
    }
    case Op::Slice: {
      const Tensor& a = in(0);
      const int axis = n.axis;
      const int64_t start = n.aux[0], len = n.aux[1];
      const int64_t outer = outer_of(a.shape, axis), mid = a.shape[static_cast<size_t>(axis)],
                    inner = inner_of(a.shape, axis);
      Tensor o = Tensor::uninit(with_axis(a.shape, axis, len));
      for (int64_t ot = 0; ot < outer; ++ot)
        std::memcpy(o.data.data() + ot * len * inner,
                    a.data.data() + (ot * mid + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(double));
      return o;
    }
    case Op::PadSlice: {
      const Tensor& a = in(0);
      const int axis = n.axis;
      const int64_t start = n.aux[0], full = n.aux[1];
      const int64_t outer = outer_of(a.shape, axis), mid = a.shape[static_cast<size_t>(axis)],
                    inner = inner_of(a.shape, axis);
      Tensor o(with_axis(a.shape, axis, full));
      for (int64_t ot = 0; ot < outer; ++ot)
        std::memcpy(o.data.data() + (ot * full + start) * inner,
                    a.data.data() + ot * mid * inner,
                    static_cast<size_t>(mid * inner) * sizeof(double));
      return o;
    }
    case Op::Exp: {
      const Tensor& a = in(0);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::exp(a.data[i]);
      return o;
    }
    case Op::Log: {
      const Tensor& a = in(0);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::log(a.data[i]);
      return o;
    }
    case Op::Sin: {
      const Tensor& a = in(0);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::sin(a.data[i]);
      return o;
    }
    case Op::Cos: {
      const Tensor& a = in(0);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::cos(a.data[i]);
      return o;
    }
    case Op::Sqrt: {
      const Tensor& a = in(0);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::sqrt(a.data[i]);
      return o;
    }
    case Op::Erf: {
      const Tensor& a = in(0);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::erf(a.data[i]);
      return o;
    }
    case Op::Acos: {
      const Tensor& a = in(0);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::acos(a.data[i]);
      return o;
    }
    case Op::Atan2: {
      const Tensor &y = in(0), &x = in(1);
      Tensor o = Tensor::uninit(y.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::atan2(y.data[i], x.data[i]);
      return o;
    }
    case Op::Relu: {
      const Tensor& a = in(0);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
      return o;
    }
    case Op::Gelu: {
      const Tensor& a = in(0);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i)
        o.data[i] = 0.5 * a.data[i] * (1.0 + std::erf(a.data[i] * kInvSqrt2));
      return o;
    }
    case Op::CosSin: {
      const Tensor& a = in(0);
      const int64_t r = a.shape[0], c = a.shape[1];
      Tensor o = Tensor::uninit(Shape{r, 2 * c});
      for (int64_t i = 0; i < r; ++i) {
        const double* src = a.data.data() + i * c;
        double* dst = o.data.data() + i * 2 * c;
        for (int64_t j = 0; j < c; ++j) {
          dst[j] = std::cos(src[j]);
          dst[c + j] = std::sin(src[j]);
        }
      }
      return o;
    }
    case Op::ScalarMul: {
      const Tensor& a = in(0);
      const double cv = std::bit_cast<double>(n.aux[0]);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = a.data[i] * cv;
      return o;
    }
    case Op::ScalarAdd: {
      const Tensor& a = in(0);
      const double cv = std::bit_cast<double>(n.aux[0]);
      Tensor o = Tensor::uninit(a.shape);
      for (size_t i = 0; i < o.data.size(); ++i) o.data[i] = a.data[i] + cv;
      return o;
    }
  }
  throw std::logic_error("eval: unknown op");
}

// ---------------------------------------------------------------------------
// Node builders
// ---------------------------------------------------------------------------

void Tape::check_same_tape(Value v) const {
  if (v.tape() != this) throw std::logic_error("Value belongs to a different tape");
}

Value Tape::push(Node n) {
  bool rg = false;
  if (n.op == Op::Leaf) {
    rg = n.requires_grad;
  } else if (record_grad_) {
    for (int i : n.in)
      if (nodes_[static_cast<size_t>(i)].requires_grad) { rg = true; break; }
  }
  n.requires_grad = rg;
  if (n.op != Op::Leaf) n.out = eval(n);
  nodes_.push_back(std::move(n));
  return Value(this, static_cast<int>(nodes_.size()) - 1);
}

Value Tape::leaf(Tensor t, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad;
  n.out = std::move(t);
  return push(std::move(n));
}

Value Tape::unary(Op op, Value a, Tensor) {
  check_same_tape(a);
  Node n;
  n.op = op;
  n.in = {a.id()};
  return push(std::move(n));
}

std::pair<Value, Value> Tape::broadcast_pair(Value a, Value b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.shape() == b.shape()) return {a, b};
  Shape bs = broadcast_shape("elementwise", a.shape(), b.shape());
  Value ab = a.shape() == bs ? a : broadcast_to(a, bs);
  Value bb = b.shape() == bs ? b : broadcast_to(b, bs);
  return {ab, bb};
}

Value Tape::add(Value a, Value b) {
  auto [x, y] = broadcast_pair(a, b);
  Node n;
  n.op = Op::Add;
  n.in = {x.id(), y.id()};
  return push(std::move(n));
}

Value Tape::sub(Value a, Value b) {
  auto [x, y] = broadcast_pair(a, b);
  Node n;
  n.op = Op::Sub;
  n.in = {x.id(), y.id()};
  return push(std::move(n));
}

Value Tape::mul(Value a, Value b) {
  auto [x, y] = broadcast_pair(a, b);
  Node n;
  n.op = Op::Mul;
  n.in = {x.id(), y.id()};
  return push(std::move(n));
}

Value Tape::div(Value a, Value b) {
  auto [x, y] = broadcast_pair(a, b);
  Node n;
  n.op = Op::Div;
  n.in = {x.id(), y.id()};
  return push(std::move(n));
}

Value Tape::neg(Value a) { return unary(Op::Neg, a, {}); }

Value Tape::matmul(Value a, Value b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    op_error("matmul", "incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Node n;
  n.op = Op::Matmul;
  n.in = {a.id(), b.id()};
  n.aux = {0, 0};
  return push(std::move(n));
}

Value Tape::matmul_nt(Value a, Value b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1])
    op_error("matmul_nt",
             "incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Node n;
  n.op = Op::Matmul;
  n.in = {a.id(), b.id()};
  n.aux = {0, 1};
  return push(std::move(n));
}

Value Tape::matmul_tn(Value a, Value b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0])
    op_error("matmul_tn",
             "incompatible shapes " + shape_str(a.shape()) + "^T x " + shape_str(b.shape()));
  Node n;
  n.op = Op::Matmul;
  n.in = {a.id(), b.id()};
  n.aux = {1, 0};
  return push(std::move(n));
}

Value Tape::transpose(Value a) {
  check_same_tape(a);
  if (a.shape().size() != 2)
    op_error("transpose", "expects a 2-D tensor, got " + shape_str(a.shape()));
  Node n;
  n.op = Op::Transpose;
  n.in = {a.id()};
  return push(std::move(n));
}

Value Tape::reshape(Value a, Shape s) {
  check_same_tape(a);
  if (numel(s) != numel(a.shape()))
    op_error("reshape", shape_str(a.shape()) + " -> " + shape_str(s) + " changes element count");
  Node n;
  n.op = Op::Reshape;
  n.in = {a.id()};
  n.aux.assign(s.begin(), s.end());
  return push(std::move(n));
}

Value Tape::broadcast_to(Value a, Shape s) {
  check_same_tape(a);
  const Shape& as = a.shape();
  if (s.size() < as.size())
    op_error("broadcast", shape_str(as) + " -> " + shape_str(s) + " drops rank");
  for (size_t k = 0; k < as.size(); ++k) {
    const int64_t od = s[s.size() - as.size() + k];
    if (as[k] != od && as[k] != 1)
      op_error("broadcast", shape_str(as) + " -> " + shape_str(s) + " is not a broadcast");
  }
  Node n;
  n.op = Op::Broadcast;
  n.in = {a.id()};
  n.aux.assign(s.begin(), s.end());
  return push(std::move(n));
}

Value Tape::sum(Value a, int axis, bool keepdims) {
  check_same_tape(a);
  check_axis("sum", a.shape(), axis);
  Shape os = a.shape();
  if (keepdims)
    os[static_cast<size_t>(axis)] = 1;
  else
    os.erase(os.begin() + axis);
  Node n;
  n.op = Op::Sum;
  n.axis = axis;
  n.in = {a.id()};
  n.aux.assign(os.begin(), os.end());
  return push(std::move(n));
}

Value Tape::concat(const std::vector<Value>& parts, int axis) {
  if (parts.empty()) op_error("concat", "no inputs");
  const Shape& first = parts[0].shape();
  check_axis("concat", first, axis);
  Node n;
  n.op = Op::Concat;
  n.axis = axis;
  for (const Value& p : parts) {
    check_same_tape(p);
    const Shape& s = p.shape();
    if (s.size() != first.size())
      op_error("concat", "rank mismatch " + shape_str(first) + " vs " + shape_str(s));
    for (size_t d = 0; d < s.size(); ++d)
      if (d != static_cast<size_t>(axis) && s[d] != first[d])
        op_error("concat", "shape mismatch " + shape_str(first) + " vs " + shape_str(s));
    n.in.push_back(p.id());
  }
  return push(std::move(n));
}

Value Tape::slice(Value a, int axis, int64_t start, int64_t len) {
  check_same_tape(a);
  check_axis("slice", a.shape(), axis);
  const int64_t mid = a.shape()[static_cast<size_t>(axis)];
  if (start < 0 || len < 0 || start + len > mid)
    op_error("slice", "[" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") out of range for " + shape_str(a.shape()));
  Node n;
  n.op = Op::Slice;
  n.axis = axis;
  n.in = {a.id()};
  n.aux = {start, len};
  return push(std::move(n));
}

Value Tape::pad_slice(Value a, int axis, int64_t start, int64_t full_len) {
  check_same_tape(a);
  check_axis("pad_slice", a.shape(), axis);
  const int64_t mid = a.shape()[static_cast<size_t>(axis)];
  if (start < 0 || start + mid > full_len)
    op_error("pad_slice", "region does not fit");
  Node n;
  n.op = Op::PadSlice;
  n.axis = axis;
  n.in = {a.id()};
  n.aux = {start, full_len};
  return push(std::move(n));
}

Value Tape::exp(Value a) { return unary(Op::Exp, a, {}); }

Value Tape::log(Value a) {
  check_same_tape(a);
  for (double v : a.val().data)
    if (v <= 0.0) op_error("log", "non-positive input " + std::to_string(v));
  return unary(Op::Log, a, {});
}

Value Tape::sin(Value a) { return unary(Op::Sin, a, {}); }
Value Tape::cos(Value a) { return unary(Op::Cos, a, {}); }

Value Tape::sqrt(Value a) {
  check_same_tape(a);
  for (double v : a.val().data)
    if (v < 0.0) op_error("sqrt", "negative input " + std::to_string(v));
  return unary(Op::Sqrt, a, {});
}

Value Tape::erf(Value a) { return unary(Op::Erf, a, {}); }

Value Tape::acos(Value a) {
  check_same_tape(a);
  for (double v : a.val().data)
    if (v < -1.0 || v > 1.0) op_error("acos", "input outside [-1,1]: " + std::to_string(v));
  return unary(Op::Acos, a, {});
}

Value Tape::atan2(Value y, Value x) {
  auto [a, b] = broadcast_pair(y, x);
  Node n;
  n.op = Op::Atan2;
  n.in = {a.id(), b.id()};
  return push(std::move(n));
}

Value Tape::relu(Value a) { return unary(Op::Relu, a, {}); }
Value Tape::gelu(Value a) { return unary(Op::Gelu, a, {}); }

Value Tape::cos_sin(Value a) {
  check_same_tape(a);
  if (a.shape().size() != 2) op_error("cos_sin", "expects a 2-D tensor, got " + shape_str(a.shape()));
  return unary(Op::CosSin, a, {});
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

Value Tape::add_scalar(Value a, double c) {
  check_same_tape(a);
  Node n;
  n.op = Op::ScalarAdd;
  n.in = {a.id()};
  n.aux = {static_cast<int64_t>(std::bit_cast<int64_t>(c))};
  return push(std::move(n));
}

Value Tape::mul_scalar(Value a, double c) {
  check_same_tape(a);
  Node n;
  n.op = Op::ScalarMul;
  n.in = {a.id()};
  n.aux = {static_cast<int64_t>(std::bit_cast<int64_t>(c))};
  return push(std::move(n));
}

Value Tape::sum_all(Value a) {
  Value flat = a.shape().size() == 1 ? a : reshape(a, Shape{numel(a.shape())});
  return reshape(sum(flat, 0), Shape{});
}

Value Tape::mean(Value a, int axis, bool keepdims) {
  check_axis("mean", a.shape(), axis);
  const double inv = 1.0 / static_cast<double>(a.shape()[static_cast<size_t>(axis)]);
  return mul_scalar(sum(a, axis, keepdims), inv);
}

Value Tape::mean_all(Value a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(numel(a.shape())));
}

Value Tape::softmax(Value a, int axis) {
  check_axis("softmax", a.shape(), axis);
  // detached row max keeps exp bounded; its gradient contribution cancels
  const Tensor& t = a.val();
  const int64_t outer = outer_of(t.shape, axis), mid = t.shape[static_cast<size_t>(axis)],
                inner = inner_of(t.shape, axis);
  Tensor mx(with_axis(t.shape, axis, 1), -1e300);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t m = 0; m < mid; ++m)
      for (int64_t i = 0; i < inner; ++i) {
        double& dst = mx.data[static_cast<size_t>(o * inner + i)];
        dst = std::max(dst, t.data[static_cast<size_t>((o * mid + m) * inner + i)]);
      }
  Value e = exp(sub(a, constant(std::move(mx))));
  Value s = sum(e, axis, true);
  return div(e, s);
}

Value Tape::layer_norm(Value a, int axis, Value gamma, Value beta) {
  check_axis("layer_norm", a.shape(), axis);
  Value mu = mean(a, axis, true);
  Value centered = sub(a, mu);
  Value var = mean(square(centered), axis, true);
  // variance floor 1e-6; the floor branch is a detached mask so rows above
  // it normalize exactly
  const Tensor& vv = var.val();
  Tensor m(vv.shape);
  bool any_low = false;
  for (size_t i = 0; i < vv.data.size(); ++i) {
    const bool above = vv.data[i] >= 1e-6;
    m.data[i] = above ? 1.0 : 0.0;
    any_low = any_low || !above;
  }
  Value denom_sq = var;
  if (any_low) {
    Value mask = constant(std::move(m));
    denom_sq = add(mul(mask, var), mul_scalar(sub(scalar_const(1.0), mask), 1e-6));
  }
  Value norm = div(centered, sqrt(denom_sq));
  return add(mul(norm, gamma), beta);
}

Value Tape::mse(Value pred, Value target) { return mean_all(square(sub(pred, target))); }

Value Tape::linear(Value x, Value w, Value b) { return add(matmul_nt(x, w), b); }

Value Tape::apply(const std::string& op_kind, const std::vector<Value>& in, int axis) {
  auto need = [&](size_t k) {
    if (in.size() != k) op_error(op_kind, "expects " + std::to_string(k) + " inputs");
  };
  if (op_kind == "add") { need(2); return add(in[0], in[1]); }
  if (op_kind == "sub") { need(2); return sub(in[0], in[1]); }
  if (op_kind == "mul") { need(2); return mul(in[0], in[1]); }
  if (op_kind == "div") { need(2); return div(in[0], in[1]); }
  if (op_kind == "matmul") { need(2); return matmul(in[0], in[1]); }
  if (op_kind == "concat") return concat(in, axis);
  if (op_kind == "slice") {  // lower half along axis (test-surface parameterization)
    need(1);
    const int64_t mid = in[0].shape()[static_cast<size_t>(axis)];
    return slice(in[0], axis, 0, (mid + 1) / 2);
  }
  if (op_kind == "reshape") { need(1); return reshape(in[0], Shape{numel(in[0].shape())}); }
  if (op_kind == "broadcast") {
    need(1);
    Shape s = in[0].shape();
    s.insert(s.begin(), 2);
    return broadcast_to(in[0], s);
  }
  if (op_kind == "sum") { need(1); return sum(in[0], axis); }
  if (op_kind == "mean") { need(1); return mean(in[0], axis); }
  if (op_kind == "exp") { need(1); return exp(in[0]); }
  if (op_kind == "log") { need(1); return log(in[0]); }
  if (op_kind == "sin") { need(1); return sin(in[0]); }
  if (op_kind == "cos") { need(1); return cos(in[0]); }
  if (op_kind == "sqrt") { need(1); return sqrt(in[0]); }
  if (op_kind == "square") { need(1); return square(in[0]); }
  if (op_kind == "softmax") { need(1); return softmax(in[0], axis); }
  if (op_kind == "layer_norm") { need(3); return layer_norm(in[0], axis, in[1], in[2]); }
  if (op_kind == "relu") { need(1); return relu(in[0]); }
  if (op_kind == "gelu") { need(1); return gelu(in[0]); }
  if (op_kind == "erf") { need(1); return erf(in[0]); }
  if (op_kind == "acos") { need(1); return acos(in[0]); }
  if (op_kind == "atan2") { need(2); return atan2(in[0], in[1]); }
  op_error(op_kind, "unknown op kind");
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

GradMap Tape::backward(Value loss, bool create_graph) {
  check_same_tape(loss);
  if (numel(loss.shape()) != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));

  GradMap gm;
  const int L = loss.id();
  if (!nodes_[static_cast<size_t>(L)].requires_grad) return gm;  // constant loss

  const bool saved = record_grad_;
  record_grad_ = create_graph;

  std::vector<int> adj(static_cast<size_t>(L) + 1, -1);
  adj[static_cast<size_t>(L)] = constant(Tensor(loss.shape(), 1.0)).id();

  auto accum = [&](int target, Value contrib) {
    int& slot = adj[static_cast<size_t>(target)];
    slot = slot < 0 ? contrib.id() : add(Value(this, slot), contrib).id();
  };
  auto reduce_to = [&](Value g, Shape target) {  // by value: sum() below reallocates nodes_
    while (g.shape().size() > target.size()) g = sum(g, 0, false);
    for (size_t d = 0; d < target.size(); ++d)
      if (target[d] == 1 && g.shape()[d] != 1) g = sum(g, static_cast<int>(d), true);
    if (g.shape() != target) g = reshape(g, target);
    return g;
  };

  // node metadata is copied out before dispatch: emitting adjoint ops can
  // reallocate nodes_ and would dangle a reference
  struct Meta {
    Op op;
    int axis;
    std::vector<int> in;
    std::vector<int64_t> aux;
  };
  for (int i = L; i >= 0; --i) {
    if (adj[static_cast<size_t>(i)] < 0) continue;
    if (!nodes_[static_cast<size_t>(i)].requires_grad ||
        nodes_[static_cast<size_t>(i)].op == Op::Leaf)
      continue;
    const Meta n{nodes_[static_cast<size_t>(i)].op, nodes_[static_cast<size_t>(i)].axis,
                 nodes_[static_cast<size_t>(i)].in, nodes_[static_cast<size_t>(i)].aux};
    Value g(this, adj[static_cast<size_t>(i)]);
    Value out(this, i);
    auto needs = [&](size_t k) { return nodes_[static_cast<size_t>(n.in[k])].requires_grad; };
    auto input = [&](size_t k) { return Value(this, n.in[k]); };

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add:
        if (needs(0)) accum(n.in[0], g);
        if (needs(1)) accum(n.in[1], g);
        break;
      case Op::Sub:
        if (needs(0)) accum(n.in[0], g);
        if (needs(1)) accum(n.in[1], neg(g));
        break;
      case Op::Mul:
        if (needs(0)) accum(n.in[0], mul(g, input(1)));
        if (needs(1)) accum(n.in[1], mul(g, input(0)));
        break;
      case Op::Div:
        if (needs(0)) accum(n.in[0], div(g, input(1)));
        if (needs(1)) accum(n.in[1], neg(mul(g, div(out, input(1)))));
        break;
      case Op::Neg:
        if (needs(0)) accum(n.in[0], neg(g));
        break;
      case Op::Matmul: {
        const bool ta = n.aux[0] != 0, tb = n.aux[1] != 0;
        if (!ta && !tb) {
          if (needs(0)) accum(n.in[0], matmul_nt(g, input(1)));
          if (needs(1)) accum(n.in[1], matmul_tn(input(0), g));
        } else if (!ta && tb) {  // C = A B^T
          if (needs(0)) accum(n.in[0], matmul(g, input(1)));
          if (needs(1)) accum(n.in[1], matmul_tn(g, input(0)));
        } else {  // C = A^T B
          if (needs(0)) accum(n.in[0], matmul_nt(input(1), g));
          if (needs(1)) accum(n.in[1], matmul(input(0), g));
        }
        break;
      }
      case Op::Transpose:
        if (needs(0)) accum(n.in[0], transpose(g));
        break;
      case Op::Reshape:
        if (needs(0)) accum(n.in[0], reshape(g, input(0).shape()));
        break;
      case Op::Broadcast:
        if (needs(0)) accum(n.in[0], reduce_to(g, input(0).shape()));
        break;
      case Op::Sum: {
        if (!needs(0)) break;
        const Shape is = input(0).shape();  // copy before emitting ops
        Shape keep = is;
        keep[static_cast<size_t>(n.axis)] = 1;
        Value gk = g.shape() == keep ? g : reshape(g, keep);
        accum(n.in[0], broadcast_to(gk, is));
        break;
      }
      case Op::Concat: {
        int64_t off = 0;
        for (size_t k = 0; k < n.in.size(); ++k) {
          const int64_t mid = input(k).shape()[static_cast<size_t>(n.axis)];
          if (needs(k)) accum(n.in[k], slice(g, n.axis, off, mid));
          off += mid;
        }
        break;
      }
      case Op::Slice:
        if (needs(0))
          accum(n.in[0], pad_slice(g, n.axis, n.aux[0],
                                   input(0).shape()[static_cast<size_t>(n.axis)]));
        break;
      case Op::PadSlice:
        if (needs(0))
          accum(n.in[0], slice(g, n.axis, n.aux[0],
                               input(0).shape()[static_cast<size_t>(n.axis)]));
        break;
      case Op::Exp:
        if (needs(0)) accum(n.in[0], mul(g, out));
        break;
      case Op::Log:
        if (needs(0)) accum(n.in[0], div(g, input(0)));
        break;
      case Op::Sin:
        if (needs(0)) accum(n.in[0], mul(g, cos(input(0))));
        break;
      case Op::Cos:
        if (needs(0)) accum(n.in[0], neg(mul(g, sin(input(0)))));
        break;
      case Op::Sqrt:
        if (needs(0)) accum(n.in[0], div(g, mul_scalar(out, 2.0)));
        break;
      case Op::Erf:
        if (needs(0))
          accum(n.in[0], mul(g, mul_scalar(exp(neg(square(input(0)))), kTwoOverSqrtPi)));
        break;
      case Op::Acos:
        if (needs(0)) {
          Value denom = sqrt(add_scalar(sub(scalar_const(1.0), square(input(0))), 1e-300));
          accum(n.in[0], neg(div(g, denom)));
        }
        break;
      case Op::Atan2: {
        Value y = input(0), x = input(1);
        Value denom = add_scalar(add(square(x), square(y)), 1e-300);
        if (needs(0)) accum(n.in[0], div(mul(g, x), denom));
        if (needs(1)) accum(n.in[1], neg(div(mul(g, y), denom)));
        break;
      }
      case Op::Relu: {
        if (!needs(0)) break;
        const Tensor& x = input(0).val();
        Tensor m(x.shape);
        for (size_t k = 0; k < m.data.size(); ++k) m.data[k] = x.data[k] > 0.0 ? 1.0 : 0.0;
        accum(n.in[0], mul(g, constant(std::move(m))));
        break;
      }
      case Op::Gelu: {
        if (!needs(0)) break;
        // d gelu = Phi(x) + x phi(x)
        Value x = input(0);
        Value phi_big = add_scalar(mul_scalar(erf(mul_scalar(x, kInvSqrt2)), 0.5), 0.5);
        Value gauss = mul_scalar(exp(mul_scalar(square(x), -0.5)), kInvSqrt2Pi);
        accum(n.in[0], mul(g, add(phi_big, mul(x, gauss))));
        break;
      }
      case Op::CosSin: {
        if (!needs(0)) break;
        // the forward output already holds cos x and sin x
        const int64_t c = input(0).shape()[1];
        Value cos_part = slice(out, 1, 0, c), sin_part = slice(out, 1, c, c);
        Value g_cos = slice(g, 1, 0, c), g_sin = slice(g, 1, c, c);
        accum(n.in[0], sub(mul(g_sin, cos_part), mul(g_cos, sin_part)));
        break;
      }
      case Op::ScalarMul:
        if (needs(0)) accum(n.in[0], mul_scalar(g, std::bit_cast<double>(n.aux[0])));
        break;
      case Op::ScalarAdd:
        if (needs(0)) accum(n.in[0], g);
        break;
    }
  }

  record_grad_ = saved;

  for (int i = 0; i <= L; ++i) {
    const Node& n = nodes_[static_cast<size_t>(i)];
    if (n.op == Op::Leaf && n.requires_grad && adj[static_cast<size_t>(i)] >= 0)
      gm.grads.emplace(i, Value(this, adj[static_cast<size_t>(i)]));
  }
  return gm;
}

std::unordered_map<int, Tensor> Tape::backward_values(Value loss) {
  const size_t mark = size();
  GradMap gm = backward(loss, false);
  std::unordered_map<int, Tensor> out;
  out.reserve(gm.grads.size());
  for (auto& [id, v] : gm.grads) out.emplace(id, v.val());
  truncate(mark);
  return out;
}

void Tape::truncate(size_t n) {
  if (n > nodes_.size()) throw std::logic_error("truncate: grows the tape");
  nodes_.resize(n);
}

void Tape::replay() {
  for (auto& n : nodes_)
    if (n.op != Op::Leaf) n.out = eval(n);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

double check_gradient(const std::function<Value(Tape&, Value)>& f, const Tensor& x, double h) {
  Tensor analytic(x.shape);
  {
    Tape t;
    Value leaf = t.leaf(x, true);
    Value y = f(t, leaf);
    if (numel(y.shape()) != 1)
      throw std::invalid_argument("check_gradient: function must be scalar-valued");
    GradMap gm = t.backward(y);
    if (gm.contains(leaf)) analytic = gm.at(leaf).val();
  }
  double worst = 0.0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    auto eval_at = [&](double v) {
      Tensor xv = x;
      xv.data[i] = v;
      Tape t;
      return f(t, t.leaf(xv, false)).scalar();
    };
    const double fd = (eval_at(x.data[i] + h) - eval_at(x.data[i] - h)) / (2.0 * h);
    const double rel = std::fabs(analytic.data[i] - fd) / (std::fabs(fd) + 1e-8);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace enfode
