#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "enfode/tensor.hpp"

namespace enfode {

class Tape;

/// Handle to one node on a Tape. Valid while the tape lives and has not
/// been truncated past the node.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, int id) : tape_(tape), id_(id) {}

  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

  const Tensor& val() const;
  const Shape& shape() const;
  bool requires_grad() const;
  double scalar() const;  // errors unless numel == 1

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Gradients keyed by node id, as returned by Tape::backward.
struct GradMap {
  std::unordered_map<int, Value> grads;

  bool contains(const Value& v) const { return grads.count(v.id()) > 0; }
  /// Gradient of `leaf`; errors if the loss did not reach it.
  Value at(const Value& leaf) const;
  /// Gradient of `leaf`, or a zero constant of the same shape.
  Value at_or_zero(const Value& leaf, Tape& tape) const;
};

/// Reverse-mode tape over dense f64 tensors.
///
/// Nodes are appended in execution order, so the node vector is already a
/// topological order and backward is a single reverse sweep. Backward
/// rules are themselves expressed through the forward-op API: with
/// create_graph=true the adjoint computations are recorded with gradient
/// tracking, so a second backward differentiates through them; with
/// create_graph=false they are recorded detached, which is the
/// first-order Meta-SGD path.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // -- node creation ------------------------------------------------------
  Value leaf(Tensor t, bool requires_grad = false);
  Value constant(Tensor t) { return leaf(std::move(t), false); }
  Value scalar_const(double v) { return constant(Tensor::scalar(v)); }

  // -- primitive ops (all with closed-form backward rules) ----------------
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value div(Value a, Value b);
  Value neg(Value a);
  Value matmul(Value a, Value b);     // 2-D only
  Value matmul_nt(Value a, Value b);  // A B^T without materializing the transpose
  Value matmul_tn(Value a, Value b);  // A^T B
  Value transpose(Value a);           // 2-D only
  Value reshape(Value a, Shape s);
  Value broadcast_to(Value a, Shape s);
  Value sum(Value a, int axis, bool keepdims = false);
  Value concat(const std::vector<Value>& parts, int axis);
  Value slice(Value a, int axis, int64_t start, int64_t len);
  /// Inverse scatter of slice: places `a` into zeros of shape `full` at
  /// `start` along `axis`. (The backward rule of slice; exposed because
  /// its own backward rule is slice again.)
  Value pad_slice(Value a, int axis, int64_t start, int64_t full_len);
  Value exp(Value a);
  Value log(Value a);
  Value sin(Value a);
  Value cos(Value a);
  Value sqrt(Value a);
  Value erf(Value a);
  Value acos(Value a);
  Value atan2(Value y, Value x);
  Value relu(Value a);
  Value gelu(Value a);     // exact erf form, fused kernel
  Value cos_sin(Value a);  // [cos x, sin x] concatenated along axis 1

  // -- composites ----------------------------------------------------------
  Value add_scalar(Value a, double c);
  Value mul_scalar(Value a, double c);
  Value square(Value a) { return mul(a, a); }
  Value sum_all(Value a);
  Value mean(Value a, int axis, bool keepdims = false);
  Value mean_all(Value a);
  Value softmax(Value a, int axis);
  Value layer_norm(Value a, int axis, Value gamma, Value beta);  // variance floor 1e-6
  Value mse(Value pred, Value target);
  Value detach(Value a) { return constant(a.val()); }
  /// affine x @ W^T + b with W (out,in), b (out)
  Value linear(Value x, Value w, Value b);

  /// Dynamic dispatch over the supported op vocabulary; `axis` applies to
  /// concat/sum/mean/softmax/layer_norm. Used by op-coverage tests.
  Value apply(const std::string& op_kind, const std::vector<Value>& inputs, int axis = -1);

  // -- autodiff ------------------------------------------------------------
  /// Reverse sweep from a scalar loss. Returns adjoints for every
  /// requires_grad leaf the loss reaches. Accumulation order is fixed by
  /// tape order, so results are deterministic.
  GradMap backward(Value loss, bool create_graph = false);
  /// backward + copy out leaf gradients, then truncate the tape back to
  /// its pre-call size (frees all adjoint scratch).
  std::unordered_map<int, Tensor> backward_values(Value loss);

  // -- tape management -----------------------------------------------------
  size_t size() const { return nodes_.size(); }
  void truncate(size_t n);
  /// Recompute every non-leaf forward value in order. Bitwise identical
  /// results are a determinism guarantee (tested).
  void replay();

  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].out; }
  bool node_requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

 private:
  enum class Op : uint8_t {
    Leaf, Add, Sub, Mul, Div, Neg, Matmul, Transpose, Reshape, Broadcast,
    Sum, Concat, Slice, PadSlice, Exp, Log, Sin, Cos, Sqrt, Erf, Acos,
    Atan2, Relu, Gelu, CosSin, ScalarMul, ScalarAdd,
  };

  struct Node {
    Op op = Op::Leaf;
    bool requires_grad = false;
    int axis = -1;
    std::vector<int> in;
    std::vector<int64_t> aux;  // op parameters (slice bounds, target shape)
    Tensor out;
  };

  Value push(Node n);
  Value unary(Op op, Value a, Tensor out);
  std::pair<Value, Value> broadcast_pair(Value a, Value b);
  Tensor eval(const Node& n) const;  // forward kernel dispatch (for replay)
  void check_same_tape(Value v) const;

  std::vector<Node> nodes_;
  bool record_grad_ = true;  // cleared during first-order backward sweeps
};

/// Max over coordinates of |analytic - central difference| /
/// (|central difference| + 1e-8) for a scalar function of one tensor.
double check_gradient(const std::function<Value(Tape&, Value)>& f, const Tensor& x,
                      double h = 1e-5);

}  // namespace enfode
