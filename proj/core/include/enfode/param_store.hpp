#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "enfode/tape.hpp"
#include "enfode/tensor.hpp"

namespace enfode {

/// Named parameter map with deterministic iteration order (registration
/// order). Non-trainable entries (e.g. fixed RFF frequency banks) ride
/// along in checkpoints but are skipped by optimizers.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor value, bool trainable = true);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

using NamedGrads = std::unordered_map<std::string, Tensor>;

/// p <- p - rate * g for every trainable entry. Missing gradient keys are
/// an error. `rate` may be a single scalar or a per-name rule.
void sgd_step(ParamStore& params, const NamedGrads& grads, double rate);
void sgd_step(ParamStore& params, const NamedGrads& grads,
              const std::function<double(const std::string&)>& rate);

/// Adam with bias correction; beta = (0.9, 0.999), eps 1e-8.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, const NamedGrads& grads,
            const std::function<double(const std::string&)>& lr);

 private:
  struct Slot {
    Tensor m, v;
  };
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::unordered_map<std::string, Slot> slots_;
};

/// Leaves for every store entry on a tape. Trainable entries get
/// requires_grad as requested; fixed entries are always constants.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(Tape& tape, const ParamStore& store, bool requires_grad);

  Value at(const std::string& name) const;
  /// Collect per-name gradient tensors out of a backward_values result;
  /// entries the loss did not reach come back as zeros.
  NamedGrads named_grads(const std::unordered_map<int, Tensor>& by_id) const;

 private:
  std::vector<std::pair<std::string, Value>> vars_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace enfode
