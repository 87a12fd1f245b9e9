#include "enfode/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace enfode {

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{name, std::move(value), trainable});
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return entries_[it->second].value;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return entries_[it->second].value;
}

void sgd_step(ParamStore& params, const NamedGrads& grads, double rate) {
  sgd_step(params, grads, [rate](const std::string&) { return rate; });
}

void sgd_step(ParamStore& params, const NamedGrads& grads,
              const std::function<double(const std::string&)>& rate) {
  for (auto& e : const_cast<std::vector<ParamStore::Entry>&>(params.entries())) {
    if (!e.trainable) continue;
    auto it = grads.find(e.name);
    if (it == grads.end())
      throw std::invalid_argument("sgd_step: missing gradient for " + e.name);
    const Tensor& g = it->second;
    if (g.shape != e.value.shape)
      throw std::invalid_argument("sgd_step: gradient shape mismatch for " + e.name);
    const double r = rate(e.name);
    for (size_t i = 0; i < e.value.data.size(); ++i) e.value.data[i] -= r * g.data[i];
  }
}

void Adam::step(ParamStore& params, const NamedGrads& grads,
                const std::function<double(const std::string&)>& lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& e : const_cast<std::vector<ParamStore::Entry>&>(params.entries())) {
    if (!e.trainable) continue;
    auto it = grads.find(e.name);
    if (it == grads.end()) throw std::invalid_argument("Adam: missing gradient for " + e.name);
    const Tensor& g = it->second;
    if (g.shape != e.value.shape)
      throw std::invalid_argument("Adam: gradient shape mismatch for " + e.name);
    Slot& s = slots_[e.name];
    if (s.m.data.empty()) {
      s.m = Tensor(e.value.shape);
      s.v = Tensor(e.value.shape);
    }
    const double r = lr(e.name);
    for (size_t i = 0; i < e.value.data.size(); ++i) {
      const double gi = g.data[i];
      s.m.data[i] = beta1_ * s.m.data[i] + (1.0 - beta1_) * gi;
      s.v.data[i] = beta2_ * s.v.data[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = s.m.data[i] / bc1;
      const double vhat = s.v.data[i] / bc2;
      e.value.data[i] -= r * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

BoundParams::BoundParams(Tape& tape, const ParamStore& store, bool requires_grad) {
  vars_.reserve(store.size());
  for (const auto& e : store.entries()) {
    Value v = tape.leaf(e.value, requires_grad && e.trainable);
    index_.emplace(e.name, vars_.size());
    vars_.emplace_back(e.name, v);
  }
}

Value BoundParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("BoundParams: unknown name " + name);
  return vars_[it->second].second;
}

NamedGrads BoundParams::named_grads(const std::unordered_map<int, Tensor>& by_id) const {
  NamedGrads out;
  out.reserve(vars_.size());
  for (const auto& [name, v] : vars_) {
    auto it = by_id.find(v.id());
    if (it != by_id.end())
      out.emplace(name, it->second);
    else
      out.emplace(name, Tensor(v.shape()));
  }
  return out;
}

}  // namespace enfode
