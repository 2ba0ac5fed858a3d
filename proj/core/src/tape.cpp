#include "dynroute/tape.hpp"

#include <algorithm>

#include "dynroute/errors.hpp"

namespace dynroute {

Parameter& ParameterSet::add(std::string name, Shape shape) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter " + name);
  index_.emplace(name, params_.size());
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = Tensor(shape);
  p->grad = Tensor(std::move(shape));
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return *params_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return *params_[it->second];
}

bool ParameterSet::contains(const std::string& name) const {
  return index_.contains(name);
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Entry e;
  e.value = std::move(value);
  entries_.push_back(std::move(e));
  return Var{this, static_cast<int>(entries_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
  Entry e;
  e.value = std::move(value);
  e.requires_grad = recording_;
  entries_.push_back(std::move(e));
  return Var{this, static_cast<int>(entries_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_params_.find(&p); it != bound_params_.end()) {
    return Var{this, it->second};
  }
  Entry e;
  e.value = p.value;
  e.requires_grad = recording_;
  e.param = &p;
  entries_.push_back(std::move(e));
  const int id = static_cast<int>(entries_.size()) - 1;
  bound_params_.emplace(&p, id);
  return Var{this, id};
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  Entry e;
  e.value = std::move(value);
  if (recording_) {
    e.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](int i) { return requires_grad(i); });
    if (e.requires_grad) e.backward = std::move(backward);
  }
  entries_.push_back(std::move(e));
  return Var{this, static_cast<int>(entries_.size()) - 1};
}

Tensor& Tape::grad(int id) {
  Entry& e = entries_[static_cast<std::size_t>(id)];
  if (!e.grad_allocated) {
    e.grad = Tensor::zeros_like(e.value);
    e.grad_allocated = true;
  }
  return e.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("backward: loss belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " +
                     shape_to_string(value(loss.id).shape()));
  }
  if (!requires_grad(loss.id)) return;
  grad(loss.id)[0] += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Entry& e = entries_[static_cast<std::size_t>(id)];
    if (!e.grad_allocated) continue;
    if (e.backward) {
      e.backward(*this, id);
    } else if (e.param != nullptr) {
      auto dst = e.param->grad.data();
      auto src = e.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

}  // namespace dynroute
