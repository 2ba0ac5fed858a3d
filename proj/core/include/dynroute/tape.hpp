#ifndef DYNROUTE_TAPE_HPP_
#define DYNROUTE_TAPE_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynroute/tensor.hpp"

namespace dynroute {

// A trainable tensor with its accumulated gradient. Owned by a ParameterSet.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Ordered, name-addressable collection of parameters. Pointers handed out by
// add() stay valid for the lifetime of the set.
class ParameterSet {
 public:
  Parameter& add(std::string name, Shape shape);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Entries are appended in execution order, so every
// entry's inputs have smaller ids and a reverse sweep is a valid topological
// traversal.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  // Untracked input.
  Var constant(Tensor value);
  // Tracked input whose gradient is read back with grad().
  Var leaf(Tensor value);
  // Binds a parameter; repeated binds within a tape return the same Var.
  // Gradients are accumulated into Parameter::grad by backward().
  Var param(Parameter& p);

  // Appends an op result. The backward rule is dropped when no input needs
  // a gradient or recording is off.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  const Tensor& value(int id) const { return entries_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const {
    return entries_[static_cast<std::size_t>(id)].requires_grad;
  }
  // Gradient buffer of an entry, allocated as zeros on first access.
  Tensor& grad(int id);
  bool has_grad(int id) const {
    return entries_[static_cast<std::size_t>(id)].grad_allocated;
  }

  // Populates gradients of every tracked entry reachable from `loss`.
  // Throws UsageError if `loss` is not a single-element tensor.
  void backward(Var loss);

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
    bool grad_allocated = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  bool recording_;
  std::vector<Entry> entries_;
  std::unordered_map<const Parameter*, int> bound_params_;
};

}  // namespace dynroute

#endif  // DYNROUTE_TAPE_HPP_
