#pragma once

// Reverse-mode differentiation over Tensor values.
//
// A forward pass builds a graph of Nodes. Parameters are not graph nodes:
// ops that consume a Parameter accumulate straight into Parameter::grad
// during backward(). When gradients are disabled (NoGradGuard) ops keep
// no inputs or closures, so inference holds only live activations.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "eface/tensor.hpp"

namespace eface {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;  // subject to decoupled weight decay
};

// Owns every learnable array of a model. Addresses are stable for the
// lifetime of the store, layers keep raw pointers into it.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& create(std::string name, Shape shape, bool decay = true);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

class Node {
 public:
  explicit Node(Tensor v) : value(std::move(v)) {}

  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  const Shape& shape() const { return value.shape(); }
  // Gradient buffer, zero-allocated on first use.
  Tensor& grad_buffer();
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
// Leaf whose gradient is kept after backward(); used for input sensitivities.
Var variable(Tensor value);

// Creates an op result. The closure and inputs are retained only when
// gradients are enabled and some input (or a parameter) needs them.
Var make_op(Tensor value, std::vector<Var> inputs, bool uses_parameters, std::function<void(Node&)> backward_fn);

void backward(const Var& root, double seed = 1.0);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Cost accounting hook. Layers report themselves while a recorder is active.
struct OpRecord {
  std::string_view name;
  std::string_view kind;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

class OpRecorder {
 public:
  virtual ~OpRecorder() = default;
  virtual void record(const OpRecord& rec) = 0;
};

OpRecorder* active_recorder();

class RecorderScope {
 public:
  explicit RecorderScope(OpRecorder& rec);
  ~RecorderScope();
  RecorderScope(const RecorderScope&) = delete;
  RecorderScope& operator=(const RecorderScope&) = delete;

 private:
  OpRecorder* previous_;
};

}  // namespace eface
