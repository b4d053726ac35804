#include "eface/autograd.hpp"

#include <unordered_set>

#include "eface/errors.hpp"

namespace eface {

namespace {
thread_local bool g_grad_enabled = true;
thread_local OpRecorder* g_recorder = nullptr;
}  // namespace

Parameter& ParamStore::create(std::string name, Shape shape, bool decay) {
  if (by_name_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = Tensor(shape);
  p->grad = Tensor(shape);
  p->decay = decay;
  Parameter& ref = *p;
  by_name_.emplace(ref.name, &ref);
  params_.push_back(std::move(p));
  return ref;
}

Parameter* ParamStore::find(std::string_view name) {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParamStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? nullptr : it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p->value.size();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  return grad;
}

Var constant(Tensor value) { return std::make_shared<Node>(std::move(value)); }

Var variable(Tensor value) {
  auto v = std::make_shared<Node>(std::move(value));
  v->requires_grad = true;
  return v;
}

Var make_op(Tensor value, std::vector<Var> inputs, bool uses_parameters, std::function<void(Node&)> backward_fn) {
  auto out = std::make_shared<Node>(std::move(value));
  if (!g_grad_enabled) return out;
  bool needs = uses_parameters;
  for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (!needs) return out;
  out->requires_grad = true;
  out->inputs = std::move(inputs);
  out->backward_fn = std::move(backward_fn);
  return out;
}

void backward(const Var& root, double seed) {
  if (!root->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer().fill(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn(*node);
      // Intermediate gradients are dead once propagated.
      if (node != root.get()) node->grad = Tensor();
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

OpRecorder* active_recorder() { return g_recorder; }

RecorderScope::RecorderScope(OpRecorder& rec) : previous_(g_recorder) { g_recorder = &rec; }
RecorderScope::~RecorderScope() { g_recorder = previous_; }

}  // namespace eface
