#include "nlvc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace nlvc {

namespace {

thread_local Tape* t_active_tape = nullptr;
thread_local std::size_t t_max_alloc = 0;

std::atomic<std::uint64_t> g_generation{1};

void note_alloc(std::size_t n) { t_max_alloc = std::max(t_max_alloc, n); }

void check_shape(const Shape& shape, std::size_t n) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != n) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(n) +
                         " values");
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace alloc_audit {
void reset() { t_max_alloc = 0; }
std::size_t max_numel() { return t_max_alloc; }
}  // namespace alloc_audit

namespace detail {

std::vector<double>& TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(TensorNode&)> backward) {
  check_shape(shape, value.size());
  note_alloc(value.size());
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  Tape* tape = t_active_tape;
  if (tape != nullptr) {
    bool needs = false;
    for (const Tensor& p : parents) needs = needs || (p.defined() && p.requires_grad());
    if (needs) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
      node->backward = std::move(backward);
      tape->record(node);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace detail

Tensor::Tensor(Shape shape, double fill) {
  const std::size_t n = shape_numel(shape);
  check_shape(shape, n);
  note_alloc(n);
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->value.assign(n, fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  check_shape(shape, values.size());
  note_alloc(values.size());
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw UsageError("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range");
  return s[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<double> Tensor::values() {
  if (!node_) throw UsageError("undefined tensor");
  return node_->value;
}

std::span<const double> Tensor::values() const {
  if (!node_) throw UsageError("undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor with shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_) throw UsageError("undefined tensor");
  if (node_->backward) throw UsageError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (!node_) throw UsageError("undefined tensor");
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

bool Tensor::on_tape() const { return node_ && node_->tape != nullptr && node_->backward; }

std::uint64_t Tensor::generation() const { return node_ ? node_->generation : 0; }

// ---------------------------------------------------------------------------

Tape::Tape() : generation_(g_generation.fetch_add(1)) {}

Tape::~Tape() {
  for (auto& n : nodes_) n->tape = nullptr;
}

void Tape::record(const std::shared_ptr<detail::TensorNode>& node) {
  node->tape = this;
  node->order = nodes_.size();
  node->generation = generation_;
  nodes_.push_back(node);
  peak_ = std::max(peak_, nodes_.size());
}

void Tape::clear() {
  for (auto& n : nodes_) n->tape = nullptr;
  nodes_.clear();
  generation_ = g_generation.fetch_add(1);
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw UsageError("backward() requires a scalar root");
  }
  detail::TensorNode* r = root.node();
  if (r->tape != this || !r->backward) throw UsageError("backward() root is not on this tape");
  const std::size_t top = r->order;
  for (std::size_t i = 0; i <= top; ++i) nodes_[i]->grad.clear();
  r->ensure_grad()[0] = 1.0;
  for (std::size_t i = top + 1; i-- > 0;) {
    detail::TensorNode& n = *nodes_[i];
    if (!n.grad.empty() && n.backward) n.backward(n);
  }
}

std::size_t Tape::cross_generation_edges() const {
  std::size_t count = 0;
  for (const auto& n : nodes_) {
    for (const auto& p : n->parents) {
      if (p->backward && p->generation != generation_) ++count;
    }
  }
  return count;
}

TapeScope::TapeScope(Tape* tape) : previous_(t_active_tape) { t_active_tape = tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

Tape* active_tape() { return t_active_tape; }

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw UsageError("backward() requires a scalar root");
  }
  Tape* tape = root.node()->tape;
  if (tape == nullptr || !root.node()->backward) {
    throw UsageError("backward() root was not recorded on a tape");
  }
  tape->backward(root);
}

}  // namespace nlvc
