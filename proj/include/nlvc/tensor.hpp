#pragma once

// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// Operations record onto the tape that is active on the calling thread (see
// TapeScope) whenever at least one operand requires a gradient. With no active
// tape, operations are plain value computations. Each thread owns its tapes, so
// independent graphs can be evaluated concurrently.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nlvc/errors.hpp"

namespace nlvc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;
class Tensor;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;

  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;
  Tape* tape = nullptr;
  std::size_t order = 0;
  std::uint64_t generation = 0;

  std::vector<double>& ensure_grad();
  bool wants_grad() const { return requires_grad; }
};

// Builds an op output. Records it (with `backward`) on the active tape if any
// parent requires a gradient; otherwise the closure is discarded.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(TensorNode&)> backward);

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  // Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> values();
  std::span<const double> values() const;
  double value(std::size_t flat_index) const { return values()[flat_index]; }
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  // Zero-filled view if nothing has flowed back yet.
  std::vector<double> grad() const;
  void zero_grad();

  // Value copy detached from any graph.
  Tensor detach() const;
  bool on_tape() const;
  std::uint64_t generation() const;

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor detail::make_result(Shape, std::vector<double>, std::vector<Tensor>,
                                    std::function<void(detail::TensorNode&)>);
};

// Ordered record of differentiable operations. Recording order is a
// topological order, so backward() walks it once in reverse.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  std::size_t size() const { return nodes_.size(); }
  std::size_t peak_size() const { return peak_; }
  void reset_peak() { peak_ = nodes_.size(); }
  std::uint64_t generation() const { return generation_; }

  // Drops every recorded node and starts a new generation.
  void clear();

  // Populates gradients of every requires_grad tensor that `root` depends on.
  void backward(const Tensor& root);

  // Number of recorded parent edges pointing at non-leaf nodes from an older
  // generation. Non-zero means a graph leaked across a clear() boundary.
  std::size_t cross_generation_edges() const;

 private:
  friend Tensor detail::make_result(Shape, std::vector<double>, std::vector<Tensor>,
                                    std::function<void(detail::TensorNode&)>);
  void record(const std::shared_ptr<detail::TensorNode>& node);

  std::vector<std::shared_ptr<detail::TensorNode>> nodes_;
  std::size_t peak_ = 0;
  std::uint64_t generation_;
};

// Makes `tape` the active tape of this thread for the scope's lifetime.
// Passing nullptr disables recording (inference).
class TapeScope {
 public:
  explicit TapeScope(Tape* tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape* previous_;
};

Tape* active_tape();

// backward() on the tape the root was recorded on. Root must be a scalar.
void backward(const Tensor& root);

// Largest tensor (in elements) created on this thread since reset().
namespace alloc_audit {
void reset();
std::size_t max_numel();
}  // namespace alloc_audit

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops accept equal shapes or a one-element
// operand on either side.

inline constexpr double kDefaultLeakySlope = 0.01;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor leaky_relu(const Tensor& x, double slope = kDefaultLeakySlope);
Tensor softplus(const Tensor& x);

// x: C×H×W scaled per pixel by m: 1×H×W.
Tensor mul_plane(const Tensor& x, const Tensor& m);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank 2
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, std::size_t axis);

// Concatenation / slicing along axis 0 (the channel axis for C×H×W).
Tensor concat(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& x, std::size_t begin, std::size_t count);

// C×H×W ↔ (H·W)×C row layouts used by attention.
Tensor chw_to_rows(const Tensor& x);
Tensor rows_to_chw(const Tensor& rows, std::size_t height, std::size_t width);

// x: C_in×H×W, w: C_out×C_in×k×k, bias: C_out (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);
// Grouped with groups = C: w is C×1×k×k.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        std::size_t padding);

// 2×2 average pool; requires even spatial extents.
Tensor down2(const Tensor& x);
// Bilinear ×2 upsample with half-pixel centres and edge clamping.
Tensor up2(const Tensor& x);

}  // namespace nlvc
