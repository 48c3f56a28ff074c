#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace prdlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

using ParentList = std::vector<std::shared_ptr<TensorImpl>>;
using BackwardFn = std::function<void(TensorImpl& out, const ParentList& parents)>;

// One recorded operation: its inputs and how to push the output gradient
// back into them.
struct Node {
  const char* op = "";
  ParentList parents;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::shared_ptr<Node> node;

  std::vector<double>& grad_buffer();
};

// Dense row-major array of doubles with an optional reverse-mode graph.
//
// Tensor is a cheap shared handle. Values are never mutated by operations;
// only leaves (parameters) may be assigned new values between graphs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  // Gradient buffer of a leaf after backward(); zeros if nothing reached it.
  std::vector<double> grad() const;
  void zero_grad();

  // Overwrites the values of a leaf tensor (optimizer updates).
  void assign(std::span<const double> values);

  // Same values, no graph, no gradient tracking.
  Tensor detach() const;

  // Reverse-mode sweep from a scalar. Leaves accumulate dLoss/dLeaf into their
  // grad buffers; the intermediate graph is released afterwards.
  void backward() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape, std::vector<double>, ParentList, BackwardFn, const char*);

  std::shared_ptr<TensorImpl> impl_;
};

// Creates an op output; records a graph node only when some parent tracks
// gradients and grad mode is enabled on this thread.
Tensor make_result(Shape shape, std::vector<double> values, ParentList parents, BackwardFn backward,
                   const char* op);

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);

// (n x m) + (m) broadcast over rows.
Tensor add_row(const Tensor& matrix, const Tensor& row);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Reduction keeping the axis with extent 1.
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
Tensor logsumexp(const Tensor& x, std::size_t axis);

// Scales every slice along `axis` to unit L2 norm. Throws "zero-norm vector"
// when a slice norm is at or below 1e-12.
Tensor l2_normalize(const Tensor& v, std::size_t axis);

// out[i] = a.flat[index[i]], or 0 where index[i] < 0. Backward scatter-adds.
Tensor gather(const Tensor& a, std::vector<std::int64_t> index, Shape out_shape);
Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::int64_t>> index, Shape out_shape);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);

// Log-sum-exp over consecutive runs of a flat tensor; output has one entry
// per run length.
Tensor segment_logsumexp(const Tensor& x, std::span<const std::size_t> lengths);

}  // namespace prdlab
