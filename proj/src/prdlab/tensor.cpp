#include "prdlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "prdlab/error.hpp"

namespace prdlab {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kNormEpsilon = 1e-12;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw InvalidArgument("axis " + std::to_string(axis) + " out of range for shape " +
                          shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw InvalidArgument(std::string(op) + ": expected a matrix, got shape " +
                          shape_str(a.shape()));
  }
}

void require_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument(std::string(op) + ": non-finite input");
  }
}

// Applies f(parent_grad, out_grad, index) to a tracked parent.
template <typename F>
void accumulate(TensorImpl& parent, F&& f) {
  if (!parent.requires_grad) return;
  f(parent.grad_buffer());
}

Tensor unary(const Tensor& a, const char* op, double (*fwd)(double),
             double (*dfdx)(double x, double y)) {
  std::vector<double> out(a.numel());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(a.shape(), std::move(out), {a.impl()},
                     [dfdx](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += o.grad[i] * dfdx(p[0]->data[i], o.data[i]);
                       });
                     },
                     op);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw InvalidArgument("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape.empty()) throw InvalidArgument("tensor shape must have at least one dimension");
  if (shape_numel(shape) != values.size()) {
    throw InvalidArgument("tensor shape " + shape_str(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw InvalidArgument("dim: axis out of range");
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->data[row * impl_->shape.back() + col];
}

double Tensor::item() const {
  if (numel() != 1) throw InvalidArgument("item() on a tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

bool Tensor::is_leaf() const { return impl_->node == nullptr; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

void Tensor::assign(std::span<const double> values) {
  if (!is_leaf()) throw InvalidArgument("assign() is only valid on leaf tensors");
  if (values.size() != numel()) throw InvalidArgument("assign(): size mismatch");
  std::copy(values.begin(), values.end(), impl_->data.begin());
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw InvalidArgument("backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  if (!impl_->node && !impl_->requires_grad) {
    throw InvalidArgument("backward() on a tensor detached from any computation graph");
  }

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->parents.size()) {
      TensorImpl* p = t->node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  impl_->grad_buffer();
  impl_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (!t->node || t->grad.empty()) continue;
    t->node->backward(*t, t->node->parents);
  }
  for (TensorImpl* t : order) {
    if (t->node) {
      t->node.reset();
      t->grad.clear();
      t->grad.shrink_to_fit();
    }
  }
}

Tensor make_result(Shape shape, std::vector<double> values, ParentList parents, BackwardFn backward,
                   const char* op) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  if (g_grad_enabled) {
    const bool track = std::any_of(parents.begin(), parents.end(),
                                   [](const auto& p) { return p->requires_grad; });
    if (track) {
      impl->requires_grad = true;
      auto node = std::make_shared<Node>();
      node->op = op;
      node->parents = std::move(parents);
      node->backward = std::move(backward);
      impl->node = std::move(node);
    }
  }
  return Tensor(std::move(impl));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a.impl(), b.impl()},
                     [](TensorImpl& o, const ParentList& p) {
                       for (int k = 0; k < 2; ++k) {
                         accumulate(*p[k], [&](std::vector<double>& g) {
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                         });
                       }
                     },
                     "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a.impl(), b.impl()},
                     [](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       });
                       accumulate(*p[1], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                       });
                     },
                     "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a.impl(), b.impl()},
                     [](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * p[1]->data[i];
                       });
                       accumulate(*p[1], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * p[0]->data[i];
                       });
                     },
                     "mul");
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result(a.shape(), std::move(out), {a.impl()},
                     [factor](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
                       });
                     },
                     "scale");
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + value;
  return make_result(a.shape(), std::move(out), {a.impl()},
                     [](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       });
                     },
                     "add_scalar");
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw InvalidArgument("log: input must be positive");
  }
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor add_row(const Tensor& matrix, const Tensor& row) {
  require_rank2(matrix, "add_row");
  const std::size_t n = matrix.dim(0);
  const std::size_t m = matrix.dim(1);
  if (row.numel() != m) {
    throw InvalidArgument("add_row: row of " + std::to_string(row.numel()) +
                          " values does not match width " + std::to_string(m));
  }
  std::vector<double> out(n * m);
  const auto md = matrix.data();
  const auto rd = row.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = md[i * m + j] + rd[j];
  return make_result(matrix.shape(), std::move(out), {matrix.impl(), row.impl()},
                     [n, m](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       });
                       accumulate(*p[1], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < m; ++j) g[j] += o.grad[i * m + j];
                       });
                     },
                     "add_row");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t n = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t m = b.dim(1);
  if (b.dim(0) != k) {
    throw InvalidArgument("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
  }
  std::vector<double> out(n * m, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ad[i * k + t];
      const double* brow = bd + t * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result({n, m}, std::move(out), {a.impl(), b.impl()},
                     [n, k, m](TensorImpl& o, const ParentList& p) {
                       const double* go = o.grad.data();
                       // dA = dC * B^T
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         const double* bd = p[1]->data.data();
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t t = 0; t < k; ++t) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < m; ++j) acc += go[i * m + j] * bd[t * m + j];
                             g[i * k + t] += acc;
                           }
                         }
                       });
                       // dB = A^T * dC
                       accumulate(*p[1], [&](std::vector<double>& g) {
                         const double* ad = p[0]->data.data();
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t t = 0; t < k; ++t) {
                             const double av = ad[i * k + t];
                             double* grow = g.data() + t * m;
                             for (std::size_t j = 0; j < m; ++j) grow[j] += av * go[i * m + j];
                           }
                         }
                       });
                     },
                     "matmul");
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t n = a.dim(0);
  const std::size_t m = a.dim(1);
  std::vector<double> out(n * m);
  const auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = ad[i * m + j];
  return make_result({m, n}, std::move(out), {a.impl()},
                     [n, m](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < m; ++j) g[i * m + j] += o.grad[j * n + i];
                       });
                     },
                     "transpose");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw InvalidArgument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a.impl()},
                     [](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                       });
                     },
                     "reshape");
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {a.impl()},
                     [](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (double& x : g) x += o.grad[0];
                       });
                     },
                     "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = 1;
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto ad = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.len; ++i)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += ad[(o * s.len + i) * s.inner + in];
  return make_result(std::move(shape), std::move(out), {a.impl()},
                     [s](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t ou = 0; ou < s.outer; ++ou)
                           for (std::size_t i = 0; i < s.len; ++i)
                             for (std::size_t in = 0; in < s.inner; ++in)
                               g[(ou * s.len + i) * s.inner + in] += o.grad[ou * s.inner + in];
                       });
                     },
                     "sum_axis");
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  require_finite(x.data(), "softmax");
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.len; ++i) mx = std::max(mx, xd[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) {
        const double e = std::exp(xd[base + i * s.inner] - mx);
        out[base + i * s.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < s.len; ++i) out[base + i * s.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {x.impl()},
                     [s](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t ou = 0; ou < s.outer; ++ou) {
                           for (std::size_t in = 0; in < s.inner; ++in) {
                             const std::size_t base = ou * s.len * s.inner + in;
                             double inner_prod = 0.0;
                             for (std::size_t i = 0; i < s.len; ++i) {
                               const std::size_t at = base + i * s.inner;
                               inner_prod += o.grad[at] * o.data[at];
                             }
                             for (std::size_t i = 0; i < s.len; ++i) {
                               const std::size_t at = base + i * s.inner;
                               g[at] += o.data[at] * (o.grad[at] - inner_prod);
                             }
                           }
                         }
                       });
                     },
                     "softmax");
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  require_finite(x.data(), "log_softmax");
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.len; ++i) mx = std::max(mx, xd[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) total += std::exp(xd[base + i * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t i = 0; i < s.len; ++i) out[base + i * s.inner] = xd[base + i * s.inner] - lse;
    }
  }
  return make_result(x.shape(), std::move(out), {x.impl()},
                     [s](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t ou = 0; ou < s.outer; ++ou) {
                           for (std::size_t in = 0; in < s.inner; ++in) {
                             const std::size_t base = ou * s.len * s.inner + in;
                             double gsum = 0.0;
                             for (std::size_t i = 0; i < s.len; ++i) gsum += o.grad[base + i * s.inner];
                             for (std::size_t i = 0; i < s.len; ++i) {
                               const std::size_t at = base + i * s.inner;
                               g[at] += o.grad[at] - std::exp(o.data[at]) * gsum;
                             }
                           }
                         }
                       });
                     },
                     "log_softmax");
}

Tensor logsumexp(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  require_finite(x.data(), "logsumexp");
  Shape shape = x.shape();
  shape[axis] = 1;
  std::vector<double> out(s.outer * s.inner);
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.len; ++i) mx = std::max(mx, xd[base + i * s.inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) total += std::exp(xd[base + i * s.inner] - mx);
      out[o * s.inner + in] = mx + std::log(total);
    }
  }
  return make_result(std::move(shape), std::move(out), {x.impl()},
                     [s](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         const auto& xd = p[0]->data;
                         for (std::size_t ou = 0; ou < s.outer; ++ou) {
                           for (std::size_t in = 0; in < s.inner; ++in) {
                             const double lse = o.data[ou * s.inner + in];
                             const double go = o.grad[ou * s.inner + in];
                             const std::size_t base = ou * s.len * s.inner + in;
                             for (std::size_t i = 0; i < s.len; ++i) {
                               const std::size_t at = base + i * s.inner;
                               g[at] += go * std::exp(xd[at] - lse);
                             }
                           }
                         }
                       });
                     },
                     "logsumexp");
}

Tensor l2_normalize(const Tensor& v, std::size_t axis) {
  const AxisSplit s = split_axis(v.shape(), axis);
  std::vector<double> out(v.numel());
  std::vector<double> norms(s.outer * s.inner);
  const auto vd = v.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double sq = 0.0;
      for (std::size_t i = 0; i < s.len; ++i) sq += vd[base + i * s.inner] * vd[base + i * s.inner];
      const double norm = std::sqrt(sq);
      if (!(norm > kNormEpsilon)) throw InvalidArgument("l2_normalize: zero-norm vector");
      norms[o * s.inner + in] = norm;
      for (std::size_t i = 0; i < s.len; ++i) out[base + i * s.inner] = vd[base + i * s.inner] / norm;
    }
  }
  return make_result(v.shape(), std::move(out), {v.impl()},
                     [s, norms = std::move(norms)](TensorImpl& o, const ParentList& p) {
                       // d(v/|v|) = (g - y <g, y>) / |v|
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         for (std::size_t ou = 0; ou < s.outer; ++ou) {
                           for (std::size_t in = 0; in < s.inner; ++in) {
                             const std::size_t base = ou * s.len * s.inner + in;
                             const double norm = norms[ou * s.inner + in];
                             double proj = 0.0;
                             for (std::size_t i = 0; i < s.len; ++i) {
                               const std::size_t at = base + i * s.inner;
                               proj += o.grad[at] * o.data[at];
                             }
                             for (std::size_t i = 0; i < s.len; ++i) {
                               const std::size_t at = base + i * s.inner;
                               g[at] += (o.grad[at] - o.data[at] * proj) / norm;
                             }
                           }
                         }
                       });
                     },
                     "l2_normalize");
}

Tensor gather(const Tensor& a, std::vector<std::int64_t> index, Shape out_shape) {
  return gather(a, std::make_shared<const std::vector<std::int64_t>>(std::move(index)),
                std::move(out_shape));
}

Tensor gather(const Tensor& a, std::shared_ptr<const std::vector<std::int64_t>> index,
              Shape out_shape) {
  if (!index || shape_numel(out_shape) != index->size()) {
    throw InvalidArgument("gather: index count does not match output shape " + shape_str(out_shape));
  }
  const auto n = static_cast<std::int64_t>(a.numel());
  std::vector<double> out(index->size());
  const auto ad = a.data();
  for (std::size_t i = 0; i < index->size(); ++i) {
    const std::int64_t at = (*index)[i];
    if (at >= n) throw InvalidArgument("gather: index out of range");
    out[i] = at < 0 ? 0.0 : ad[static_cast<std::size_t>(at)];
  }
  return make_result(std::move(out_shape), std::move(out), {a.impl()},
                     [index = std::move(index)](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         const auto& idx = *index;
                         for (std::size_t i = 0; i < idx.size(); ++i) {
                           if (idx[i] >= 0) g[static_cast<std::size_t>(idx[i])] += o.grad[i];
                         }
                       });
                     },
                     "gather");
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw InvalidArgument("concat: axis out of range");
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != shape.size()) throw InvalidArgument("concat: rank mismatch");
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (d != axis && t.shape()[d] != shape[d]) {
        throw InvalidArgument("concat: incompatible shapes " + shape_str(shape) + " and " +
                              shape_str(t.shape()));
      }
    }
    total += t.shape()[axis];
  }
  shape[axis] = total;
  const AxisSplit s = split_axis(shape, axis);

  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  ParentList parents;
  std::size_t offset = 0;
  for (const Tensor& t : parts) {
    const std::size_t len = t.shape()[axis];
    const auto td = t.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(o * len * s.inner), len * s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * s.len + offset) * s.inner));
    offsets.push_back(offset);
    parents.push_back(t.impl());
    offset += len;
  }
  return make_result(std::move(shape), std::move(out), std::move(parents),
                     [s, axis, offsets = std::move(offsets)](TensorImpl& o, const ParentList& p) {
                       for (std::size_t k = 0; k < p.size(); ++k) {
                         const std::size_t len = p[k]->shape[axis];
                         accumulate(*p[k], [&](std::vector<double>& g) {
                           for (std::size_t ou = 0; ou < s.outer; ++ou) {
                             const double* src = o.grad.data() + (ou * s.len + offsets[k]) * s.inner;
                             double* dst = g.data() + ou * len * s.inner;
                             for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                           }
                         });
                       }
                     },
                     "concat");
}

Tensor segment_logsumexp(const Tensor& x, std::span<const std::size_t> lengths) {
  const std::size_t n = x.numel();
  std::size_t covered = 0;
  for (std::size_t len : lengths) {
    if (len == 0) throw InvalidArgument("segment_logsumexp: empty segment");
    covered += len;
  }
  if (covered != n || lengths.empty()) {
    throw InvalidArgument("segment_logsumexp: segments do not cover the input");
  }
  require_finite(x.data(), "segment_logsumexp");
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  std::vector<double> out(lens.size());
  const auto xd = x.data();
  std::size_t start = 0;
  for (std::size_t k = 0; k < lens.size(); ++k) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = start; i < start + lens[k]; ++i) mx = std::max(mx, xd[i]);
    double total = 0.0;
    for (std::size_t i = start; i < start + lens[k]; ++i) total += std::exp(xd[i] - mx);
    out[k] = mx + std::log(total);
    start += lens[k];
  }
  Shape shape{lens.size()};
  return make_result(std::move(shape), std::move(out), {x.impl()},
                     [lens = std::move(lens)](TensorImpl& o, const ParentList& p) {
                       accumulate(*p[0], [&](std::vector<double>& g) {
                         const auto& xd = p[0]->data;
                         std::size_t start = 0;
                         for (std::size_t k = 0; k < lens.size(); ++k) {
                           for (std::size_t i = start; i < start + lens[k]; ++i)
                             g[i] += o.grad[k] * std::exp(xd[i] - o.data[k]);
                           start += lens[k];
                         }
                       });
                     },
                     "segment_logsumexp");
}

}  // namespace prdlab
