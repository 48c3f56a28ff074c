#include "prdlab/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "prdlab/error.hpp"
#include "prdlab/gradcheck.hpp"
#include "prdlab/losses.hpp"
#include "prdlab/rng.hpp"
#include "prdlab/tensor.hpp"

namespace prdlab {

namespace {

using Inputs = std::vector<Tensor>;
using Objective = std::function<Tensor(const Inputs&)>;

Tensor random_tensor(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v));
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// Worst relative error between backward() and central differences over
// every input of `objective`.
double compare(const Objective& objective, const Inputs& inputs, double h) {
  Inputs leaves;
  for (const Tensor& x : inputs) leaves.push_back(Tensor::from(x.shape(), {x.data().begin(), x.data().end()}, true));
  objective(leaves).backward();

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& xi) {
          Inputs probe = inputs;
          probe[i] = xi;
          return objective(probe).item();
        },
        inputs[i], h);
    const std::vector<double> analytic = leaves[i].grad();
    worst = std::max(worst, max_relative_error(analytic, numeric.data()));
  }
  return worst;
}

struct Instance {
  Inputs inputs;
  Objective objective;
};

using Generator = std::function<Instance(Rng&)>;

void run_case(GradcheckReport& report, const std::string& name, const Generator& generate, std::size_t instances,
              std::uint64_t seed) {
  GradcheckCase c;
  c.name = name;
  for (std::size_t k = 0; k < instances; ++k) {
    Rng rng(derive_seed(seed, k));
    const Instance inst = generate(rng);
    c.max_error = std::max(c.max_error, compare(inst.objective, inst.inputs, report.step));
    ++c.instances;
  }
  report.cases.push_back(std::move(c));
}

// Random toy batch shared by the loss cases.
struct LossDims {
  std::size_t b, d, m, p;
  std::vector<std::size_t> words;
};

LossDims draw_dims(Rng& rng) {
  LossDims dims{pick(rng, 2, 4), pick(rng, 2, 8), pick(rng, 1, 4), pick(rng, 1, 9), {}};
  for (std::size_t i = 0; i < dims.b; ++i) dims.words.push_back(pick(rng, 1, 4));
  return dims;
}

Tensor slice_matrix(const Tensor& flat, std::size_t offset, std::size_t rows, std::size_t cols) {
  std::vector<std::int64_t> index(rows * cols);
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = static_cast<std::int64_t>(offset + i);
  return gather(flat, std::move(index), {rows, cols});
}

// Splits one flat (d, sum W) tensor into per-text (d, W_b) blocks.
std::vector<Tensor> split_columns(const Tensor& words, const std::vector<std::size_t>& lengths) {
  const std::size_t d = words.dim(0);
  const std::size_t total = words.dim(1);
  std::vector<Tensor> out;
  std::size_t start = 0;
  for (std::size_t w : lengths) {
    std::vector<std::int64_t> index(d * w);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < w; ++c) index[r * w + c] = static_cast<std::int64_t>(r * total + start + c);
    out.push_back(gather(words, std::move(index), {d, w}));
    start += w;
  }
  return out;
}

std::size_t sum_of(const std::vector<std::size_t>& v) {
  std::size_t s = 0;
  for (std::size_t x : v) s += x;
  return s;
}

Tensor batch_pert(const Tensor& images, const Tensor& texts, const Tensor& perturbed, std::size_t p, double tau) {
  const std::size_t b = images.dim(0);
  const std::size_t d = images.dim(1);
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < b; ++i) {
    terms.push_back(perturbation_sensitivity_loss(slice_matrix(images, i * d, d, 1), slice_matrix(texts, i * d, d, 1),
                                                  slice_matrix(perturbed, i * d * p, d, p), tau));
  }
  return mean(concat(terms, 0));
}

Instance global_instance(Rng& rng) {
  const LossDims k = draw_dims(rng);
  return {{random_tensor(rng, {k.b, k.d}), random_tensor(rng, {k.b, k.d})},
          [](const Inputs& x) { return global_contrastive_loss(x[0], x[1], 0.07); }};
}

Instance local_instance(Rng& rng) {
  const LossDims k = draw_dims(rng);
  Inputs inputs;
  for (std::size_t i = 0; i < k.b; ++i) inputs.push_back(random_tensor(rng, {k.d, k.m}));
  inputs.push_back(random_tensor(rng, {k.d, sum_of(k.words)}));
  return {std::move(inputs), [k](const Inputs& x) {
            const std::vector<Tensor> images(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k.b));
            return local_contrastive_loss(images, split_columns(x[k.b], k.words), 0.07, 1.0);
          }};
}

Instance pert_instance(Rng& rng) {
  const LossDims k = draw_dims(rng);
  return {{random_tensor(rng, {k.b, k.d}), random_tensor(rng, {k.b, k.d}), random_tensor(rng, {k.b, k.d * k.p})},
          [k](const Inputs& x) { return batch_pert(x[0], x[1], x[2], k.p, 0.07); }};
}

Instance total_instance(Rng& rng) {
  const LossDims k = draw_dims(rng);
  Inputs inputs{random_tensor(rng, {k.b, k.d}), random_tensor(rng, {k.b, k.d}),
                random_tensor(rng, {k.b, k.d * k.p})};
  for (std::size_t i = 0; i < k.b; ++i) inputs.push_back(random_tensor(rng, {k.d, k.m}));
  inputs.push_back(random_tensor(rng, {k.d, sum_of(k.words)}));
  return {std::move(inputs), [k](const Inputs& x) {
            const LossWeights w;
            const std::vector<Tensor> images(x.begin() + 3, x.begin() + 3 + static_cast<std::ptrdiff_t>(k.b));
            const Tensor global = global_contrastive_loss(x[0], x[1], w.tau);
            const Tensor local =
                local_contrastive_loss(images, split_columns(x[3 + k.b], k.words), w.tau, w.tau_local);
            const Tensor pert = batch_pert(x[0], x[1], x[2], k.p, w.tau);
            return total_loss(global, local, pert, w).total;
          }};
}

// Reduces an op output to a scalar with fixed random weights so every output
// coordinate contributes a distinct amount.
Instance op_instance(Rng& rng, Inputs inputs, const std::function<Tensor(const Inputs&)>& op) {
  Tensor probe;
  {
    NoGradGuard no_grad;
    probe = op(inputs);
  }
  const Tensor weights = random_tensor(rng, probe.shape());
  return {std::move(inputs), [op, weights](const Inputs& x) { return sum(mul(op(x), weights)); }};
}

Tensor away_from_zero(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    x = rng.normal();
    if (std::abs(x) < 0.05) x = x < 0 ? -0.05 - std::abs(x) : 0.05 + x;
  }
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor positive(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(0.5, 2.0);
  return Tensor::from(std::move(shape), std::move(v));
}

std::vector<std::pair<std::string, Generator>> op_generators() {
  std::vector<std::pair<std::string, Generator>> g;
  auto matrix = [](Rng& rng) { return Shape{pick(rng, 1, 4), pick(rng, 1, 4)}; };
  auto unary = [&](const char* name, std::function<Tensor(const Tensor&)> f) {
    g.emplace_back(name, [matrix, f](Rng& rng) {
      return op_instance(rng, {random_tensor(rng, matrix(rng))}, [f](const Inputs& x) { return f(x[0]); });
    });
  };
  auto binary = [&](const char* name, std::function<Tensor(const Tensor&, const Tensor&)> f) {
    g.emplace_back(name, [matrix, f](Rng& rng) {
      const Shape s = matrix(rng);
      return op_instance(rng, {random_tensor(rng, s), random_tensor(rng, s)},
                         [f](const Inputs& x) { return f(x[0], x[1]); });
    });
  };
  binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  binary("dot", [](const Tensor& a, const Tensor& b) { return dot(a, b); });
  unary("scale", [](const Tensor& a) { return scale(a, -1.7); });
  unary("add_scalar", [](const Tensor& a) { return add_scalar(a, 0.3); });
  unary("neg", [](const Tensor& a) { return neg(a); });
  unary("exp", [](const Tensor& a) { return exp(a); });
  unary("transpose", [](const Tensor& a) { return transpose(a); });
  unary("reshape", [](const Tensor& a) { return reshape(a, {a.numel()}); });
  unary("sum", [](const Tensor& a) { return sum(a); });
  unary("mean", [](const Tensor& a) { return mean(a); });
  unary("sum_axis0", [](const Tensor& a) { return sum_axis(a, 0); });
  unary("sum_axis1", [](const Tensor& a) { return sum_axis(a, 1); });
  unary("softmax0", [](const Tensor& a) { return softmax(a, 0); });
  unary("softmax1", [](const Tensor& a) { return softmax(a, 1); });
  unary("log_softmax0", [](const Tensor& a) { return log_softmax(a, 0); });
  unary("log_softmax1", [](const Tensor& a) { return log_softmax(a, 1); });
  unary("logsumexp0", [](const Tensor& a) { return logsumexp(a, 0); });
  unary("logsumexp1", [](const Tensor& a) { return logsumexp(a, 1); });
  unary("l2_normalize0", [](const Tensor& a) { return l2_normalize(a, 0); });
  unary("l2_normalize1", [](const Tensor& a) { return l2_normalize(a, 1); });
  g.emplace_back("log", [matrix](Rng& rng) {
    return op_instance(rng, {positive(rng, matrix(rng))}, [](const Inputs& x) { return log(x[0]); });
  });
  g.emplace_back("relu", [matrix](Rng& rng) {
    return op_instance(rng, {away_from_zero(rng, matrix(rng))}, [](const Inputs& x) { return relu(x[0]); });
  });
  g.emplace_back("add_row", [matrix](Rng& rng) {
    const Shape s = matrix(rng);
    return op_instance(rng, {random_tensor(rng, s), random_tensor(rng, {s[1]})},
                       [](const Inputs& x) { return add_row(x[0], x[1]); });
  });
  g.emplace_back("matmul", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 4), m = pick(rng, 1, 4);
    return op_instance(rng, {random_tensor(rng, {n, k}), random_tensor(rng, {k, m})},
                       [](const Inputs& x) { return matmul(x[0], x[1]); });
  });
  g.emplace_back("gather", [matrix](Rng& rng) {
    const Shape s = matrix(rng);
    const std::size_t count = pick(rng, 1, 8);
    std::vector<std::int64_t> index(count);
    for (auto& i : index) i = static_cast<std::int64_t>(rng.below(shape_numel(s) + 1)) - 1;
    return op_instance(rng, {random_tensor(rng, s)},
                       [index](const Inputs& x) { return gather(x[0], index, {index.size()}); });
  });
  g.emplace_back("concat", [](Rng& rng) {
    const std::size_t axis = rng.below(2);
    const std::size_t n = pick(rng, 1, 3), a = pick(rng, 1, 3), b = pick(rng, 1, 3);
    const Shape sa = axis == 0 ? Shape{a, n} : Shape{n, a};
    const Shape sb = axis == 0 ? Shape{b, n} : Shape{n, b};
    return op_instance(rng, {random_tensor(rng, sa), random_tensor(rng, sb)},
                       [axis](const Inputs& x) { return concat(x, axis); });
  });
  g.emplace_back("segment_logsumexp", [](Rng& rng) {
    std::vector<std::size_t> lengths(pick(rng, 1, 4));
    for (auto& l : lengths) l = pick(rng, 1, 4);
    return op_instance(rng, {random_tensor(rng, {sum_of(lengths)})},
                       [lengths](const Inputs& x) { return segment_logsumexp(x[0], lengths); });
  });
  return g;
}

}  // namespace

bool GradcheckReport::passed() const {
  return std::all_of(cases.begin(), cases.end(), [this](const GradcheckCase& c) { return c.max_error < tolerance; });
}

GradcheckReport check_loss_gradients(std::size_t instances, std::uint64_t seed, double tolerance) {
  if (instances == 0) throw InvalidArgument("gradcheck needs at least one instance");
  GradcheckReport report;
  report.tolerance = tolerance;
  run_case(report, "global", global_instance, instances, derive_seed(seed, 0));
  run_case(report, "local", local_instance, instances, derive_seed(seed, 1));
  run_case(report, "pert", pert_instance, instances, derive_seed(seed, 2));
  run_case(report, "total", total_instance, instances, derive_seed(seed, 3));
  return report;
}

GradcheckReport check_op_gradients(std::size_t instances, std::uint64_t seed, double tolerance) {
  if (instances == 0) throw InvalidArgument("gradcheck needs at least one instance");
  GradcheckReport report;
  report.tolerance = tolerance;
  std::uint64_t stream = 0;
  for (const auto& [name, generator] : op_generators()) {
    run_case(report, name, generator, instances, derive_seed(seed, 100 + stream++));
  }
  return report;
}

}  // namespace prdlab
