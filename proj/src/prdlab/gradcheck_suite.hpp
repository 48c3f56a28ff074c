#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace prdlab {

struct GradcheckCase {
  std::string name;
  std::size_t instances = 0;
  double max_error = 0.0;  // worst relative error over instances and inputs
};

struct GradcheckReport {
  double tolerance = 1e-4;
  double step = 1e-5;
  std::vector<GradcheckCase> cases;

  bool passed() const;
};

// Random toy instances of the global, local, perturbation and total losses
// (B <= 4, d_e <= 8, M <= 4, W <= 4); every input is checked.
GradcheckReport check_loss_gradients(std::size_t instances, std::uint64_t seed, double tolerance = 1e-4);

// Every differentiable tensor op on random O(1) inputs.
GradcheckReport check_op_gradients(std::size_t instances, std::uint64_t seed, double tolerance = 1e-4);

}  // namespace prdlab
