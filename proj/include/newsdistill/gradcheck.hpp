#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "newsdistill/config.hpp"
#include "newsdistill/rng.hpp"
#include "newsdistill/tensor.hpp"

namespace newsdistill {

struct GradcheckResult {
  std::string loss;
  std::size_t samples = 0;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  double tolerance = 1e-3;

  bool passed() const { return max_rel_error < tolerance; }
};

// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

// Builds the loss on the given tape; called once recording and then twice per
// sampled scalar in inference mode.
using LossBuilder = std::function<Tensor(Tape&)>;

// Compares backward against central differences on `samples` distinct scalars
// drawn from `params` (tensor uniformly, then element uniformly).
GradcheckResult check_gradients(const std::string& name, const ParameterList& params, const LossBuilder& loss,
                                std::size_t samples, double step, double tolerance, Rng& rng);

// Every training loss on a fresh desk model built from the config geometry:
// the classification losses, the recommendation student/teacher losses and the
// retrieval loss.
std::vector<GradcheckResult> gradcheck_suite(const RunConfig& config);

}  // namespace newsdistill
