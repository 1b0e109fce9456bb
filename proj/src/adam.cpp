#include <cmath>
#include <string>

#include "newsdistill/distill.hpp"
#include "newsdistill/errors.hpp"

namespace newsdistill {

void adam_step(AdamState& state, const ParameterList& params, const GradientSet& grads) {
  if (grads.size() != params.size()) {
    throw ContractError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& p : params) {
    const Tensor& g = grads.at(p.name);
    if (g.shape() != p.tensor.shape()) {
      throw DimensionError("adam_step: gradient shape " + shape_to_string(g.shape()) + " for parameter '" + p.name +
                           "' of shape " + shape_to_string(p.tensor.shape()));
    }
    auto [mit, m_new] = state.first_moment.try_emplace(p.name, p.tensor.shape());
    auto [vit, v_new] = state.second_moment.try_emplace(p.name, p.tensor.shape());
    auto m = mit->second.mutable_values();
    auto v = vit->second.mutable_values();
    auto gv = g.values();
    auto w = p.tensor.storage().data.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gv[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gv[i] * gv[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    if (!p.tensor.all_finite()) throw NumericError("adam_step produced a non-finite value in '" + p.name + "'");
  }
}

}  // namespace newsdistill
