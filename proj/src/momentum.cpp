#include <algorithm>
#include <string>

#include "newsdistill/distill.hpp"
#include "newsdistill/errors.hpp"

namespace newsdistill {

std::map<std::string, Tensor> block_gradient_average(const GradientSet& teacher_grads, const BlockMap& map,
                                                     std::size_t block, const std::string& teacher_prefix) {
  const auto layers = block_of(map, block);
  std::map<std::string, Tensor> avg;
  for (const auto& [role_view, member] : LayerParams::roles()) {
    const std::string role(role_view);
    Tensor mean;
    std::size_t count = 0;
    for (std::size_t layer : layers) {
      const std::string name = layer_prefix(teacher_prefix, layer) + role;
      if (!teacher_grads.contains(name)) {
        throw ContractError("block_gradient_average: missing gradient for '" + name + "'");
      }
      const Tensor& g = teacher_grads.at(name);
      ++count;
      if (count == 1) {
        mean = g.clone();
        mean.set_requires_grad(false);
        continue;
      }
      if (g.shape() != mean.shape()) throw DimensionError("block_gradient_average: layer shapes differ for " + role);
      // Running mean: exact for identical inputs.
      auto m = mean.mutable_values();
      auto gv = g.values();
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += (gv[i] - m[i]) * inv;
    }
    avg.emplace(role, std::move(mean));
  }
  return avg;
}

Tensor momentum_mix(const Tensor& student_grad, const Tensor& block_grad, double beta) {
  if (student_grad.shape() != block_grad.shape()) {
    throw DimensionError("momentum_mix: " + shape_to_string(student_grad.shape()) + " vs " +
                         shape_to_string(block_grad.shape()));
  }
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  if (beta == 0.0) return student_grad.clone();
  if (beta == 1.0) return block_grad.clone();
  Tensor out(student_grad.shape());
  auto o = out.mutable_values();
  auto s = student_grad.values();
  auto t = block_grad.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double mixed = beta * t[i] + (1.0 - beta) * s[i];
    // Rounding must not leave the segment between the two sources.
    o[i] = std::clamp(mixed, std::min(s[i], t[i]), std::max(s[i], t[i]));
  }
  return out;
}

void apply_momentum_distillation(GradientSet& grads, const BlockMap& map, double beta, bool include_embeddings,
                                 const std::string& teacher_prefix, const std::string& student_prefix) {
  for (std::size_t k = 1; k <= map.n; ++k) {
    const auto avg = block_gradient_average(grads, map, k, teacher_prefix);
    const std::string sp = layer_prefix(student_prefix, k);
    for (const auto& [role, g] : avg) {
      const std::string name = sp + role;
      grads.set(name, momentum_mix(grads.at(name), g, beta));
    }
  }
  if (include_embeddings) {
    for (const char* e : {"embedding.token", "embedding.position"}) {
      const std::string s = student_prefix + e;
      grads.set(s, momentum_mix(grads.at(s), grads.at(teacher_prefix + e), beta));
    }
  }
}

}  // namespace newsdistill
