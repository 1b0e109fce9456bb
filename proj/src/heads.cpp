#include "newsdistill/heads.hpp"

#include <cmath>

#include "newsdistill/errors.hpp"

namespace newsdistill {

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape), true);
  for (double& v : t.mutable_values()) v = stddev * rng.normal();
  return t;
}

}  // namespace

PoolingParams PoolingParams::random(std::size_t hidden, std::size_t attn_dim, Rng& rng) {
  PoolingParams p;
  p.proj_weight = normal_tensor({hidden, attn_dim}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  p.proj_bias = Tensor({attn_dim}, true);
  p.query = normal_tensor({attn_dim}, 1.0 / std::sqrt(static_cast<double>(attn_dim)), rng);
  return p;
}

PoolingParams PoolingParams::clone() const { return {proj_weight.clone(), proj_bias.clone(), query.clone()}; }

void PoolingParams::append_parameters(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "proj_weight", proj_weight});
  out.push_back({prefix + "proj_bias", proj_bias});
  out.push_back({prefix + "query", query});
}

DenseParams DenseParams::random(std::size_t hidden, std::size_t num_classes, Rng& rng) {
  DenseParams d;
  d.weight = normal_tensor({hidden, num_classes}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  d.bias = Tensor({num_classes}, true);
  return d;
}

DenseParams DenseParams::clone() const { return {weight.clone(), bias.clone()}; }

void DenseParams::append_parameters(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "weight", weight});
  out.push_back({prefix + "bias", bias});
}

HeadParams HeadParams::clone() const {
  HeadParams out;
  out.pool = pool.clone();
  if (dense) out.dense = dense->clone();
  if (user) out.user = user->clone();
  return out;
}

void HeadParams::append_parameters(ParameterList& out, const std::string& prefix) const {
  pool.append_parameters(out, prefix + "pool.");
  if (dense) dense->append_parameters(out, prefix + "dense.");
  if (user) user->append_parameters(out, prefix + "user.");
}

bool HeadParams::same_objects(const HeadParams& o) const {
  auto same_pool = [](const PoolingParams& a, const PoolingParams& b) {
    return a.proj_weight.is_same(b.proj_weight) && a.proj_bias.is_same(b.proj_bias) && a.query.is_same(b.query);
  };
  if (!same_pool(pool, o.pool)) return false;
  if (dense.has_value() != o.dense.has_value() || user.has_value() != o.user.has_value()) return false;
  if (dense && !(dense->weight.is_same(o.dense->weight) && dense->bias.is_same(o.dense->bias))) return false;
  if (user && !same_pool(*user, *o.user)) return false;
  return true;
}

Tensor attentive_pool(Tape& tape, const PoolingParams& p, const Tensor& h, ops::SequenceLayout layout,
                      const Mask& mask, bool allow_empty) {
  const std::size_t attn_dim = p.query.numel();
  Tensor proj = ops::tanh(tape, ops::add_bias(tape, ops::matmul(tape, h, p.proj_weight), p.proj_bias));
  Tensor scores = ops::matmul(tape, proj, ops::reshape(tape, p.query, {attn_dim, 1}));
  Tensor alpha = ops::segment_softmax(tape, scores, layout, mask, allow_empty);
  return ops::segment_weighted_sum(tape, alpha, h, layout);
}

std::vector<double> attentive_pool_weights(const PoolingParams& p, const Tensor& h, ops::SequenceLayout layout,
                                           const Mask& mask) {
  Tape tape(Tape::Mode::kInference);
  const std::size_t attn_dim = p.query.numel();
  Tensor proj = ops::tanh(tape, ops::add_bias(tape, ops::matmul(tape, h, p.proj_weight), p.proj_bias));
  Tensor scores = ops::matmul(tape, proj, ops::reshape(tape, p.query, {attn_dim, 1}));
  Tensor alpha = ops::segment_softmax(tape, scores, layout, mask, true);
  return {alpha.values().begin(), alpha.values().end()};
}

Tensor classify(Tape& tape, const DenseParams& d, const Tensor& h) {
  return ops::add_bias(tape, ops::matmul(tape, h, d.weight), d.bias);
}

}  // namespace newsdistill
