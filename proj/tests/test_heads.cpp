#include "catch_amalgamated.hpp"

#include <cmath>

#include "newsdistill/distill.hpp"
#include "newsdistill/errors.hpp"
#include "newsdistill/heads.hpp"
#include "newsdistill/tasks.hpp"
#include "test_support.hpp"

using namespace newsdistill;
using Catch::Matchers::WithinAbs;

namespace {

PoolingParams identity_pool() {
  PoolingParams p;
  p.proj_weight = Tensor({2, 2}, {1, 0, 0, 1}, true);
  p.proj_bias = Tensor({2}, {0, 0}, true);
  p.query = Tensor({2}, {1, 0}, true);
  return p;
}

std::vector<double> pooled(const PoolingParams& p, const Tensor& h, const Mask& mask) {
  Tape tape(Tape::Mode::kInference);
  const Tensor out = attentive_pool(tape, p, h, {1, h.rows()}, mask);
  return {out.values().begin(), out.values().end()};
}

}  // namespace

TEST_CASE("attentive pooling of identical rows returns the row") {
  Rng rng(1);
  const auto p = PoolingParams::random(3, 4, rng);
  const Tensor h({4, 3}, {1, -2, 3, 1, -2, 3, 1, -2, 3, 1, -2, 3});
  const auto out = pooled(p, h, {1, 1, 1, 1});
  CHECK_THAT(out[0], WithinAbs(1.0, 1e-14));
  CHECK_THAT(out[1], WithinAbs(-2.0, 1e-14));
  CHECK_THAT(out[2], WithinAbs(3.0, 1e-14));
}

TEST_CASE("attentive pooling hand example") {
  const Tensor h({2, 2}, {1, 0, 0, 1});
  const auto out = pooled(identity_pool(), h, {1, 1});
  // scores tanh(1) and tanh(0)
  const double a0 = 1.0 / (1.0 + std::exp(-std::tanh(1.0)));
  CHECK_THAT(out[0], WithinAbs(a0, 1e-14));
  CHECK_THAT(out[1], WithinAbs(1.0 - a0, 1e-14));
  CHECK_THAT(out[0], WithinAbs(0.6817, 5e-5));
  CHECK_THAT(out[1], WithinAbs(0.3183, 5e-5));
  const auto alpha = attentive_pool_weights(identity_pool(), h, {1, 2}, {1, 1});
  CHECK_THAT(alpha[0], WithinAbs(a0, 1e-14));
}

TEST_CASE("attentive pooling of a single unmasked row returns that row") {
  Rng rng(2);
  const auto p = PoolingParams::random(3, 4, rng);
  const Tensor h = testing::random_tensor({3, 3}, rng, false);
  const auto out = pooled(p, h, {0, 1, 0});
  for (std::size_t c = 0; c < 3; ++c) CHECK(out[c] == h.at(1, c));
}

TEST_CASE("attentive pooling rejects a fully masked sequence") {
  const Tensor h({2, 2}, {1, 0, 0, 1});
  CHECK_THROWS_AS(pooled(identity_pool(), h, {0, 0}), InputError);
  Tape tape(Tape::Mode::kInference);
  const Tensor out = attentive_pool(tape, identity_pool(), h, {1, 2}, {0, 0}, true);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("attentive pooling stays in the convex hull of the rows") {
  Rng rng(3);
  const auto p = PoolingParams::random(4, 3, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor h = testing::random_tensor({5, 4}, rng, false);
    const Mask mask{1, 1, 0, 1, 1};
    const auto alpha = attentive_pool_weights(p, h, {1, 5}, mask);
    double total = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(alpha[i] >= 0.0);
      total += alpha[i];
    }
    CHECK(alpha[2] == 0.0);
    CHECK_THAT(total, WithinAbs(1.0, 1e-12));
    const auto out = pooled(p, h, mask);
    for (std::size_t c = 0; c < 4; ++c) {
      double lo = 1e9, hi = -1e9;
      for (std::size_t r : {0, 1, 3, 4}) {
        lo = std::min(lo, h.at(r, c));
        hi = std::max(hi, h.at(r, c));
      }
      CHECK(out[c] >= lo - 1e-12);
      CHECK(out[c] <= hi + 1e-12);
    }
  }
}

TEST_CASE("pooling gradients match central differences") {
  Rng rng(4);
  auto p = PoolingParams::random(4, 3, rng);
  const Tensor h = testing::random_tensor({6, 4}, rng);
  const Mask mask{1, 1, 1, 0, 1, 1};
  const Tensor target = testing::random_tensor({2, 4}, rng, false);
  auto build = [&](Tape& t) { return ops::mse(t, attentive_pool(t, p, h, {2, 3}, mask), target); };
  Tape tape;
  backward(build(tape), tape);
  auto value = [&] {
    Tape t(Tape::Mode::kInference);
    return build(t).item();
  };
  for (const Tensor& t : {p.proj_weight, p.proj_bias, p.query, h}) {
    const std::vector<double> g(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      CHECK(testing::rel_err(g[i], testing::central_difference(value, t, i)) < 1e-4);
    }
  }
}

TEST_CASE("classify examples") {
  Tape tape(Tape::Mode::kInference);
  DenseParams zero{Tensor({3, 2}), Tensor({2}, {0.5, -1.5})};
  Rng rng(5);
  const Tensor h = testing::random_tensor({1, 3}, rng, false);
  const Tensor z = classify(tape, zero, h);
  CHECK(z.value(0) == 0.5);
  CHECK(z.value(1) == -1.5);
  DenseParams basis{Tensor({2, 2}, {2, 0, 0, 0}), Tensor({2}, {0, 0})};
  const Tensor e1 = classify(tape, basis, Tensor({1, 2}, {1, 0}));
  CHECK(e1.value(0) == 2.0);
  CHECK(e1.value(1) == 0.0);
}

TEST_CASE("classification cross-entropy gradient w.r.t. the dense weight") {
  Rng rng(6);
  auto d = DenseParams::random(5, 3, rng);
  const Tensor h = testing::random_tensor({4, 5}, rng, false);
  const std::vector<std::size_t> labels{0, 2, 1, 2};
  auto build = [&](Tape& t) { return ops::cross_entropy(t, classify(t, d, h), labels); };
  Tape tape;
  backward(build(tape), tape);
  auto value = [&] {
    Tape t(Tape::Mode::kInference);
    return build(t).item();
  };
  const std::vector<double> g(d.weight.grad().begin(), d.weight.grad().end());
  for (std::size_t i = 0; i < d.weight.numel(); ++i) {
    CHECK(testing::rel_err(g[i], testing::central_difference(value, d.weight, i)) < 1e-4);
  }
}

namespace {

struct SharedFixture {
  EncoderConfig config;
  ModelPair pair;
  std::vector<TokenSequence> seqs;
  TokenBatch batch;
  std::vector<std::size_t> labels{0, 1, 2};

  SharedFixture() {
    config.vocab_size = 20;
    config.max_seq_len = 6;
    config.hidden_dim = 8;
    config.num_heads = 2;
    config.ffn_dim = 16;
    config.num_layers = 4;
    config.dropout = 0.0;
    Rng rng(9);
    pair = make_joint_pair(config, {2, 2}, {4, 3, false}, rng);
    seqs = {{{3, 4, 5, 0}, {1, 1, 1, 0}}, {{6, 7, 8, 9}, {1, 1, 1, 1}}, {{10, 2, 0, 0}, {1, 1, 0, 0}}};
    batch = TokenBatch::pack({&seqs[0], &seqs[1], &seqs[2]});
  }

  PathForward forward() const {
    return [this](Tape& tape, const EncoderParams& enc, const HeadParams& heads, Rng* rng) {
      return tasks::classify_forward(tape, enc, heads, batch, rng);
    };
  }
};

}  // namespace

TEST_CASE("teacher and student paths hold the same head objects across joint steps") {
  SharedFixture fx;
  REQUIRE(fx.pair.heads_shared());
  const Tensor query = fx.pair.teacher_heads->pool.query;
  AdamState adam;
  auto cfg = DistillConfig::classification_defaults();
  for (int i = 0; i < 3; ++i) joint_step(fx.pair, fx.forward(), fx.labels, cfg, adam, nullptr);
  CHECK(fx.pair.teacher_heads->same_objects(*fx.pair.student_heads));
  CHECK(fx.pair.student_heads->pool.query.is_same(query));
  CHECK(fx.pair.teacher_heads->dense->weight.is_same(fx.pair.student_heads->dense->weight));
}

TEST_CASE("joint head gradients are the sum of the teacher and student contributions") {
  SharedFixture fx;
  const auto cfg = DistillConfig::classification_defaults();
  const ParameterList params = fx.pair.parameters();

  auto separate = [&](bool student) {
    zero_grads(params);
    Tape tape;
    const auto t = fx.forward()(tape, *fx.pair.teacher, *fx.pair.teacher_heads, nullptr);
    const auto s = fx.forward()(tape, *fx.pair.student, *fx.pair.student_heads, nullptr);
    if (student) {
      backward(student_loss(tape, t, s, fx.labels, fx.pair.map, cfg).total, tape);
    } else {
      backward(teacher_loss(tape, t, fx.labels), tape);
    }
    return GradientSet::collect(params);
  };
  const GradientSet from_teacher = separate(false);
  const GradientSet from_student = separate(true);

  zero_grads(params);
  GradientSet joint;
  AdamState adam;
  joint_step(fx.pair, fx.forward(), fx.labels, cfg, adam, nullptr, [&](const GradientSet& g) { joint = g; });

  std::size_t checked = 0;
  for (const auto& [name, g] : joint.entries()) {
    const auto owner = owner_of(name);
    if (owner != ParameterOwner::kPooling && owner != ParameterOwner::kDense) continue;
    const auto gt = from_teacher.at(name).values();
    const auto gs = from_student.at(name).values();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      CHECK(std::abs(g.value(i) - (gt[i] + gs[i])) <= 1e-12);
      ++checked;
    }
  }
  CHECK(checked > 0);
}
