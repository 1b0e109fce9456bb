#include "catch_amalgamated.hpp"

#include <cmath>

#include "newsdistill/distill.hpp"
#include "newsdistill/errors.hpp"
#include "newsdistill/tasks.hpp"
#include "test_support.hpp"

using namespace newsdistill;
using Catch::Matchers::WithinAbs;

namespace {

EncoderState manual_state(Tensor embeddings, std::vector<Tensor> layers) {
  EncoderState s;
  s.layout = {1, embeddings.rows()};
  s.mask.assign(embeddings.rows(), 1);
  s.embeddings = std::move(embeddings);
  s.layer_hidden = std::move(layers);
  return s;
}

double value_of(const std::function<Tensor(Tape&)>& f) {
  Tape tape(Tape::Mode::kInference);
  return f(tape).item();
}

std::vector<double> copy(std::span<const double> v) { return {v.begin(), v.end()}; }

// Shannon entropy in nats, computed directly.
double entropy_of_logits(const std::vector<double>& z) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  double h = 0.0;
  for (double v : z) {
    const double p = std::exp(v - mx) / s;
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

EncoderConfig desk_config(std::size_t layers) {
  EncoderConfig c;
  c.vocab_size = 24;
  c.max_seq_len = 6;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.num_layers = layers;
  c.dropout = 0.0;
  return c;
}

struct Desk {
  std::vector<TokenSequence> seqs{{{3, 4, 5, 0}, {1, 1, 1, 0}},
                                  {{6, 7, 8, 9}, {1, 1, 1, 1}},
                                  {{10, 11, 0, 0}, {1, 1, 0, 0}},
                                  {{12, 13, 14, 2}, {1, 1, 1, 1}}};
  std::vector<std::size_t> labels{0, 1, 2, 1};
  TokenBatch batch = TokenBatch::pack({&seqs[0], &seqs[1], &seqs[2], &seqs[3]});

  PathForward forward() const {
    return [this](Tape& tape, const EncoderParams& enc, const HeadParams& heads, Rng* rng) {
      return tasks::classify_forward(tape, enc, heads, batch, rng);
    };
  }

  ModelPair joint(std::uint64_t seed, BlockMap map = {2, 2}) const {
    Rng rng(seed);
    return make_joint_pair(desk_config(map.teacher_depth()), map, {4, 3, false}, rng);
  }
};

std::vector<std::vector<double>> snapshot(const ParameterList& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.push_back(copy(p.tensor.values()));
  return out;
}

// A gradient set over a teacher of `depth` layers where every role of layer l
// (1-based) is filled with fill(l, i) for element i.
GradientSet layered_gradients(std::size_t depth, const std::function<double(std::size_t, std::size_t)>& fill) {
  const auto params = EncoderParams::zeros(desk_config(depth));
  ParameterList list;
  params.append_parameters(list, "teacher.");
  GradientSet gs;
  for (const auto& p : list) {
    Tensor g(p.tensor.shape());
    std::size_t layer = 0;
    const auto pos = p.name.find("layer.");
    if (pos != std::string::npos) layer = std::stoul(p.name.substr(pos + 6));
    auto v = g.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = fill(layer, i);
    gs.set(p.name, g);
  }
  return gs;
}

}  // namespace

TEST_CASE("hidden layer loss examples") {
  Tape tape(Tape::Mode::kInference);
  const Tensor e({1, 2}, {0.5, -1});
  const auto t = manual_state(e, {Tensor({1, 2}, {1, 2})});
  const auto s = manual_state(e.clone(), {Tensor({1, 2}, {3, 4})});
  CHECK(hidden_layer_loss(tape, t, s, {1, 1}).item() == 4.0);

  // Two aligned pairs at MSE c each: one more term than a single pair.
  const auto t2 = manual_state(e, {Tensor({1, 2}, {1, 2}), Tensor({1, 2}, {0, 0})});
  const auto s2 = manual_state(e.clone(), {Tensor({1, 2}, {3, 4}), Tensor({1, 2}, {2, 2})});
  CHECK(hidden_layer_loss(tape, t2, s2, {1, 2}).item() == 4.0 + 4.0);

  CHECK_THROWS_AS(hidden_layer_loss(tape, t2, s, {1, 2}), ContractError);
}

TEST_CASE("hidden layer loss averages only unmasked rows") {
  Tape tape(Tape::Mode::kInference);
  auto t = manual_state(Tensor({2, 1}, {0, 0}), {Tensor({2, 1}, {1, 100})});
  auto s = manual_state(Tensor({2, 1}, {0, 0}), {Tensor({2, 1}, {3, -100})});
  t.mask = s.mask = {1, 0};
  CHECK(hidden_layer_loss(tape, t, s, {1, 1}).item() == 4.0);
}

TEST_CASE("pooled hidden loss examples") {
  Tape tape(Tape::Mode::kInference);
  const Tensor a({1, 2}, {0, 0}), b({1, 2}, {1, 1});
  CHECK(pooled_hidden_loss(tape, a, a).item() == 0.0);
  CHECK(pooled_hidden_loss(tape, a, b).item() == 1.0);
  Rng rng(1);
  const Tensor x = testing::random_tensor({3, 4}, rng, false);
  const Tensor y = testing::random_tensor({3, 4}, rng, false);
  CHECK(pooled_hidden_loss(tape, x, y).item() == pooled_hidden_loss(tape, y, x).item());
}

TEST_CASE("distillation loss examples") {
  Tape tape(Tape::Mode::kInference);
  const Tensor z({1, 2}, {2, 0});
  const double self = distillation_loss(tape, z, z, 1.0).item();
  CHECK_THAT(self, WithinAbs(entropy_of_logits({2, 0}), 1e-12));
  CHECK_THAT(self, WithinAbs(0.365334, 1e-6));
  const double uniform = distillation_loss(tape, Tensor({1, 2}, {1000, 0}), Tensor({1, 2}, {0, 0}), 1.0).item();
  CHECK_THAT(uniform, WithinAbs(std::log(2.0), 1e-12));
  CHECK_THAT(uniform, WithinAbs(0.693147, 1e-6));
  CHECK_THROWS_AS(distillation_loss(tape, z, z, 0.0), ConfigError);
  CHECK_THROWS_AS(distillation_loss(tape, z, z, -1.0), ConfigError);
}

TEST_CASE("distillation loss is minimized by the teacher distribution") {
  Rng rng(2);
  Tape tape(Tape::Mode::kInference);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor teacher = testing::random_tensor({1, 4}, rng, false);
    const double at_teacher = distillation_loss(tape, teacher, teacher, 1.0).item();
    const Tensor student = testing::random_tensor({1, 4}, rng, false);
    CHECK(distillation_loss(tape, teacher, student, 1.0).item() >= at_teacher - 1e-12);
  }
}

TEST_CASE("both temperature readings coincide at t = 1") {
  Rng rng(3);
  Tape tape(Tape::Mode::kInference);
  const Tensor t = testing::random_tensor({3, 4}, rng, false);
  const Tensor s = testing::random_tensor({3, 4}, rng, false);
  const double a = distillation_loss(tape, t, s, 1.0, ops::TemperatureMode::kLogits).item();
  const double b = distillation_loss(tape, t, s, 1.0, ops::TemperatureMode::kProbabilities).item();
  CHECK_THAT(a, WithinAbs(b, 1e-12));
}

TEST_CASE("total distillation loss") {
  Tape tape(Tape::Mode::kInference);
  CHECK(total_distill_loss(tape, DistillTerms{}).item() == 0.0);
  const DistillTerms terms{Tensor::scalar(4.0), Tensor::scalar(1.0), Tensor::scalar(std::log(2.0))};
  CHECK_THAT(total_distill_loss(tape, terms).item(), WithinAbs(5.693147, 1e-6));
  const DistillTerms partial{Tensor::scalar(4.0), Tensor(), Tensor::scalar(0.5)};
  CHECK(total_distill_loss(tape, partial).item() == 4.5);
}

TEST_CASE("total distillation loss equals the sum of its terms on a real batch") {
  Desk d;
  const auto pair = d.joint(4);
  Tape tape(Tape::Mode::kInference);
  const auto t = d.forward()(tape, *pair.teacher, *pair.teacher_heads, nullptr);
  auto s_pair = pair.student->clone();
  s_pair.layers[0].wq.mutable_values()[0] += 0.5;  // make the student differ
  const auto s = d.forward()(tape, s_pair, *pair.student_heads, nullptr);
  const auto cfg = DistillConfig::classification_defaults();
  const auto terms = distill_terms(tape, t, s, pair.map, cfg);
  const double expected = (terms.hidden_layer.item() + terms.pooled_hidden.item()) + terms.distill.item();
  CHECK(total_distill_loss(tape, terms).item() == expected);
  CHECK(terms.hidden_layer.item() == hidden_layer_loss(tape, t.state, s.state, pair.map).item());
  CHECK(terms.pooled_hidden.item() == pooled_hidden_loss(tape, t.pooled[0], s.pooled[0]).item());
  CHECK(terms.distill.item() == distillation_loss(tape, t.logits, s.logits, 1.0).item());
}

TEST_CASE("student loss composes the distillation and classification terms") {
  Tape tape(Tape::Mode::kInference);
  PathOutput t, s;
  t.state = manual_state(Tensor({1, 2}, {0, 0}), {Tensor({1, 2}, {1, 2})});
  s.state = manual_state(Tensor({1, 2}, {0, 0}), {Tensor({1, 2}, {3, 4})});
  t.pooled = {Tensor({1, 2}, {0, 0})};
  s.pooled = {Tensor({1, 2}, {1, 1})};
  t.logits = Tensor({1, 2}, {1000, 0});
  s.logits = Tensor({1, 2}, {0, 0});
  const std::vector<std::size_t> labels{0};
  const auto cfg = DistillConfig::classification_defaults();
  const auto ls = student_loss(tape, t, s, labels, {1, 1}, cfg);
  CHECK_THAT(ls.distill_total.item(), WithinAbs(5.0 + std::log(2.0), 1e-12));
  CHECK_THAT(ls.total.item(), WithinAbs(5.0 + 2 * std::log(2.0), 1e-12));
  CHECK_THAT(ls.total.item(), WithinAbs(6.386294, 1e-6));

  auto off = cfg;
  off.enable_hidden_layer_loss = off.enable_pooled_hidden_loss = off.enable_distill_loss = false;
  s.logits = Tensor({1, 2}, {1000, 0});
  CHECK(student_loss(tape, t, s, labels, {1, 1}, off).total.item() == 0.0);

  // A larger L_d with the classification term fixed raises L^s.
  s.logits = Tensor({1, 2}, {0, 0});
  s.pooled = {Tensor({1, 2}, {2, 2})};
  CHECK(student_loss(tape, t, s, labels, {1, 1}, cfg).total.item() > ls.total.item());
}

TEST_CASE("teacher loss examples") {
  Tape tape(Tape::Mode::kInference);
  PathOutput t;
  const std::vector<std::size_t> labels{2};
  t.logits = Tensor({1, 4}, {0, 0, 0, 0});
  CHECK_THAT(teacher_loss(tape, t, labels).item(), WithinAbs(std::log(4.0), 1e-12));
  CHECK_THAT(teacher_loss(tape, t, labels).item(), WithinAbs(1.386294, 1e-6));
  t.logits = Tensor({1, 4}, {0, 0, 1000, 0});
  CHECK(teacher_loss(tape, t, labels).item() == 0.0);
}

TEST_CASE("teacher loss never reaches student parameters and student loss never reaches the teacher") {
  Desk d;
  auto pair = d.joint(5);
  const auto cfg = DistillConfig::classification_defaults();
  const ParameterList params = pair.parameters();
  auto grads_of = [&](bool student) {
    zero_grads(params);
    Tape tape;
    const auto t = d.forward()(tape, *pair.teacher, *pair.teacher_heads, nullptr);
    const auto s = d.forward()(tape, *pair.student, *pair.student_heads, nullptr);
    backward(student ? student_loss(tape, t, s, d.labels, pair.map, cfg).total : teacher_loss(tape, t, d.labels),
             tape);
    return GradientSet::collect(params);
  };
  const auto from_t = grads_of(false);
  const auto student_part = from_t.partition(ParameterOwner::kStudent);
  for (const auto& [name, g] : student_part.entries()) {
    for (double v : g.values()) CHECK(v == 0.0);
  }
  CHECK(from_t.partition(ParameterOwner::kTeacher).l2_norm() > 0.0);
  const auto from_s = grads_of(true);
  const auto teacher_part = from_s.partition(ParameterOwner::kTeacher);
  for (const auto& [name, g] : teacher_part.entries()) {
    for (double v : g.values()) CHECK(v == 0.0);
  }
  CHECK(from_s.partition(ParameterOwner::kStudent).l2_norm() > 0.0);
}

TEST_CASE("perturbing the teacher changes L_d but not the student-loss gradient routing") {
  Desk d;
  auto pair = d.joint(6);
  const auto cfg = DistillConfig::classification_defaults();
  auto ld = [&] {
    return value_of([&](Tape& tape) {
      const auto t = d.forward()(tape, *pair.teacher, *pair.teacher_heads, nullptr);
      const auto s = d.forward()(tape, *pair.student, *pair.student_heads, nullptr);
      return total_distill_loss(tape, distill_terms(tape, t, s, pair.map, cfg));
    });
  };
  const double before = ld();
  pair.teacher->layers[3].ffn_w2.mutable_values()[0] += 0.3;
  CHECK(ld() != before);
}

TEST_CASE("block gradient average") {
  SECTION("K = 1 returns the layer unchanged") {
    const auto gs = layered_gradients(3, [](std::size_t l, std::size_t i) { return l * 10.0 + i * 0.25; });
    for (std::size_t b = 1; b <= 3; ++b) {
      const auto avg = block_gradient_average(gs, {1, 3}, b);
      for (const auto& [role, g] : avg) {
        CHECK(copy(g.values()) == copy(gs.at(layer_prefix("teacher.", b) + role).values()));
      }
    }
  }
  SECTION("K = 2 arithmetic mean") {
    const auto gs = layered_gradients(2, [](std::size_t l, std::size_t i) { return (i % 2 ? 3.0 : 1.0) + 2.0 * (l - 1); });
    const auto avg = block_gradient_average(gs, {2, 1}, 1);
    const auto& g = avg.at("attn.bq");
    CHECK(g.value(0) == 2.0);
    CHECK(g.value(1) == 4.0);
    CHECK(avg.size() == LayerParams::roles().size());
  }
  SECTION("a zero layer halves the other") {
    const auto gs = layered_gradients(4, [](std::size_t l, std::size_t i) { return l == 3 ? 0.0 : 0.5 + i; });
    const auto avg = block_gradient_average(gs, {2, 2}, 2);
    for (const auto& [role, g] : avg) {
      for (std::size_t i = 0; i < g.numel(); ++i) CHECK(g.value(i) == (0.5 + i) / 2);
    }
  }
  SECTION("identical layers average to themselves") {
    const auto gs = layered_gradients(4, [](std::size_t, std::size_t i) { return 0.1 * i + 1.0 / 3.0; });
    const auto avg = block_gradient_average(gs, {4, 1}, 1);
    for (const auto& [role, g] : avg) {
      CHECK(copy(g.values()) == copy(gs.at("teacher.layer.1." + role).values()));
    }
  }
  SECTION("missing layer") {
    auto gs = layered_gradients(2, [](std::size_t, std::size_t) { return 1.0; });
    CHECK_THROWS_AS(block_gradient_average(gs, {4, 1}, 1), ContractError);
  }
}

TEST_CASE("momentum mix") {
  Rng rng(7);
  const Tensor gs = testing::random_tensor({3, 5}, rng, false);
  const Tensor gt = testing::random_tensor({3, 5}, rng, false);
  CHECK(copy(momentum_mix(gs, gt, 0.0).values()) == copy(gs.values()));
  CHECK(copy(momentum_mix(gs, gt, 1.0).values()) == copy(gt.values()));
  CHECK(momentum_mix(Tensor({1}, std::vector<double>{0}), Tensor({1}, std::vector<double>{10}), 0.1).value(0) == 1.0);
  for (double beta : {0.05, 0.1, 0.15, 0.3, 0.5, 0.9}) {
    const Tensor m = momentum_mix(gs, gt, beta);
    for (std::size_t i = 0; i < m.numel(); ++i) {
      CHECK(m.value(i) >= std::min(gs.value(i), gt.value(i)));
      CHECK(m.value(i) <= std::max(gs.value(i), gt.value(i)));
    }
  }
  CHECK_THROWS_AS(momentum_mix(gs, gt, 1.5), ConfigError);
  CHECK_THROWS_AS(momentum_mix(gs, Tensor({5, 3}), 0.1), DimensionError);
}

TEST_CASE("adam examples") {
  SECTION("zero gradient leaves parameters unchanged") {
    Tensor w({2}, {0.25, -3.0}, true);
    const ParameterList params{{"student.w", w}};
    GradientSet gs;
    gs.set("student.w", Tensor({2}, {0, 0}));
    AdamState st;
    adam_step(st, params, gs);
    CHECK(w.value(0) == 0.25);
    CHECK(w.value(1) == -3.0);
  }
  SECTION("first step of a scalar") {
    Tensor w({1}, {0.0}, true);
    const ParameterList params{{"student.w", w}};
    GradientSet gs;
    gs.set("student.w", Tensor({1}, std::vector<double>{1.0}));
    AdamState st;
    st.config.lr = 0.1;
    adam_step(st, params, gs);
    CHECK_THAT(w.value(0), WithinAbs(-0.1 / (1.0 + 1e-8), 1e-15));
    CHECK(st.step == 1);
  }
  SECTION("coverage mismatch") {
    Tensor w({1}, {0.0}, true);
    AdamState st;
    CHECK_THROWS_AS(adam_step(st, {{"student.w", w}}, GradientSet{}), ContractError);
  }
}

TEST_CASE("adam is deterministic over 100 steps") {
  auto run = [] {
    Rng rng(8);
    Tensor w = testing::random_tensor({4, 3}, rng);
    const Tensor x = testing::random_tensor({5, 4}, rng, false);
    const ParameterList params{{"student.w", w}};
    AdamState st;
    for (int i = 0; i < 100; ++i) {
      zero_grads(params);
      Tape tape;
      backward(ops::sum(tape, ops::gelu(tape, ops::matmul(tape, x, w))), tape);
      adam_step(st, params, GradientSet::collect(params));
    }
    return copy(w.values());
  };
  CHECK(run() == run());
}

TEST_CASE("joint step at beta 0 equals joint step without momentum") {
  Desk d;
  auto a = d.joint(9);
  auto b = d.joint(9);
  auto cfg_a = DistillConfig::classification_defaults();
  cfg_a.beta = 0.0;
  auto cfg_b = DistillConfig::classification_defaults();
  cfg_b.enable_momentum = false;
  AdamState adam_a, adam_b;
  for (int i = 0; i < 5; ++i) {
    const auto ra = joint_step(a, d.forward(), d.labels, cfg_a, adam_a, nullptr);
    const auto rb = joint_step(b, d.forward(), d.labels, cfg_b, adam_b, nullptr);
    CHECK(ra.student_loss == rb.student_loss);
  }
  CHECK(snapshot(a.parameters()) == snapshot(b.parameters()));
}

TEST_CASE("joint step with distillation off trains the student on its classification loss") {
  Desk d;
  auto pair = d.joint(10);
  auto cfg = DistillConfig::classification_defaults();
  cfg.enable_hidden_layer_loss = cfg.enable_pooled_hidden_loss = cfg.enable_distill_loss = false;
  cfg.enable_momentum = false;
  const auto student_params = [&] {
    ParameterList out;
    pair.student->append_parameters(out, "student.");
    return out;
  }();
  zero_grads(pair.parameters());
  {
    Tape tape;
    const auto s = d.forward()(tape, *pair.student, *pair.student_heads, nullptr);
    backward(ops::cross_entropy(tape, s.logits, d.labels), tape);
  }
  const auto expected = GradientSet::collect(student_params);
  GradientSet seen;
  AdamState adam;
  const auto r = joint_step(pair, d.forward(), d.labels, cfg, adam, nullptr, [&](const GradientSet& g) { seen = g; });
  for (const auto& p : student_params) CHECK(copy(seen.at(p.name).values()) == copy(expected.at(p.name).values()));
  CHECK(r.hidden_layer_loss == 0.0);
  CHECK(r.distill_loss == 0.0);
}

TEST_CASE("joint step smoke on a one-sample batch") {
  Desk d;
  d.seqs.resize(1);
  d.labels = {1};
  d.batch = TokenBatch::single(d.seqs[0]);
  auto pair = d.joint(11);
  pair.student->layers[0].wq.mutable_values()[0] += 0.1;
  AdamState adam;
  Rng dropout(3);
  const auto r = joint_step(pair, d.forward(), d.labels, DistillConfig::classification_defaults(), adam, &dropout);
  for (double v : {r.teacher_loss, r.student_loss, r.hidden_layer_loss, r.pooled_hidden_loss, r.distill_loss,
                   r.grad_norm_teacher, r.grad_norm_student}) {
    CHECK(std::isfinite(v));
  }
  CHECK(r.grad_norm_teacher > 0.0);
  CHECK(r.grad_norm_student > 0.0);
  CHECK(r.step == 1);
}

TEST_CASE("joint step rejects other modes") {
  Desk d;
  auto pair = d.joint(12);
  auto cfg = DistillConfig::classification_defaults();
  cfg.mode = TrainingMode::kDisjoint;
  AdamState adam;
  CHECK_THROWS_AS(joint_step(pair, d.forward(), d.labels, cfg, adam, nullptr), ConfigError);
}

TEST_CASE("momentum mixing stays between the student and block gradients inside a joint step") {
  Desk d;
  auto pair = d.joint(13);
  auto cfg = DistillConfig::classification_defaults();
  cfg.beta = 0.3;
  GradientSet mixed;
  AdamState adam;
  auto raw_cfg = cfg;
  raw_cfg.enable_momentum = false;
  auto twin = d.joint(13);
  GradientSet raw;
  AdamState adam2;
  joint_step(twin, d.forward(), d.labels, raw_cfg, adam2, nullptr, [&](const GradientSet& g) { raw = g; });
  joint_step(pair, d.forward(), d.labels, cfg, adam, nullptr, [&](const GradientSet& g) { mixed = g; });
  for (std::size_t k = 1; k <= pair.map.n; ++k) {
    const auto avg = block_gradient_average(raw, pair.map, k);
    for (const auto& [role, gt] : avg) {
      const std::string name = layer_prefix("student.", k) + role;
      const auto gs = raw.at(name).values();
      const auto m = mixed.at(name).values();
      for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(m[i] >= std::min(gs[i], gt.value(i)));
        CHECK(m[i] <= std::max(gs[i], gt.value(i)));
      }
    }
  }
}

TEST_CASE("frozen teacher stays fixed while the student trains") {
  Desk d;
  Rng rng(14);
  auto pair = make_teacher_only(desk_config(4), {2, 2}, {4, 3, false}, rng);
  attach_student_to_frozen_teacher(pair);
  REQUIRE_FALSE(pair.heads_shared());
  const auto teacher_before = snapshot(pair.teacher_parameters());
  const auto student_before = snapshot(pair.student_parameters());
  AdamState adam;
  for (bool momentum : {true, false}) {
    auto cfg = DistillConfig::classification_defaults();
    cfg.mode = TrainingMode::kDisjoint;
    cfg.disjoint_momentum = momentum;
    frozen_teacher_step(pair, d.forward(), d.labels, cfg, adam, nullptr);
  }
  CHECK(snapshot(pair.teacher_parameters()) == teacher_before);
  CHECK(snapshot(pair.student_parameters()) != student_before);
}

TEST_CASE("disjoint student curve is reproducible and differs from the joint student") {
  Desk d;
  auto run_disjoint = [&] {
    Rng rng(15);
    auto pair = make_teacher_only(desk_config(4), {2, 2}, {4, 3, false}, rng);
    attach_student_to_frozen_teacher(pair);
    auto cfg = DistillConfig::classification_defaults();
    cfg.mode = TrainingMode::kDisjoint;
    cfg.beta = 0.0;
    AdamState adam;
    std::vector<double> curve;
    for (int i = 0; i < 4; ++i) curve.push_back(frozen_teacher_step(pair, d.forward(), d.labels, cfg, adam, nullptr).student_loss);
    return std::make_pair(curve, snapshot(pair.student_parameters()));
  };
  const auto a = run_disjoint();
  const auto b = run_disjoint();
  CHECK(a.first == b.first);

  Rng rng(15);
  auto joint = make_joint_pair(desk_config(4), {2, 2}, {4, 3, false}, rng);
  auto cfg = DistillConfig::classification_defaults();
  cfg.beta = 0.0;
  AdamState adam;
  for (int i = 0; i < 4; ++i) joint_step(joint, d.forward(), d.labels, cfg, adam, nullptr);
  CHECK(snapshot(joint.student_parameters()) != a.second);
}

TEST_CASE("training modes parse and print") {
  for (auto m : {TrainingMode::kJoint, TrainingMode::kDisjoint, TrainingMode::kStudentOnly, TrainingMode::kTeacherOnly}) {
    CHECK(parse_training_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_training_mode("both"), ConfigError);
  CHECK(DistillConfig::classification_defaults().beta == 0.1);
  CHECK(DistillConfig::recommendation_defaults().beta == 0.15);
  CHECK(DistillConfig{}.temperature == 1.0);
}
