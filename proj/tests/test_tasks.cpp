#include "catch_amalgamated.hpp"

#include <cmath>

#include "newsdistill/errors.hpp"
#include "newsdistill/metrics.hpp"
#include "newsdistill/tasks.hpp"
#include "test_support.hpp"

using namespace newsdistill;
using namespace newsdistill::tasks;
using Catch::Matchers::WithinAbs;

namespace {

EncoderConfig desk_config(std::size_t layers, std::size_t vocab = 24) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.max_seq_len = 8;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.num_layers = layers;
  c.dropout = 0.0;
  return c;
}

std::vector<double> copy(std::span<const double> v) { return {v.begin(), v.end()}; }

// Six short news items and impressions over them.
data::ImpressionDataset toy_impressions() {
  data::ImpressionDataset ds;
  ds.news = {{{3, 4, 5}, {1, 1, 1}}, {{6, 7, 0}, {1, 1, 0}}, {{8, 9, 10}, {1, 1, 1}},
             {{11, 12, 0}, {1, 1, 0}}, {{13, 14, 15}, {1, 1, 1}}, {{16, 0, 0}, {1, 0, 0}}};
  for (std::size_t i = 0; i < ds.news.size(); ++i) ds.news_ids.push_back("N" + std::to_string(i));
  return ds;
}

Tensor row_tensor(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

}  // namespace

TEST_CASE("news embeddings have hidden extent for any length and are deterministic") {
  Rng rng(1);
  const auto enc = EncoderParams::random(desk_config(2), rng);
  const auto heads = make_heads({4, 0, false}, 8, rng);
  for (std::size_t len : {1, 3, 8}) {
    TokenSequence s{std::vector<std::size_t>(len, 5), Mask(len, 1)};
    Tape tape(Tape::Mode::kInference);
    const Tensor a = news_embed(tape, enc, heads, TokenBatch::single(s), nullptr);
    const Tensor b = news_embed(tape, enc, heads, TokenBatch::single(s), nullptr);
    CHECK(a.shape() == Shape{1, 8});
    CHECK(copy(a.values()) == copy(b.values()));
  }
}

TEST_CASE("user encoder examples") {
  Rng rng(2);
  const auto user = PoolingParams::random(4, 3, rng);
  const Tensor news = testing::random_tensor({5, 4}, rng, false);
  Tape tape(Tape::Mode::kInference);

  SECTION("single click") {
    const std::vector<std::size_t> rows{3, ops::kZeroRow, ops::kZeroRow};
    const Tensor u = user_encode(tape, user, news, rows, {1, 3});
    for (std::size_t c = 0; c < 4; ++c) CHECK(u.at(0, c) == news.at(3, c));
  }
  SECTION("identical clicks") {
    const std::vector<std::size_t> rows{2, 2, 2};
    const Tensor u = user_encode(tape, user, news, rows, {1, 3});
    for (std::size_t c = 0; c < 4; ++c) CHECK_THAT(u.at(0, c), WithinAbs(news.at(2, c), 1e-14));
  }
  SECTION("history order does not matter, bitwise") {
    std::vector<std::size_t> rows{0, 1, 2, 3, 4};
    const auto base = copy(user_encode(tape, user, news, rows, {1, 5}).values());
    for (int trial = 0; trial < 10; ++trial) {
      rng.shuffle(rows);
      CHECK(copy(user_encode(tape, user, news, rows, {1, 5}).values()) == base);
    }
  }
  SECTION("cold user") {
    const std::vector<std::size_t> rows(3, ops::kZeroRow);
    const Tensor u = user_encode(tape, user, news, rows, {1, 3});
    for (double v : u.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("click score examples") {
  Tape tape(Tape::Mode::kInference);
  CHECK(click_score(tape, row_tensor({0, 0}), row_tensor({5, -7})).item() == 0.0);
  CHECK(click_score(tape, row_tensor({1, 0}), row_tensor({0, 1})).item() == 0.0);
  CHECK(click_score(tape, row_tensor({1, 2}), row_tensor({3, 4})).item() == 11.0);
  Rng rng(3);
  const Tensor u = testing::random_tensor({6}, rng, false);
  const Tensor h = testing::random_tensor({6}, rng, false);
  const double base = click_score(tape, u, h).item();
  for (double a : {-2.0, 0.5, 3.0}) {
    Tensor au({6});
    for (std::size_t i = 0; i < 6; ++i) au.mutable_values()[i] = a * u.value(i);
    CHECK_THAT(click_score(tape, au, h).item(), WithinAbs(a * base, 1e-12));
  }
  CHECK_THROWS_AS(click_score(tape, row_tensor({1, 2}), row_tensor({1, 2, 3})), DimensionError);
}

TEST_CASE("recommendation batches keep the most recent clicks and encode each news once") {
  auto ds = toy_impressions();
  data::Impression im{{0, 1, 2, 3}, {4, 1}, {1, 0}, "U1"};
  const std::vector<const data::Impression*> ptrs{&im};
  const auto batch = make_recsys_batch(ds, ptrs, 2);
  CHECK(batch.news.layout.batch == 4);  // news 2, 3, 4, 1
  CHECK(batch.history_rows.size() == 2);
  CHECK(batch.history_rows[0] == 0);
  CHECK(batch.history_rows[1] == 1);
  CHECK(batch.candidate_rows == std::vector<std::size_t>{2, 3});
  CHECK(batch.positives == std::vector<std::size_t>{0});
  CHECK(batch.uniform_candidates() == 2);
}

TEST_CASE("equal candidate scores give ln 2 per path") {
  auto ds = toy_impressions();
  data::Impression im{{0, 1}, {2, 2}, {1, 0}, "U1"};
  const std::vector<const data::Impression*> ptrs{&im};
  const auto batch = make_recsys_batch(ds, ptrs, 4);
  Rng rng(4);
  const auto pair = make_joint_pair(desk_config(2), {1, 2}, {4, 0, true}, rng);
  Tape tape(Tape::Mode::kInference);
  for (bool student : {false, true}) {
    const auto out = recsys_forward(tape, student ? *pair.student : *pair.teacher, *pair.teacher_heads, batch, nullptr);
    CHECK_THAT(ops::cross_entropy(tape, out.logits, batch.positives).item(), WithinAbs(std::log(2.0), 1e-12));
  }
}

TEST_CASE("candidate softmax is a probability vector per impression") {
  auto ds = toy_impressions();
  std::vector<data::Impression> ims{{{0, 1}, {2, 3, 4}, {1, 0, 0}, "U1"}, {{5}, {0, 1, 3}, {0, 1, 0}, "U2"}};
  const std::vector<const data::Impression*> ptrs{&ims[0], &ims[1]};
  const auto batch = make_recsys_batch(ds, ptrs, 3);
  Rng rng(5);
  const auto pair = make_joint_pair(desk_config(2), {1, 2}, {4, 0, true}, rng);
  Tape tape(Tape::Mode::kInference);
  const auto out = recsys_forward(tape, *pair.teacher, *pair.teacher_heads, batch, nullptr);
  const Tensor p = ops::softmax(tape, out.logits, 1);
  for (std::size_t b = 0; b < 2; ++b) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(p.at(b, c) >= 0.0);
      s += p.at(b, c);
    }
    CHECK_THAT(s, WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("identical recommendation paths: zero hidden losses, distillation equals score entropy") {
  auto ds = toy_impressions();
  std::vector<data::Impression> ims{{{0, 1}, {2, 3, 4}, {1, 0, 0}, "U1"}, {{5, 3}, {0, 1, 2}, {0, 1, 0}, "U2"}};
  const std::vector<const data::Impression*> ptrs{&ims[0], &ims[1]};
  const auto batch = make_recsys_batch(ds, ptrs, 3);
  Rng rng(6);
  const auto pair = make_joint_pair(desk_config(3), {1, 3}, {4, 0, true}, rng);
  Tape tape(Tape::Mode::kInference);
  const auto t = recsys_forward(tape, *pair.teacher, *pair.teacher_heads, batch, nullptr);
  const auto s = recsys_forward(tape, *pair.student, *pair.student_heads, batch, nullptr);
  const auto terms = distill_terms(tape, t, s, pair.map, DistillConfig::recommendation_defaults());
  CHECK(terms.hidden_layer.item() == 0.0);
  CHECK(terms.pooled_hidden.item() == 0.0);
  double entropy = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    double mx = -1e300, z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) mx = std::max(mx, t.logits.at(b, c));
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(t.logits.at(b, c) - mx);
    for (std::size_t c = 0; c < 3; ++c) {
      const double p = std::exp(t.logits.at(b, c) - mx) / z;
      entropy -= p * std::log(p);
    }
  }
  CHECK_THAT(terms.distill.item(), WithinAbs(entropy / 2, 1e-10));
}

TEST_CASE("recommendation student loss gradient matches central differences") {
  auto ds = toy_impressions();
  data::Impression im{{0}, {1, 2}, {0, 1}, "U1"};
  const std::vector<const data::Impression*> ptrs{&im};
  const auto batch = make_recsys_batch(ds, ptrs, 2);
  Rng rng(7);
  // Separate heads so every student tensor is distinct from the teacher's.
  auto pair = make_joint_pair(desk_config(2), {2, 1}, {4, 0, true}, rng);
  pair.student_heads = pair.teacher_heads->clone();
  for (auto& l : pair.student->layers) {
    for (double& v : l.ffn_w1.mutable_values()) v += 0.05 * rng.normal();
  }
  const auto cfg = DistillConfig::recommendation_defaults();
  auto build = [&](Tape& tape) {
    const auto t = recsys_forward(tape, *pair.teacher, *pair.teacher_heads, batch, nullptr);
    const auto s = recsys_forward(tape, *pair.student, *pair.student_heads, batch, nullptr);
    return student_loss(tape, t, s, batch.positives, pair.map, cfg).total;
  };
  const ParameterList params = pair.student_parameters();
  zero_grads(params);
  {
    Tape tape;
    backward(build(tape), tape);
  }
  auto value = [&] {
    Tape tape(Tape::Mode::kInference);
    return build(tape).item();
  };
  double worst = 0.0;
  for (int i = 0; i < 60; ++i) {
    const auto& p = params[rng.index(params.size())];
    const std::size_t e = rng.index(p.tensor.numel());
    const double analytic = p.tensor.grad()[e];
    const double numeric = testing::central_difference(value, p.tensor, e, 1e-6);
    if (std::abs(analytic) < 1e-7 && std::abs(numeric) < 1e-7) continue;
    worst = std::max(worst, testing::rel_err(analytic, numeric));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("training instances") {
  auto ds = toy_impressions();
  Rng rng(8);
  SECTION("exactly k negatives keep order") {
    const std::vector<data::Impression> ims{{{0}, {1, 2, 3}, {0, 1, 0}, "U"}};
    const auto out = training_instances(ds, ims, 2, rng);
    REQUIRE(out.size() == 1);
    CHECK(out[0].candidates == std::vector<std::size_t>{2, 1, 3});
    CHECK(out[0].labels == std::vector<int>{1, 0, 0});
  }
  SECTION("one instance per click, sampled negatives from the impression") {
    const std::vector<data::Impression> ims{{{0}, {1, 2, 3, 4, 5}, {1, 0, 1, 0, 0}, "U"}};
    const auto out = training_instances(ds, ims, 2, rng);
    REQUIRE(out.size() == 2);
    CHECK(out[0].candidates[0] == 1);
    CHECK(out[1].candidates[0] == 3);
    for (const auto& inst : out) {
      CHECK(inst.candidates.size() == 3);
      for (std::size_t c = 1; c < 3; ++c) {
        const auto n = inst.candidates[c];
        CHECK((n == 2 || n == 4 || n == 5));
      }
    }
  }
  SECTION("impressions without negatives draw from the news table") {
    const std::vector<data::Impression> ims{{{0}, {1}, {1}, "U"}};
    const auto out = training_instances(ds, ims, 3, rng);
    REQUIRE(out.size() == 1);
    for (std::size_t c = 1; c < 4; ++c) CHECK(out[0].candidates[c] != 1);
  }
}

TEST_CASE("untrained retrieval model scores balanced random labels near chance") {
  data::RetrievalSpec spec;
  spec.seed = 9;
  spec.n_train = 10;
  spec.n_valid = 10;
  spec.n_test = 400;
  auto gen = data::gen_synthetic_retrieval(spec);
  Rng rng(10);
  for (auto& s : gen.dataset.test) s.label = static_cast<int>(rng.index(2));
  auto cfg = desk_config(2, gen.vocab.size());
  cfg.max_seq_len = 16;
  const auto enc = EncoderParams::random(cfg, rng);
  const auto heads = make_heads({4, 0, false}, 8, rng);
  std::vector<const data::RetrievalSample*> ptrs;
  for (const auto& s : gen.dataset.test) ptrs.push_back(&s);
  Tape tape(Tape::Mode::kInference);
  const auto batch = make_retrieval_batch(ptrs);
  const Tensor scores = retrieval_scores(tape, enc, heads, batch, nullptr);
  metrics::RankedImpression imp;
  imp.scores = copy(scores.values());
  for (double l : batch.labels) imp.labels.push_back(static_cast<int>(l));
  const double a = *metrics::auc(imp);
  CHECK(a > 0.4);
  CHECK(a < 0.6);
}

TEST_CASE("retrieval fine-tuning separates a separable set") {
  data::RetrievalSpec spec;
  spec.seed = 3;
  spec.vocab_size = 120;
  spec.num_topics = 4;
  spec.n_train = 2000;
  spec.n_valid = 100;
  spec.n_test = 300;
  const auto gen = data::gen_synthetic_retrieval(spec);
  TaskData data;
  data.task = TaskKind::kRetrieval;
  data.retrieval = gen.dataset;
  TrainOptions options;
  options.task = TaskKind::kRetrieval;
  options.distill.mode = TrainingMode::kStudentOnly;
  options.epochs = 6;
  options.seed = 3;
  options.adam.lr = 3e-3;
  options.eval_every = 0;
  auto cfg = desk_config(2, gen.vocab.size());
  cfg.max_seq_len = 16;
  cfg.hidden_dim = 16;
  cfg.ffn_dim = 32;
  auto state = make_state(options, initial_pair(options, cfg, {1, 2}, head_spec(TaskKind::kRetrieval, 8, 0)));
  const auto before = evaluate(state.pair, data, "test", options)[0].value("auc");
  train(state, data, options);
  const auto m = evaluate(state.pair, data, "test", options);
  REQUIRE(m.size() == 1);
  CHECK(m[0].model == "student");
  CHECK(m[0].value("auc") >= 0.95);
  CHECK(m[0].value("auc") > before);
}

TEST_CASE("retrieval rejects distillation modes") {
  TrainOptions options;
  options.task = TaskKind::kRetrieval;
  options.distill.mode = TrainingMode::kJoint;
  CHECK_THROWS_AS(initial_pair(options, desk_config(2), {1, 2}, head_spec(TaskKind::kRetrieval, 4, 0)), ConfigError);
}

TEST_CASE("transfer keeps one encoder and the pooling layer") {
  Rng rng(12);
  const auto pair = make_joint_pair(desk_config(4), {2, 2}, {4, 0, true}, rng);
  const auto t = transfer_pair(pair);
  REQUIRE(t.student);
  CHECK_FALSE(t.teacher);
  CHECK(t.student->layers.size() == 2);
  CHECK_FALSE(t.student_heads->user);
  CHECK_FALSE(t.student->layers[0].wq.is_same(pair.student->layers[0].wq));
  CHECK(copy(t.student_heads->pool.query.values()) == copy(pair.student_heads->pool.query.values()));
  CHECK(transfer_pair(pair, true).student->layers.size() == 4);
}

TEST_CASE("task names and selection metrics") {
  for (auto t : {TaskKind::kClassify, TaskKind::kRecsys, TaskKind::kRetrieval}) CHECK(parse_task(to_string(t)) == t);
  CHECK_THROWS_AS(parse_task("rank"), ConfigError);
  CHECK(selection_metric(TaskKind::kClassify) == "accuracy");
  CHECK(selection_metric(TaskKind::kRecsys) == "auc");
}
