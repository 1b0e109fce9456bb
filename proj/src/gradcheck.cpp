#include "newsdistill/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "newsdistill/data.hpp"
#include "newsdistill/distill.hpp"
#include "newsdistill/errors.hpp"
#include "newsdistill/tasks.hpp"

namespace newsdistill {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradcheckResult check_gradients(const std::string& name, const ParameterList& params, const LossBuilder& loss,
                                std::size_t samples, double step, double tolerance, Rng& rng) {
  if (params.empty()) throw ContractError("gradcheck of " + name + " has no parameters");
  if (step <= 0.0) throw ConfigError("gradcheck.step must be positive");
  GradcheckResult res;
  res.loss = name;
  res.tolerance = tolerance;

  zero_grads(params);
  {
    Tape tape;
    const Tensor l = loss(tape);
    backward(l, tape);
  }

  const std::size_t total = count_scalars(params);
  const std::size_t want = std::min(samples, total);
  std::set<std::pair<std::size_t, std::size_t>> picked;
  while (picked.size() < want) {
    const std::size_t t = rng.index(params.size());
    picked.emplace(t, rng.index(params[t].tensor.numel()));
  }

  auto eval = [&] {
    Tape tape(Tape::Mode::kInference);
    return loss(tape).item();
  };
  for (const auto& [t, i] : picked) {
    Tensor p = params[t].tensor;
    const auto g = p.grad();
    const double analytic = g.empty() ? 0.0 : g[i];
    double& v = p.mutable_values()[i];
    const double saved = v;
    v = saved + step;
    const double up = eval();
    v = saved - step;
    const double down = eval();
    v = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err = relative_error(analytic, numeric);
    if (!std::isfinite(err)) throw NumericError("gradcheck of " + name + " produced a non-finite value");
    if (res.worst_parameter.empty() || err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_parameter = params[t].name + "[" + std::to_string(i) + "]";
    }
    ++res.samples;
  }
  zero_grads(params);
  return res;
}

namespace {

struct DeskModel {
  BlockMap map;
  EncoderParams teacher, student;
  HeadParams teacher_heads, student_heads;

  ParameterList teacher_params() const {
    ParameterList out;
    teacher.append_parameters(out, "teacher.");
    teacher_heads.append_parameters(out, "teacher_head.");
    return out;
  }
  ParameterList student_encoder_params() const {
    ParameterList out;
    student.append_parameters(out, "student.");
    return out;
  }
  ParameterList student_pool_params() const {
    ParameterList out = student_encoder_params();
    student_heads.pool.append_parameters(out, "student_head.pool.");
    return out;
  }
  ParameterList student_params() const {
    ParameterList out = student_encoder_params();
    student_heads.append_parameters(out, "student_head.");
    return out;
  }
};

// Teacher and student with independent random weights and separate heads, so
// every student-loss gradient is the student's alone.
DeskModel desk_model(const RunConfig& config, const HeadSpec& spec, std::size_t vocab_size, Rng& rng) {
  DeskModel m;
  m.map = config.block_map();
  EncoderConfig tc = config.encoder;
  tc.vocab_size = vocab_size;
  tc.dropout = 0.0;
  EncoderConfig sc = tc;
  sc.num_layers = m.map.n;
  m.teacher = EncoderParams::random(tc, rng);
  m.student = EncoderParams::random(sc, rng);
  m.teacher_heads = make_heads(spec, tc.hidden_dim, rng);
  m.student_heads = make_heads(spec, tc.hidden_dim, rng);
  return m;
}

constexpr std::size_t kDeskBatch = 6;

}  // namespace

std::vector<GradcheckResult> gradcheck_suite(const RunConfig& config) {
  config.validate();
  const auto& g = config.gradcheck;
  const auto& syn = config.data.synthetic;
  const std::uint64_t seed = config.train.seed;
  Rng rng = Rng(seed).fork(11);
  std::vector<GradcheckResult> out;
  DistillConfig dc = config.train.distill;
  dc.enable_hidden_layer_loss = dc.enable_pooled_hidden_loss = dc.enable_distill_loss = true;

  // Classification.
  {
    data::SyntheticSpec spec;
    spec.seed = seed;
    spec.vocab_size = syn.vocab_size;
    spec.num_classes = syn.num_classes;
    spec.seq_len = std::min(syn.seq_len, config.encoder.max_seq_len);
    spec.signal_strength = syn.signal_strength;
    spec.indicators_per_class = syn.indicators_per_class;
    spec.n_train = kDeskBatch;
    spec.n_valid = spec.n_test = 0;
    const auto gen = data::gen_synthetic_classification(spec);
    std::vector<const data::ClassifySample*> batch;
    std::vector<std::size_t> labels;
    for (const auto& s : gen.dataset.train) {
      batch.push_back(&s);
      labels.push_back(s.label);
    }
    const TokenBatch tokens = tasks::classify_tokens(batch);
    const DeskModel m = desk_model(config, tasks::head_spec(tasks::TaskKind::kClassify, config.attn_dim, syn.num_classes),
                                   gen.vocab.size(), rng);
    auto paths = [&](Tape& tape) {
      return std::pair{tasks::classify_forward(tape, m.teacher, m.teacher_heads, tokens, nullptr),
                       tasks::classify_forward(tape, m.student, m.student_heads, tokens, nullptr)};
    };
    auto run = [&](const std::string& name, const ParameterList& params, const LossBuilder& fn) {
      out.push_back(check_gradients(name, params, fn, g.samples, g.step, g.tolerance, rng));
    };
    run("L_hidden_l", m.student_encoder_params(), [&](Tape& tape) {
      auto [t, s] = paths(tape);
      return hidden_layer_loss(tape, t.state, s.state, m.map);
    });
    run("L_hidden_p", m.student_pool_params(), [&](Tape& tape) {
      auto [t, s] = paths(tape);
      return pooled_hidden_loss(tape, t.pooled.at(0), s.pooled.at(0));
    });
    run("L_distill", m.student_params(), [&](Tape& tape) {
      auto [t, s] = paths(tape);
      return distillation_loss(tape, t.logits, s.logits, dc.temperature, dc.temperature_mode);
    });
    run("L_d", m.student_params(), [&](Tape& tape) {
      auto [t, s] = paths(tape);
      return total_distill_loss(tape, distill_terms(tape, t, s, m.map, dc));
    });
    run("L_s", m.student_params(), [&](Tape& tape) {
      auto [t, s] = paths(tape);
      return student_loss(tape, t, s, labels, m.map, dc).total;
    });
    run("L_t", m.teacher_params(), [&](Tape& tape) {
      return teacher_loss(tape, tasks::classify_forward(tape, m.teacher, m.teacher_heads, tokens, nullptr), labels);
    });
  }

  // Recommendation.
  {
    data::ImpressionSpec spec;
    spec.seed = seed;
    spec.vocab_size = syn.vocab_size;
    spec.num_topics = syn.num_topics;
    spec.seq_len = std::min(syn.seq_len, config.encoder.max_seq_len);
    spec.news_per_topic = 4;
    spec.num_users = 8;
    spec.history_len = std::min<std::size_t>(syn.clicks, 4);
    spec.num_negatives = std::min<std::size_t>(syn.negatives, 3);
    spec.n_train = 3;
    spec.n_valid = spec.n_test = 0;
    const auto gen = data::gen_synthetic_impressions(spec);
    Rng sample_rng = rng.fork(1);
    const auto instances = tasks::training_instances(gen.dataset, gen.dataset.train, spec.num_negatives, sample_rng);
    std::vector<const data::Impression*> batch;
    for (const auto& im : instances) batch.push_back(&im);
    const tasks::RecsysBatch rb = tasks::make_recsys_batch(gen.dataset, batch, spec.history_len);
    const DeskModel m =
        desk_model(config, tasks::head_spec(tasks::TaskKind::kRecsys, config.attn_dim, 0), gen.vocab.size(), rng);
    out.push_back(check_gradients(
        "recsys.L_s", m.student_params(),
        [&](Tape& tape) {
          const auto t = tasks::recsys_forward(tape, m.teacher, m.teacher_heads, rb, nullptr);
          const auto s = tasks::recsys_forward(tape, m.student, m.student_heads, rb, nullptr);
          return student_loss(tape, t, s, rb.positives, m.map, dc).total;
        },
        g.samples, g.step, g.tolerance, rng));
    out.push_back(check_gradients(
        "recsys.L_t", m.teacher_params(),
        [&](Tape& tape) {
          return teacher_loss(tape, tasks::recsys_forward(tape, m.teacher, m.teacher_heads, rb, nullptr), rb.positives);
        },
        g.samples, g.step, g.tolerance, rng));
  }

  // Retrieval.
  {
    data::RetrievalSpec spec{seed, syn.vocab_size, std::max<std::size_t>(syn.num_topics, 2),
                             std::min(syn.query_len, config.encoder.max_seq_len),
                             std::min(syn.doc_len, config.encoder.max_seq_len), kDeskBatch, 0, 0};
    const auto gen = data::gen_synthetic_retrieval(spec);
    std::vector<const data::RetrievalSample*> batch;
    for (const auto& s : gen.dataset.train) batch.push_back(&s);
    const tasks::RetrievalBatch b = tasks::make_retrieval_batch(batch);
    HeadSpec hs;
    hs.attn_dim = config.attn_dim;
    const DeskModel m = desk_model(config, hs, gen.vocab.size(), rng);
    out.push_back(check_gradients(
        "retrieval.bce", m.student_pool_params(),
        [&](Tape& tape) {
          return ops::bce_with_logits(tape, tasks::retrieval_scores(tape, m.student, m.student_heads, b, nullptr),
                                      b.labels);
        },
        g.samples, g.step, g.tolerance, rng));
  }
  return out;
}

}  // namespace newsdistill
