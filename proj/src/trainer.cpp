#include <algorithm>
#include <cmath>

#include "newsdistill/errors.hpp"
#include "newsdistill/tasks.hpp"

namespace newsdistill::tasks {

double ModelMetrics::value(const std::string& metric) const {
  for (const auto& r : records) {
    if (r.metric == metric) return r.value;
  }
  throw ContractError("metric '" + metric + "' not reported");
}

std::string selection_metric(TaskKind task) { return task == TaskKind::kClassify ? "accuracy" : "auc"; }

HeadSpec head_spec(TaskKind task, std::size_t attn_dim, std::size_t num_classes) {
  HeadSpec spec;
  spec.attn_dim = attn_dim;
  if (task == TaskKind::kClassify) {
    if (num_classes < 2) throw ConfigError("classification needs at least 2 classes");
    spec.num_classes = num_classes;
  }
  spec.user_encoder = task == TaskKind::kRecsys;
  return spec;
}

namespace {

enum class Salt : std::uint64_t { kModel = 1, kData = 2, kDropout = 3 };

Rng stream(std::uint64_t seed, Salt salt) { return Rng(seed).fork(static_cast<std::uint64_t>(salt)); }

void check_mode(const TrainOptions& options) {
  const auto mode = options.distill.mode;
  if (options.task == TaskKind::kRetrieval && (mode == TrainingMode::kJoint || mode == TrainingMode::kDisjoint)) {
    throw ConfigError("mode: retrieval fine-tuning runs as student-only or teacher-only, got " + to_string(mode));
  }
  if (options.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (options.epochs == 0) throw ConfigError("epochs must be positive");
}

}  // namespace

ModelPair initial_pair(const TrainOptions& options, const EncoderConfig& teacher_config, const BlockMap& map,
                       const HeadSpec& heads) {
  check_mode(options);
  Rng rng = stream(options.seed, Salt::kModel);
  switch (options.distill.mode) {
    case TrainingMode::kJoint: return make_joint_pair(teacher_config, map, heads, rng);
    case TrainingMode::kDisjoint:
    case TrainingMode::kTeacherOnly: return make_teacher_only(teacher_config, map, heads, rng);
    case TrainingMode::kStudentOnly: return make_student_only(teacher_config, map, heads, rng);
  }
  throw ConfigError("unknown training mode");
}

ModelPair transfer_pair(const ModelPair& source, bool take_teacher) {
  const bool teacher = take_teacher || !source.student;
  const auto& enc = teacher ? source.teacher : source.student;
  const auto& heads = teacher ? source.teacher_heads : source.student_heads;
  if (!enc || !heads) throw ContractError("checkpoint holds no " + std::string(teacher ? "teacher" : "student"));
  ModelPair out;
  out.map = source.map;
  out.student = enc->clone();
  HeadParams h;
  h.pool = heads->pool.clone();
  out.student_heads = std::move(h);
  return out;
}

TrainState make_state(const TrainOptions& options, ModelPair pair) {
  check_mode(options);
  TrainState s;
  s.pair = std::move(pair);
  s.adam.config = options.adam;
  s.data_rng = stream(options.seed, Salt::kData);
  s.dropout_rng = stream(options.seed, Salt::kDropout);
  s.phase_start_rng = s.data_rng;
  return s;
}

std::vector<std::size_t> predict_classes(const EncoderParams& encoder, const HeadParams& heads,
                                         std::span<const data::ClassifySample> samples, std::size_t batch_size) {
  std::vector<std::size_t> preds;
  preds.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const data::ClassifySample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    Tape tape(Tape::Mode::kInference);
    const Tensor logits = classify_forward(tape, encoder, heads, classify_tokens(batch), nullptr).logits;
    const std::size_t c = logits.cols();
    const auto v = logits.values();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      preds.push_back(static_cast<std::size_t>(std::max_element(v.begin() + b * c, v.begin() + (b + 1) * c) -
                                               (v.begin() + b * c)));
    }
  }
  return preds;
}

namespace {

std::vector<metrics::MetricRecord> eval_classify(const EncoderParams& enc, const HeadParams& heads,
                                                 const data::ClassificationDataset& ds,
                                                 const std::vector<data::ClassifySample>& split,
                                                 std::size_t batch_size) {
  const auto preds = predict_classes(enc, heads, split, batch_size);
  std::vector<std::size_t> labels;
  for (const auto& s : split) labels.push_back(s.label);
  return metrics::classification_report(preds, labels, ds.num_classes());
}

std::vector<metrics::MetricRecord> eval_recsys(const EncoderParams& enc, const HeadParams& heads,
                                               const data::ImpressionDataset& ds,
                                               const std::vector<data::Impression>& split,
                                               const TrainOptions& options) {
  std::vector<metrics::RankedImpression> ranked;
  for (std::size_t start = 0; start < split.size(); start += options.batch_size) {
    const std::size_t end = std::min(split.size(), start + options.batch_size);
    std::vector<const data::Impression*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&split[i]);
    const RecsysBatch rb = make_recsys_batch(ds, batch, options.history_len);
    Tape tape(Tape::Mode::kInference);
    const Tensor out = recsys_scores(tape, enc, heads, rb, nullptr);
    const auto scores = out.values();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      metrics::RankedImpression r;
      r.scores.assign(scores.begin() + rb.candidate_offsets[b], scores.begin() + rb.candidate_offsets[b + 1]);
      r.labels = batch[b]->labels;
      ranked.push_back(std::move(r));
    }
  }
  return metrics::ranking_report(ranked);
}

std::vector<metrics::MetricRecord> eval_retrieval(const EncoderParams& enc, const HeadParams& heads,
                                                  const std::vector<data::RetrievalSample>& split,
                                                  std::size_t batch_size) {
  // AUC over the whole split, scored as one impression.
  metrics::RankedImpression all;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    const std::size_t end = std::min(split.size(), start + batch_size);
    std::vector<const data::RetrievalSample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&split[i]);
    Tape tape(Tape::Mode::kInference);
    const Tensor out = retrieval_scores(tape, enc, heads, make_retrieval_batch(batch), nullptr);
    const auto scores = out.values();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      all.scores.push_back(scores[b]);
      all.labels.push_back(batch[b]->label);
    }
  }
  metrics::MetricRecord rec{"auc", 0.0, split.size(), 0};
  if (auto a = metrics::auc(all)) {
    rec.value = *a;
  } else {
    rec.n_excluded = split.size();
  }
  return {rec};
}

template <typename T>
const std::vector<T>& pick_split(const std::vector<T>& valid, const std::vector<T>& test, const std::string& split) {
  if (split == "valid") return valid;
  if (split == "test") return test;
  throw ConfigError("split must be valid or test, got '" + split + "'");
}

}  // namespace

std::vector<ModelMetrics> evaluate(const ModelPair& pair, const TaskData& data, const std::string& split,
                                   const TrainOptions& options) {
  std::vector<ModelMetrics> out;
  auto run = [&](const std::string& name, const EncoderParams& enc, const HeadParams& heads) {
    ModelMetrics m{name, split, {}};
    switch (data.task) {
      case TaskKind::kClassify: {
        const auto& ds = data.classification;
        m.records = eval_classify(enc, heads, ds, pick_split(ds.valid, ds.test, split), options.batch_size);
        break;
      }
      case TaskKind::kRecsys: {
        const auto& ds = data.impressions;
        m.records = eval_recsys(enc, heads, ds, pick_split(ds.valid, ds.test, split), options);
        break;
      }
      case TaskKind::kRetrieval: {
        const auto& ds = data.retrieval;
        m.records = eval_retrieval(enc, heads, pick_split(ds.valid, ds.test, split), options.batch_size);
        break;
      }
    }
    out.push_back(std::move(m));
  };
  if (pair.teacher && pair.teacher_heads) run("teacher", *pair.teacher, *pair.teacher_heads);
  if (pair.student && pair.student_heads) run("student", *pair.student, *pair.student_heads);
  return out;
}

namespace {

std::uint64_t fnv1a(const std::vector<std::size_t>& order) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t v : order) {
    for (int b = 0; b < 8; ++b) {
      h ^= (static_cast<std::uint64_t>(v) >> (8 * b)) & 0xff;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::size_t train_size(const TaskData& data) {
  switch (data.task) {
    case TaskKind::kClassify: return data.classification.train.size();
    case TaskKind::kRecsys: return data.impressions.train.size();
    case TaskKind::kRetrieval: return data.retrieval.train.size();
  }
  return 0;
}

// Binary cross-entropy step of the single model a retrieval pair holds.
StepReport retrieval_step(ModelPair& pair, const RetrievalBatch& batch, AdamState& adam, Rng* dropout_rng) {
  const bool teacher = !pair.student;
  const auto& enc = teacher ? pair.teacher : pair.student;
  const auto& heads = teacher ? pair.teacher_heads : pair.student_heads;
  const ParameterList params = teacher ? pair.teacher_parameters() : pair.student_parameters();
  zero_grads(params);
  Tape tape;
  const Tensor scores = retrieval_scores(tape, *enc, *heads, batch, dropout_rng);
  const Tensor loss = ops::bce_with_logits(tape, scores, batch.labels);
  backward(loss, tape);
  const GradientSet grads = GradientSet::collect(params);
  adam_step(adam, params, grads);
  StepReport r;
  r.step = adam.step;
  if (teacher) {
    r.teacher_loss = loss.item();
    r.grad_norm_teacher = grads.l2_norm();
  } else {
    r.student_loss = loss.item();
    r.grad_norm_student = grads.l2_norm();
  }
  return r;
}

bool has_teacher_phase(const TrainOptions& o) { return o.distill.mode == TrainingMode::kDisjoint; }

std::size_t phase_epochs(const TrainOptions& o, int phase) {
  if (has_teacher_phase(o) && phase == 0) return o.teacher_epochs ? o.teacher_epochs : o.epochs;
  return o.epochs;
}

int last_phase(const TrainOptions& o) { return has_teacher_phase(o) ? 1 : 0; }

}  // namespace

void train(TrainState& state, const TaskData& data, const TrainOptions& options, const TrainHooks& hooks) {
  check_mode(options);
  if (data.task != options.task) throw ConfigError("dataset task does not match the configured task");
  options.distill.validate();
  const std::size_t n = train_size(data);
  if (n == 0) throw DataError("training split is empty");
  const std::string metric = selection_metric(options.task);

  while (state.phase <= last_phase(options)) {
    const bool disjoint_teacher = has_teacher_phase(options) && state.phase == 0;
    const bool disjoint_student = has_teacher_phase(options) && state.phase == 1;
    const std::size_t epochs = phase_epochs(options, state.phase);
    std::size_t phase_steps = 0;

    while (state.epoch < epochs) {
      // Recommendation instances are rebuilt every epoch when negatives are sampled.
      std::vector<data::Impression> instances;
      if (options.task == TaskKind::kRecsys) {
        instances = training_instances(data.impressions, data.impressions.train, options.num_negatives, state.data_rng);
      }
      const std::size_t count = options.task == TaskKind::kRecsys ? instances.size() : n;
      std::vector<std::size_t> order(count);
      for (std::size_t i = 0; i < count; ++i) order[i] = i;
      state.data_rng.shuffle(order);
      state.order_digests.push_back(fnv1a(order));

      for (std::size_t start = 0; start < count; start += options.batch_size) {
        if (options.max_steps && phase_steps >= options.max_steps) break;
        const std::size_t end = std::min(count, start + options.batch_size);
        std::vector<std::size_t> labels;
        PathForward forward;
        RecsysBatch rb;
        TokenBatch tb;
        RetrievalBatch retb;
        switch (options.task) {
          case TaskKind::kClassify: {
            std::vector<const data::ClassifySample*> batch;
            for (std::size_t i = start; i < end; ++i) {
              batch.push_back(&data.classification.train[order[i]]);
              labels.push_back(batch.back()->label);
            }
            tb = classify_tokens(batch);
            forward = [&tb](Tape& t, const EncoderParams& e, const HeadParams& h, Rng* r) {
              return classify_forward(t, e, h, tb, r);
            };
            break;
          }
          case TaskKind::kRecsys: {
            std::vector<const data::Impression*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&instances[order[i]]);
            rb = make_recsys_batch(data.impressions, batch, options.history_len);
            labels = rb.positives;
            forward = [&rb](Tape& t, const EncoderParams& e, const HeadParams& h, Rng* r) {
              return recsys_forward(t, e, h, rb, r);
            };
            break;
          }
          case TaskKind::kRetrieval: {
            std::vector<const data::RetrievalSample*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&data.retrieval.train[order[i]]);
            retb = make_retrieval_batch(batch);
            break;
          }
        }

        StepReport r;
        Rng* drop = &state.dropout_rng;
        if (options.task == TaskKind::kRetrieval) {
          r = retrieval_step(state.pair, retb, state.adam, drop);
        } else if (disjoint_teacher || options.distill.mode == TrainingMode::kTeacherOnly) {
          r = supervised_step(state.pair, Side::kTeacher, forward, labels, state.adam, drop);
        } else if (options.distill.mode == TrainingMode::kStudentOnly) {
          r = supervised_step(state.pair, Side::kStudent, forward, labels, state.adam, drop);
        } else if (disjoint_student) {
          r = frozen_teacher_step(state.pair, forward, labels, options.distill, state.adam, drop);
        } else {
          r = joint_step(state.pair, forward, labels, options.distill, state.adam, drop);
        }
        ++state.global_step;
        ++phase_steps;
        r.step = state.global_step;
        for (double v : {r.teacher_loss, r.student_loss, r.hidden_layer_loss, r.pooled_hidden_loss, r.distill_loss}) {
          if (!std::isfinite(v)) throw NumericError("non-finite loss at step " + std::to_string(state.global_step));
        }
        if (hooks.on_step) hooks.on_step(r, state.phase);
      }

      ++state.epoch;
      EpochReport rep;
      rep.phase = state.phase;
      rep.epoch = state.epoch;
      const bool last_epoch = state.epoch == epochs || (options.max_steps && phase_steps >= options.max_steps);
      const bool due = options.eval_every ? state.epoch % options.eval_every == 0 : false;
      if (due || last_epoch) {
        rep.metrics = evaluate(state.pair, data, "valid", options);
        // The student is the deliverable whenever one exists.
        const ModelMetrics* sel = nullptr;
        for (const auto& m : rep.metrics) {
          if (m.model == "student" || !sel) sel = &m;
        }
        const double v = sel->value(metric);
        if (state.phase == last_phase(options) && v > state.best_metric) {
          state.best_metric = v;
          state.best_epoch = state.epoch;
          state.best_phase = state.phase;
          rep.improved = true;
        }
      }
      if (options.max_steps && phase_steps >= options.max_steps) state.epoch = epochs;
      if (hooks.on_epoch) hooks.on_epoch(rep, state);
    }

    if (state.phase == last_phase(options)) break;
    // Disjoint: freeze the trained teacher, start the student from it, and
    // replay the data order a joint student would have seen.
    attach_student_to_frozen_teacher(state.pair);
    state.adam = AdamState{options.adam, 0, {}, {}};
    state.data_rng = state.phase_start_rng;
    state.phase = 1;
    state.epoch = 0;
  }
}

}  // namespace newsdistill::tasks
