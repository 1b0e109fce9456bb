#include "newsdistill/distill.hpp"
#include "newsdistill/errors.hpp"

namespace newsdistill {

namespace {

void fill_terms(StepReport& r, const StudentLoss& ls) {
  r.student_loss = ls.total.item();
  if (ls.terms.hidden_layer.defined()) r.hidden_layer_loss = ls.terms.hidden_layer.item();
  if (ls.terms.pooled_hidden.defined()) r.pooled_hidden_loss = ls.terms.pooled_hidden.item();
  if (ls.terms.distill.defined()) r.distill_loss = ls.terms.distill.item();
}

void require_pair(const ModelPair& pair) {
  if (!pair.teacher || !pair.student || !pair.teacher_heads || !pair.student_heads) {
    throw ContractError("step needs both a teacher and a student");
  }
}

}  // namespace

StepReport joint_step(ModelPair& pair, const PathForward& forward, std::span<const std::size_t> labels,
                      const DistillConfig& cfg, AdamState& adam, Rng* dropout_rng, const GradientObserver& observer) {
  if (cfg.mode != TrainingMode::kJoint) {
    throw ConfigError("joint_step called in " + to_string(cfg.mode) + " mode");
  }
  require_pair(pair);
  if (!pair.heads_shared()) throw ContractError("joint_step requires teacher and student to share their heads");
  cfg.validate();

  const ParameterList params = pair.parameters();
  zero_grads(params);

  Tape tape;
  const PathOutput t = forward(tape, *pair.teacher, *pair.teacher_heads, dropout_rng);
  const PathOutput s = forward(tape, *pair.student, *pair.student_heads, dropout_rng);
  const Tensor lt = teacher_loss(tape, t, labels);
  const StudentLoss ls = student_loss(tape, t, s, labels, pair.map, cfg);

  // Teacher activations are detached inside L^s, so the two passes touch
  // disjoint encoders and add up on the shared heads.
  backward(lt, tape);
  backward(ls.total, tape);

  GradientSet grads = GradientSet::collect(params);
  if (cfg.enable_momentum) apply_momentum_distillation(grads, pair.map, cfg.beta, cfg.momentum_embeddings);
  if (observer) observer(grads);
  adam_step(adam, params, grads);

  StepReport r;
  r.step = adam.step;
  r.teacher_loss = lt.item();
  fill_terms(r, ls);
  r.grad_norm_teacher = grads.partition(ParameterOwner::kTeacher).l2_norm();
  r.grad_norm_student = grads.partition(ParameterOwner::kStudent).l2_norm();
  return r;
}

StepReport frozen_teacher_step(ModelPair& pair, const PathForward& forward, std::span<const std::size_t> labels,
                               const DistillConfig& cfg, AdamState& adam, Rng* dropout_rng) {
  require_pair(pair);
  if (pair.heads_shared()) throw ContractError("a frozen teacher must not share heads with the student");
  cfg.validate();
  const bool momentum = cfg.enable_momentum && cfg.disjoint_momentum;

  const ParameterList teacher_params = pair.teacher_parameters();
  const ParameterList student_params = pair.student_parameters();
  zero_grads(teacher_params);
  zero_grads(student_params);

  Tape tape;
  // The frozen teacher runs without dropout; it only joins the tape when its
  // gradients feed momentum distillation.
  Tape teacher_tape(momentum ? Tape::Mode::kRecord : Tape::Mode::kInference);
  Tape& tt = momentum ? tape : teacher_tape;
  const PathOutput t = forward(tt, *pair.teacher, *pair.teacher_heads, nullptr);
  const PathOutput s = forward(tape, *pair.student, *pair.student_heads, dropout_rng);
  const Tensor lt = teacher_loss(tt, t, labels);
  const StudentLoss ls = student_loss(tape, t, s, labels, pair.map, cfg);

  if (momentum) backward(lt, tape);
  backward(ls.total, tape);

  GradientSet grads = GradientSet::collect(student_params);
  if (momentum) {
    GradientSet all = GradientSet::collect(teacher_params);
    for (const auto& [name, g] : grads.entries()) all.set(name, g);
    apply_momentum_distillation(all, pair.map, cfg.beta, cfg.momentum_embeddings);
    for (const auto& p : student_params) grads.set(p.name, all.at(p.name));
  }
  adam_step(adam, student_params, grads);
  zero_grads(teacher_params);

  StepReport r;
  r.step = adam.step;
  r.teacher_loss = lt.item();
  fill_terms(r, ls);
  r.grad_norm_student = grads.partition(ParameterOwner::kStudent).l2_norm();
  return r;
}

StepReport supervised_step(ModelPair& pair, Side side, const PathForward& forward,
                           std::span<const std::size_t> labels, AdamState& adam, Rng* dropout_rng) {
  const bool teacher = side == Side::kTeacher;
  const auto& encoder = teacher ? pair.teacher : pair.student;
  const auto& heads = teacher ? pair.teacher_heads : pair.student_heads;
  if (!encoder || !heads) throw ContractError("supervised_step: requested side is absent");

  const ParameterList params = teacher ? pair.teacher_parameters() : pair.student_parameters();
  zero_grads(params);
  Tape tape;
  const PathOutput out = forward(tape, *encoder, *heads, dropout_rng);
  const Tensor loss = ops::cross_entropy(tape, out.logits, labels);
  backward(loss, tape);
  const GradientSet grads = GradientSet::collect(params);
  adam_step(adam, params, grads);

  StepReport r;
  r.step = adam.step;
  if (teacher) {
    r.teacher_loss = loss.item();
    r.grad_norm_teacher = grads.partition(ParameterOwner::kTeacher).l2_norm();
  } else {
    r.student_loss = loss.item();
    r.grad_norm_student = grads.partition(ParameterOwner::kStudent).l2_norm();
  }
  return r;
}

}  // namespace newsdistill
