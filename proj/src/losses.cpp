#include <string>

#include "newsdistill/distill.hpp"
#include "newsdistill/errors.hpp"

namespace newsdistill {

std::string to_string(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::kJoint: return "joint";
    case TrainingMode::kDisjoint: return "disjoint";
    case TrainingMode::kStudentOnly: return "student-only";
    case TrainingMode::kTeacherOnly: return "teacher-only";
  }
  return "joint";
}

TrainingMode parse_training_mode(const std::string& text) {
  if (text == "joint") return TrainingMode::kJoint;
  if (text == "disjoint") return TrainingMode::kDisjoint;
  if (text == "student-only") return TrainingMode::kStudentOnly;
  if (text == "teacher-only") return TrainingMode::kTeacherOnly;
  throw ConfigError("mode: expected joint|disjoint|student-only|teacher-only, got '" + text + "'");
}

DistillConfig DistillConfig::classification_defaults() {
  DistillConfig c;
  c.beta = 0.1;
  return c;
}

DistillConfig DistillConfig::recommendation_defaults() {
  DistillConfig c;
  c.beta = 0.15;
  return c;
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
}

Tensor hidden_layer_loss(Tape& tape, const EncoderState& teacher, const EncoderState& student, const BlockMap& map) {
  if (teacher.depth() != map.teacher_depth() || student.depth() != map.n) {
    throw ContractError("hidden_layer_loss: teacher depth " + std::to_string(teacher.depth()) + " / student depth " +
                        std::to_string(student.depth()) + " do not match N=" + std::to_string(map.n) +
                        ", K=" + std::to_string(map.k));
  }
  if (teacher.embeddings.shape() != student.embeddings.shape() || teacher.mask != student.mask) {
    throw ContractError("hidden_layer_loss: teacher and student encoded different inputs (" +
                        shape_to_string(teacher.embeddings.shape()) + " vs " +
                        shape_to_string(student.embeddings.shape()) + ")");
  }
  const Mask& rows = student.mask;
  Tensor loss = ops::mse(tape, ops::detach(teacher.embeddings), student.embeddings, &rows);
  for (std::size_t i = 1; i <= map.n; ++i) {
    const Tensor& ht = teacher.layer_hidden[i * map.k - 1];
    const Tensor& hs = student.layer_hidden[i - 1];
    loss = ops::add(tape, loss, ops::mse(tape, ops::detach(ht), hs, &rows));
  }
  return loss;
}

Tensor pooled_hidden_loss(Tape& tape, const Tensor& teacher_pooled, const Tensor& student_pooled) {
  if (teacher_pooled.shape() != student_pooled.shape()) {
    throw ContractError("pooled_hidden_loss: shapes " + shape_to_string(teacher_pooled.shape()) + " vs " +
                        shape_to_string(student_pooled.shape()));
  }
  return ops::mse(tape, ops::detach(teacher_pooled), student_pooled);
}

Tensor distillation_loss(Tape& tape, const Tensor& teacher_logits, const Tensor& student_logits, double temperature,
                         ops::TemperatureMode mode) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
  if (teacher_logits.shape() != student_logits.shape()) {
    throw ContractError("distillation_loss: class counts differ (" + shape_to_string(teacher_logits.shape()) +
                        " vs " + shape_to_string(student_logits.shape()) + ")");
  }
  return ops::soft_cross_entropy(tape, ops::detach(teacher_logits), student_logits, temperature, mode);
}

DistillTerms distill_terms(Tape& tape, const PathOutput& teacher, const PathOutput& student, const BlockMap& map,
                           const DistillConfig& cfg) {
  DistillTerms terms;
  if (cfg.enable_hidden_layer_loss) terms.hidden_layer = hidden_layer_loss(tape, teacher.state, student.state, map);
  if (cfg.enable_pooled_hidden_loss) {
    if (teacher.pooled.size() != student.pooled.size() || teacher.pooled.empty()) {
      throw ContractError("pooled_hidden_loss: paths expose different pooled representations");
    }
    Tensor sum = pooled_hidden_loss(tape, teacher.pooled[0], student.pooled[0]);
    for (std::size_t i = 1; i < teacher.pooled.size(); ++i) {
      sum = ops::add(tape, sum, pooled_hidden_loss(tape, teacher.pooled[i], student.pooled[i]));
    }
    terms.pooled_hidden = sum;
  }
  if (cfg.enable_distill_loss) {
    terms.distill = distillation_loss(tape, teacher.logits, student.logits, cfg.temperature, cfg.temperature_mode);
  }
  return terms;
}

Tensor total_distill_loss(Tape& tape, const DistillTerms& terms) {
  Tensor total;
  for (const Tensor* t : {&terms.hidden_layer, &terms.pooled_hidden, &terms.distill}) {
    if (!t->defined()) continue;
    total = total.defined() ? ops::add(tape, total, *t) : *t;
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

StudentLoss student_loss(Tape& tape, const PathOutput& teacher, const PathOutput& student,
                         std::span<const std::size_t> labels, const BlockMap& map, const DistillConfig& cfg) {
  StudentLoss out;
  out.terms = distill_terms(tape, teacher, student, map, cfg);
  out.distill_total = total_distill_loss(tape, out.terms);
  out.task = ops::cross_entropy(tape, student.logits, labels);
  out.total = ops::add(tape, out.distill_total, out.task);
  return out;
}

Tensor teacher_loss(Tape& tape, const PathOutput& teacher, std::span<const std::size_t> labels) {
  return ops::cross_entropy(tape, teacher.logits, labels);
}

}  // namespace newsdistill
