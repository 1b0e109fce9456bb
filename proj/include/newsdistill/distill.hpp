#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "newsdistill/encoder.hpp"
#include "newsdistill/heads.hpp"
#include "newsdistill/ops.hpp"
#include "newsdistill/tensor.hpp"

namespace newsdistill {

enum class TrainingMode { kJoint, kDisjoint, kStudentOnly, kTeacherOnly };

std::string to_string(TrainingMode mode);
TrainingMode parse_training_mode(const std::string& text);

struct DistillConfig {
  double temperature = 1.0;
  double beta = 0.1;
  bool enable_hidden_layer_loss = true;
  bool enable_pooled_hidden_loss = true;
  bool enable_distill_loss = true;
  bool enable_momentum = true;
  // Also mix the student embedding gradient with the teacher's (off by default:
  // the embedding layer belongs to no block).
  bool momentum_embeddings = false;
  // Disjoint mode: inject the frozen teacher's per-batch gradients.
  bool disjoint_momentum = true;
  ops::TemperatureMode temperature_mode = ops::TemperatureMode::kLogits;
  TrainingMode mode = TrainingMode::kJoint;

  static DistillConfig classification_defaults();
  static DistillConfig recommendation_defaults();
  void validate() const;
};

// ---------------------------------------------------------------------------
// Losses. Teacher-side quantities are detached inside every distillation term,
// so backward of the student loss never reaches teacher parameters.

// MSE(E^t, E^s) + sum_i MSE(H^t_{iK}, H^s_i), each MSE an element mean over
// unmasked token rows.
Tensor hidden_layer_loss(Tape& tape, const EncoderState& teacher, const EncoderState& student, const BlockMap& map);

// MSE(h^t, h^s)
Tensor pooled_hidden_loss(Tape& tape, const Tensor& teacher_pooled, const Tensor& student_pooled);

// CE(teacher soft labels, student soft labels) at temperature t.
Tensor distillation_loss(Tape& tape, const Tensor& teacher_logits, const Tensor& student_logits, double temperature,
                         ops::TemperatureMode mode = ops::TemperatureMode::kLogits);

// What one model produces for a batch: its encoder states, the pooled
// representations aligned by the pooled hidden loss, and output logits.
struct PathOutput {
  EncoderState state;
  std::vector<Tensor> pooled;
  Tensor logits;
};

struct DistillTerms {
  Tensor hidden_layer;   // defined only when enabled
  Tensor pooled_hidden;
  Tensor distill;
};

DistillTerms distill_terms(Tape& tape, const PathOutput& teacher, const PathOutput& student, const BlockMap& map,
                           const DistillConfig& cfg);

// L_d: sum of the enabled terms (0 when all are off).
Tensor total_distill_loss(Tape& tape, const DistillTerms& terms);

struct StudentLoss {
  DistillTerms terms;
  Tensor distill_total;
  Tensor task;
  Tensor total;
};

// L^s = L_d + CE(student soft labels, y)
StudentLoss student_loss(Tape& tape, const PathOutput& teacher, const PathOutput& student,
                         std::span<const std::size_t> labels, const BlockMap& map, const DistillConfig& cfg);

// L^t = CE(teacher soft labels, y)
Tensor teacher_loss(Tape& tape, const PathOutput& teacher, std::span<const std::size_t> labels);

// ---------------------------------------------------------------------------
// Momentum distillation.

// Role name (e.g. "attn.wq") -> (1/K) sum_j g^t_{i,j}(role) over the layers of block i.
std::map<std::string, Tensor> block_gradient_average(const GradientSet& teacher_grads, const BlockMap& map,
                                                     std::size_t block, const std::string& teacher_prefix = "teacher.");

// beta * block_grad + (1 - beta) * student_grad
Tensor momentum_mix(const Tensor& student_grad, const Tensor& block_grad, double beta);

// Rewrites every student layer gradient in `grads` with its mixed version.
void apply_momentum_distillation(GradientSet& grads, const BlockMap& map, double beta, bool include_embeddings,
                                 const std::string& teacher_prefix = "teacher.",
                                 const std::string& student_prefix = "student.");

// ---------------------------------------------------------------------------
// Adam with bias correction.

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

// Updates every parameter in `params` in place; `grads` must cover exactly them.
void adam_step(AdamState& state, const ParameterList& params, const GradientSet& grads);

// ---------------------------------------------------------------------------
// Teacher/student pair.

struct HeadSpec {
  std::size_t attn_dim = 16;
  std::size_t num_classes = 0;  // 0: no dense classifier
  bool user_encoder = false;
};

HeadParams make_heads(const HeadSpec& spec, std::size_t hidden, Rng& rng);

struct ModelPair {
  BlockMap map;
  std::optional<EncoderParams> teacher;
  std::optional<EncoderParams> student;
  std::optional<HeadParams> teacher_heads;
  std::optional<HeadParams> student_heads;

  bool heads_shared() const;
  // teacher.*, student.*, and heads as head.* when shared, otherwise
  // teacher_head.* / student_head.*
  ParameterList parameters() const;
  ParameterList teacher_parameters() const;  // teacher encoder + teacher heads
  ParameterList student_parameters() const;  // student encoder + student heads
};

// Random teacher, student copied from its first N layers, heads shared.
ModelPair make_joint_pair(const EncoderConfig& teacher_config, const BlockMap& map, const HeadSpec& heads, Rng& rng);
// Teacher only, with its own heads.
ModelPair make_teacher_only(const EncoderConfig& teacher_config, const BlockMap& map, const HeadSpec& heads, Rng& rng);
// Randomly initialized student with its own heads, trained without a teacher.
ModelPair make_student_only(const EncoderConfig& teacher_config, const BlockMap& map, const HeadSpec& heads, Rng& rng);
// Second phase of disjoint training: student layers and heads copied from the trained teacher.
void attach_student_to_frozen_teacher(ModelPair& pair);

// ---------------------------------------------------------------------------
// Training steps.

// Runs one model (encoder + heads) over the current batch.
using PathForward = std::function<PathOutput(Tape& tape, const EncoderParams& encoder, const HeadParams& heads,
                                             Rng* dropout_rng)>;

struct StepReport {
  std::uint64_t step = 0;
  double teacher_loss = 0.0;
  double student_loss = 0.0;
  double hidden_layer_loss = 0.0;
  double pooled_hidden_loss = 0.0;
  double distill_loss = 0.0;
  double grad_norm_teacher = 0.0;
  double grad_norm_student = 0.0;
};

// Hook between backward and the optimizer; exposes the final gradients.
using GradientObserver = std::function<void(const GradientSet&)>;

// One joint learning and distillation step: forward both paths through the
// shared heads, backward L^t then L^s, optional momentum mixing, one Adam step.
StepReport joint_step(ModelPair& pair, const PathForward& forward, std::span<const std::size_t> labels,
                      const DistillConfig& cfg, AdamState& adam, Rng* dropout_rng,
                      const GradientObserver& observer = {});

// Student step against a frozen teacher (disjoint mode, second phase).
StepReport frozen_teacher_step(ModelPair& pair, const PathForward& forward, std::span<const std::size_t> labels,
                               const DistillConfig& cfg, AdamState& adam, Rng* dropout_rng);

enum class Side { kTeacher, kStudent };

// Plain supervised step of one side with its own heads.
StepReport supervised_step(ModelPair& pair, Side side, const PathForward& forward,
                           std::span<const std::size_t> labels, AdamState& adam, Rng* dropout_rng);

}  // namespace newsdistill
