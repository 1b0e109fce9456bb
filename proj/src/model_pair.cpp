#include "newsdistill/distill.hpp"
#include "newsdistill/errors.hpp"

namespace newsdistill {

HeadParams make_heads(const HeadSpec& spec, std::size_t hidden, Rng& rng) {
  HeadParams h;
  h.pool = PoolingParams::random(hidden, spec.attn_dim, rng);
  if (spec.num_classes > 0) h.dense = DenseParams::random(hidden, spec.num_classes, rng);
  if (spec.user_encoder) h.user = PoolingParams::random(hidden, spec.attn_dim, rng);
  return h;
}

bool ModelPair::heads_shared() const {
  return teacher_heads && student_heads && teacher_heads->same_objects(*student_heads);
}

ParameterList ModelPair::parameters() const {
  ParameterList out;
  if (teacher) teacher->append_parameters(out, "teacher.");
  if (student) student->append_parameters(out, "student.");
  if (heads_shared()) {
    teacher_heads->append_parameters(out, "head.");
  } else {
    if (teacher_heads) teacher_heads->append_parameters(out, "teacher_head.");
    if (student_heads) student_heads->append_parameters(out, "student_head.");
  }
  return out;
}

ParameterList ModelPair::teacher_parameters() const {
  ParameterList out;
  if (teacher) teacher->append_parameters(out, "teacher.");
  if (teacher_heads) teacher_heads->append_parameters(out, heads_shared() ? "head." : "teacher_head.");
  return out;
}

ParameterList ModelPair::student_parameters() const {
  ParameterList out;
  if (student) student->append_parameters(out, "student.");
  if (student_heads) student_heads->append_parameters(out, heads_shared() ? "head." : "student_head.");
  return out;
}

namespace {

void check_depth(const EncoderConfig& teacher_config, const BlockMap& map) {
  map.validate();
  if (teacher_config.num_layers != map.teacher_depth()) {
    throw ConfigError("teacher depth " + std::to_string(teacher_config.num_layers) + " must equal N*K = " +
                      std::to_string(map.teacher_depth()));
  }
}

}  // namespace

ModelPair make_joint_pair(const EncoderConfig& teacher_config, const BlockMap& map, const HeadSpec& heads, Rng& rng) {
  check_depth(teacher_config, map);
  ModelPair pair;
  pair.map = map;
  pair.teacher = EncoderParams::random(teacher_config, rng);
  pair.teacher_heads = make_heads(heads, teacher_config.hidden_dim, rng);
  pair.student = init_student_from_teacher(*pair.teacher, map.n);
  pair.student_heads = pair.teacher_heads;  // same tensors
  return pair;
}

ModelPair make_teacher_only(const EncoderConfig& teacher_config, const BlockMap& map, const HeadSpec& heads, Rng& rng) {
  check_depth(teacher_config, map);
  ModelPair pair;
  pair.map = map;
  pair.teacher = EncoderParams::random(teacher_config, rng);
  pair.teacher_heads = make_heads(heads, teacher_config.hidden_dim, rng);
  return pair;
}

ModelPair make_student_only(const EncoderConfig& teacher_config, const BlockMap& map, const HeadSpec& heads, Rng& rng) {
  check_depth(teacher_config, map);
  EncoderConfig student_config = teacher_config;
  student_config.num_layers = map.n;
  ModelPair pair;
  pair.map = map;
  pair.student = EncoderParams::random(student_config, rng);
  pair.student_heads = make_heads(heads, teacher_config.hidden_dim, rng);
  return pair;
}

void attach_student_to_frozen_teacher(ModelPair& pair) {
  if (!pair.teacher || !pair.teacher_heads) throw ContractError("disjoint student phase needs a trained teacher");
  pair.student = init_student_from_teacher(*pair.teacher, pair.map.n);
  pair.student_heads = pair.teacher_heads->clone();
}

}  // namespace newsdistill
