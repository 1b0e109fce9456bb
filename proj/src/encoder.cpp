#include "newsdistill/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "newsdistill/errors.hpp"

namespace newsdistill {

void EncoderConfig::validate() const {
  if (vocab_size < 2 || max_seq_len == 0 || hidden_dim == 0 || num_heads == 0 || ffn_dim == 0 || num_layers == 0) {
    throw ConfigError("encoder extents must be positive (vocab_size >= 2)");
  }
  if (hidden_dim % num_heads != 0) {
    throw ConfigError("num_heads (" + std::to_string(num_heads) + ") must divide hidden_dim (" +
                      std::to_string(hidden_dim) + ")");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

bool EncoderConfig::same_geometry(const EncoderConfig& o) const {
  return vocab_size == o.vocab_size && max_seq_len == o.max_seq_len && hidden_dim == o.hidden_dim &&
         num_heads == o.num_heads && ffn_dim == o.ffn_dim;
}

void BlockMap::validate() const {
  if (k == 0 || n == 0) throw ConfigError("block map needs K >= 1 and N >= 1");
}

std::vector<std::size_t> block_of(const BlockMap& map, std::size_t i) {
  map.validate();
  if (i < 1 || i > map.n) {
    throw ContractError("block index " + std::to_string(i) + " outside 1.." + std::to_string(map.n));
  }
  std::vector<std::size_t> layers;
  for (std::size_t j = (i - 1) * map.k + 1; j <= i * map.k; ++j) layers.push_back(j);
  return layers;
}

const std::array<std::pair<std::string_view, LayerParams::Member>, 16>& LayerParams::roles() {
  static const std::array<std::pair<std::string_view, Member>, 16> kRoles{{
      {"attn.wq", &LayerParams::wq},
      {"attn.bq", &LayerParams::bq},
      {"attn.wk", &LayerParams::wk},
      {"attn.bk", &LayerParams::bk},
      {"attn.wv", &LayerParams::wv},
      {"attn.bv", &LayerParams::bv},
      {"attn.wo", &LayerParams::wo},
      {"attn.bo", &LayerParams::bo},
      {"ln1.gamma", &LayerParams::ln1_gamma},
      {"ln1.beta", &LayerParams::ln1_beta},
      {"ffn.w1", &LayerParams::ffn_w1},
      {"ffn.b1", &LayerParams::ffn_b1},
      {"ffn.w2", &LayerParams::ffn_w2},
      {"ffn.b2", &LayerParams::ffn_b2},
      {"ln2.gamma", &LayerParams::ln2_gamma},
      {"ln2.beta", &LayerParams::ln2_beta},
  }};
  return kRoles;
}

LayerParams LayerParams::clone() const {
  LayerParams out;
  for (const auto& [name, member] : roles()) out.*member = (this->*member).clone();
  return out;
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape), true);
  for (double& v : t.mutable_values()) v = stddev * rng.normal();
  return t;
}

Tensor filled(Shape shape, double value) {
  Tensor t(std::move(shape), true);
  for (double& v : t.mutable_values()) v = value;
  return t;
}

}  // namespace

EncoderParams EncoderParams::random(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t h = config.hidden_dim, f = config.ffn_dim;
  EncoderParams p;
  p.config = config;
  p.token_embedding = normal_tensor({config.vocab_size, h}, 1.0, rng);
  p.position_embedding = normal_tensor({config.max_seq_len, h}, 0.1, rng);
  const double sh = 1.0 / std::sqrt(static_cast<double>(h));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    LayerParams layer;
    layer.wq = normal_tensor({h, h}, sh, rng);
    layer.bq = filled({h}, 0.0);
    layer.wk = normal_tensor({h, h}, sh, rng);
    layer.bk = filled({h}, 0.0);
    layer.wv = normal_tensor({h, h}, sh, rng);
    layer.bv = filled({h}, 0.0);
    layer.wo = normal_tensor({h, h}, sh, rng);
    layer.bo = filled({h}, 0.0);
    layer.ln1_gamma = filled({h}, 1.0);
    layer.ln1_beta = filled({h}, 0.0);
    layer.ffn_w1 = normal_tensor({h, f}, sh, rng);
    layer.ffn_b1 = filled({f}, 0.0);
    layer.ffn_w2 = normal_tensor({f, h}, sf, rng);
    layer.ffn_b2 = filled({h}, 0.0);
    layer.ln2_gamma = filled({h}, 1.0);
    layer.ln2_beta = filled({h}, 0.0);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

EncoderParams EncoderParams::zeros(const EncoderConfig& config) {
  config.validate();
  const std::size_t h = config.hidden_dim, f = config.ffn_dim;
  EncoderParams p;
  p.config = config;
  p.token_embedding = Tensor({config.vocab_size, h}, true);
  p.position_embedding = Tensor({config.max_seq_len, h}, true);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    LayerParams layer;
    layer.wq = Tensor({h, h}, true);
    layer.bq = Tensor({h}, true);
    layer.wk = Tensor({h, h}, true);
    layer.bk = Tensor({h}, true);
    layer.wv = Tensor({h, h}, true);
    layer.bv = Tensor({h}, true);
    layer.wo = Tensor({h, h}, true);
    layer.bo = Tensor({h}, true);
    layer.ln1_gamma = Tensor({h}, true);
    layer.ln1_beta = Tensor({h}, true);
    layer.ffn_w1 = Tensor({h, f}, true);
    layer.ffn_b1 = Tensor({f}, true);
    layer.ffn_w2 = Tensor({f, h}, true);
    layer.ffn_b2 = Tensor({h}, true);
    layer.ln2_gamma = Tensor({h}, true);
    layer.ln2_beta = Tensor({h}, true);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

EncoderParams EncoderParams::clone() const {
  EncoderParams out;
  out.config = config;
  out.token_embedding = token_embedding.clone();
  out.position_embedding = position_embedding.clone();
  for (const auto& l : layers) out.layers.push_back(l.clone());
  return out;
}

std::string layer_prefix(const std::string& owner, std::size_t layer_1based) {
  return owner + "layer." + std::to_string(layer_1based) + ".";
}

void EncoderParams::append_parameters(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "embedding.token", token_embedding});
  out.push_back({prefix + "embedding.position", position_embedding});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string lp = layer_prefix(prefix, l + 1);
    for (const auto& [role, member] : LayerParams::roles()) {
      out.push_back({lp + std::string(role), layers[l].*member});
    }
  }
}

EncoderParams init_student_from_teacher(const EncoderParams& teacher, std::size_t n) {
  if (n == 0 || n > teacher.layers.size()) {
    throw ConfigError("student depth " + std::to_string(n) + " must lie in 1.." +
                      std::to_string(teacher.layers.size()) + " (teacher depth)");
  }
  EncoderParams student;
  student.config = teacher.config;
  student.config.num_layers = n;
  student.token_embedding = teacher.token_embedding.clone();
  student.position_embedding = teacher.position_embedding.clone();
  for (std::size_t l = 0; l < n; ++l) student.layers.push_back(teacher.layers[l].clone());
  return student;
}

std::size_t TokenSequence::length() const {
  std::size_t n = 0;
  for (auto m : mask) n += m != 0;
  return n;
}

TokenBatch TokenBatch::pack(const std::vector<const TokenSequence*>& sequences) {
  if (sequences.empty()) throw DimensionError("TokenBatch::pack: empty batch");
  std::size_t width = 0;
  for (const TokenSequence* s : sequences) {
    if (s->ids.size() != s->mask.size()) throw DimensionError("token ids and mask differ in length");
    for (std::size_t i = s->mask.size(); i > 0; --i) {
      if (s->mask[i - 1]) {
        width = std::max(width, i);
        break;
      }
    }
  }
  if (width == 0) throw InputError("batch contains no unmasked token");
  TokenBatch out;
  out.layout = {sequences.size(), width};
  out.ids.assign(out.layout.rows(), 0);
  out.mask.assign(out.layout.rows(), 0);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    const std::size_t len = std::min(width, sequences[b]->ids.size());
    for (std::size_t i = 0; i < len; ++i) {
      out.ids[b * width + i] = sequences[b]->ids[i];
      out.mask[b * width + i] = sequences[b]->mask[i];
    }
  }
  return out;
}

namespace {

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return ops::add_bias(tape, ops::matmul(tape, x, w), b);
}

}  // namespace

EncoderState encode(Tape& tape, const EncoderParams& params, const TokenBatch& batch, const ForwardOptions& options) {
  const auto& cfg = params.config;
  if (batch.layout.seq > cfg.max_seq_len) {
    throw InputError("sequence length " + std::to_string(batch.layout.seq) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  }
  std::vector<std::size_t> positions(batch.layout.rows());
  for (std::size_t r = 0; r < positions.size(); ++r) positions[r] = r % batch.layout.seq;

  EncoderState state;
  state.mask = batch.mask;
  state.layout = batch.layout;
  state.embeddings = ops::add(tape, ops::embedding(tape, params.token_embedding, batch.ids),
                              ops::embedding(tape, params.position_embedding, positions));

  Rng* rng = options.dropout_rng;
  const double p = rng ? cfg.dropout : 0.0;
  Tensor x = state.embeddings;
  for (const auto& layer : params.layers) {
    Tensor q = linear(tape, x, layer.wq, layer.bq);
    Tensor k = linear(tape, x, layer.wk, layer.bk);
    Tensor v = linear(tape, x, layer.wv, layer.bv);
    Tensor a = ops::attention(tape, q, k, v, batch.layout, cfg.num_heads, batch.mask, p, rng);
    Tensor attn_out = linear(tape, a, layer.wo, layer.bo);
    Tensor x1 = ops::layer_norm(tape, ops::add(tape, x, attn_out), layer.ln1_gamma, layer.ln1_beta,
                                cfg.layer_norm_eps);
    Tensor f = ops::gelu(tape, linear(tape, x1, layer.ffn_w1, layer.ffn_b1));
    f = ops::dropout(tape, linear(tape, f, layer.ffn_w2, layer.ffn_b2), p, rng);
    x = ops::layer_norm(tape, ops::add(tape, x1, f), layer.ln2_gamma, layer.ln2_beta, cfg.layer_norm_eps);
    state.layer_hidden.push_back(x);
  }
  return state;
}

}  // namespace newsdistill
