#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "newsdistill/ops.hpp"
#include "newsdistill/rng.hpp"
#include "newsdistill/tensor.hpp"

namespace newsdistill {

struct EncoderConfig {
  std::size_t vocab_size = 1000;
  std::size_t max_seq_len = 16;
  std::size_t hidden_dim = 32;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 64;
  std::size_t num_layers = 4;
  double dropout = 0.2;
  double layer_norm_eps = 1e-12;

  void validate() const;
  bool same_geometry(const EncoderConfig& other) const;
};

// Teacher blocks: student layer i (1-based) pairs with teacher layers (i-1)K+1 .. iK.
struct BlockMap {
  std::size_t k = 1;
  std::size_t n = 1;

  std::size_t teacher_depth() const { return n * k; }
  void validate() const;
};

// 1-based teacher layer indices of block i.
std::vector<std::size_t> block_of(const BlockMap& map, std::size_t i);

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gamma, ln1_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln2_gamma, ln2_beta;

  using Member = Tensor LayerParams::*;
  // Every layer has the same roles and shapes; momentum distillation pairs
  // student and teacher tensors by role name.
  static const std::array<std::pair<std::string_view, Member>, 16>& roles();

  LayerParams clone() const;
};

struct EncoderParams {
  EncoderConfig config;
  Tensor token_embedding;     // [vocab x hidden]
  Tensor position_embedding;  // [max_seq_len x hidden]
  std::vector<LayerParams> layers;

  static EncoderParams random(const EncoderConfig& config, Rng& rng);
  static EncoderParams zeros(const EncoderConfig& config);

  EncoderParams clone() const;
  // Names: <prefix>embedding.token, <prefix>layer.<i>.<role> with 1-based i.
  void append_parameters(ParameterList& out, const std::string& prefix) const;
};

std::string layer_prefix(const std::string& owner, std::size_t layer_1based);

// Student embedding layer and layers 1..n copied (deeply) from the teacher.
EncoderParams init_student_from_teacher(const EncoderParams& teacher, std::size_t n);

// One tokenized text, padded to a fixed width; mask marks real tokens.
struct TokenSequence {
  std::vector<std::size_t> ids;
  Mask mask;

  std::size_t length() const;  // number of unmasked positions
  bool operator==(const TokenSequence&) const = default;
};

// Sequences padded to a common length; row b*seq + i is token i of sequence b.
struct TokenBatch {
  ops::SequenceLayout layout;
  std::vector<std::size_t> ids;
  Mask mask;

  // Packs sequences, trimmed to the widest unmasked extent in the batch.
  static TokenBatch pack(const std::vector<const TokenSequence*>& sequences);
  static TokenBatch single(const TokenSequence& sequence) { return pack({&sequence}); }
};

struct ForwardOptions {
  // Dropout is active only when an RNG is supplied.
  Rng* dropout_rng = nullptr;
};

// Outputs of one encoder pass: the embedding-layer output and every
// Transformer layer's hidden states, stacked over the batch.
struct EncoderState {
  Tensor embeddings;
  std::vector<Tensor> layer_hidden;
  Mask mask;
  ops::SequenceLayout layout;

  std::size_t depth() const { return layer_hidden.size(); }
  const Tensor& last() const { return layer_hidden.empty() ? embeddings : layer_hidden.back(); }
};

EncoderState encode(Tape& tape, const EncoderParams& params, const TokenBatch& batch,
                    const ForwardOptions& options = {});

}  // namespace newsdistill
