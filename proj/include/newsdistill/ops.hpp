#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "newsdistill/rng.hpp"
#include "newsdistill/tensor.hpp"

// Differentiable primitives. Every op takes the tape first; with an inference
// tape (or inputs that need no gradient) nothing is recorded.
namespace newsdistill::ops {

// `batch` sequences of `seq` rows each, stacked into a [batch*seq x d] matrix.
struct SequenceLayout {
  std::size_t batch = 1;
  std::size_t seq = 1;
  std::size_t rows() const { return batch * seq; }
};

// [m x k] . [k x n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
// [m x n] + row vector [n]
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor gelu(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
// A copy that gradient does not flow through.
Tensor detach(const Tensor& x);
Tensor sum(Tape& tape, const Tensor& x);

// Softmax along `axis` with max subtraction.
Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);

// Row-wise normalization of a matrix followed by gamma/beta over the last axis.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Rows of `table` selected by `ids`.
Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::size_t> ids);

// Rows of `x`; an index equal to kZeroRow yields a zero row.
inline constexpr std::size_t kZeroRow = static_cast<std::size_t>(-1);
Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows);

// Inverted dropout; identity when p == 0 or rng is null.
Tensor dropout(Tape& tape, const Tensor& x, double p, Rng* rng);

// Scaled dot-product multi-head self-attention core over stacked sequences.
// Keys at masked positions receive exactly zero probability. Dropout, when
// active, is applied to the attention probabilities.
Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, SequenceLayout layout,
                 std::size_t heads, const Mask& key_mask, double dropout_p, Rng* rng);

// Attention probabilities [batch*heads*seq*seq] (inference only, for inspection).
std::vector<double> attention_probabilities(const Tensor& q, const Tensor& k, SequenceLayout layout,
                                            std::size_t heads, const Mask& key_mask);

// Softmax of per-row scores within each segment, excluding masked rows.
// A fully masked segment throws InputError unless allow_empty, in which case
// its weights are all zero.
Tensor segment_softmax(Tape& tape, const Tensor& scores, SequenceLayout layout, const Mask& mask,
                       bool allow_empty);

// out[b] = sum_i weights[b, i] * x[b, i]  -> [batch x d]
Tensor segment_weighted_sum(Tape& tape, const Tensor& weights, const Tensor& x, SequenceLayout layout);

// Row-wise inner products of two [n x d] matrices -> [n]
Tensor rows_dot(Tape& tape, const Tensor& a, const Tensor& b);

// Mean of squared differences over all elements, or over the rows where
// row_mask is set when given.
Tensor mse(Tape& tape, const Tensor& a, const Tensor& b, const Mask* row_mask = nullptr);

// Mean over rows of -log softmax(logits)[label].
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> labels);

enum class TemperatureMode {
  kLogits,         // softmax(z / t)
  kProbabilities,  // softmax(z) / t, the literal reading of the soft-label formula
};

// Mean over rows of CE(soft target, soft prediction). The target side is a
// constant: no gradient flows into target_logits.
Tensor soft_cross_entropy(Tape& tape, const Tensor& target_logits, const Tensor& logits, double temperature,
                          TemperatureMode mode = TemperatureMode::kLogits);

// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels.
Tensor bce_with_logits(Tape& tape, const Tensor& logits, std::span<const double> labels);

}  // namespace newsdistill::ops
