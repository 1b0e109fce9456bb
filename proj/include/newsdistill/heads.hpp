#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "newsdistill/ops.hpp"
#include "newsdistill/rng.hpp"
#include "newsdistill/tensor.hpp"

namespace newsdistill {

// Additive attention pooling with a learned query:
//   s_i = query . tanh(H_i W + b),  alpha = softmax over unmasked i,  out = sum alpha_i H_i
struct PoolingParams {
  Tensor proj_weight;  // [hidden x attn_dim]
  Tensor proj_bias;    // [attn_dim]
  Tensor query;        // [attn_dim]

  static PoolingParams random(std::size_t hidden, std::size_t attn_dim, Rng& rng);
  PoolingParams clone() const;
  void append_parameters(ParameterList& out, const std::string& prefix) const;
};

struct DenseParams {
  Tensor weight;  // [hidden x num_classes]
  Tensor bias;    // [num_classes]

  static DenseParams random(std::size_t hidden, std::size_t num_classes, Rng& rng);
  DenseParams clone() const;
  void append_parameters(ParameterList& out, const std::string& prefix) const;
};

// The task heads a path runs through. In joint mode the teacher and student
// hold the same HeadParams (same tensors, not copies).
struct HeadParams {
  PoolingParams pool;
  std::optional<DenseParams> dense;  // classification
  std::optional<PoolingParams> user; // recommendation user encoder

  HeadParams clone() const;
  // Names: <prefix>pool.*, <prefix>dense.*, <prefix>user.*
  void append_parameters(ParameterList& out, const std::string& prefix) const;
  bool same_objects(const HeadParams& other) const;
};

// One pooled vector per segment: H [batch*seq x hidden] -> [batch x hidden].
// Fully masked segments throw InputError unless allow_empty (zero output).
Tensor attentive_pool(Tape& tape, const PoolingParams& p, const Tensor& h, ops::SequenceLayout layout,
                      const Mask& mask, bool allow_empty = false);

// The pooling weights alone (inference), one per row.
std::vector<double> attentive_pool_weights(const PoolingParams& p, const Tensor& h, ops::SequenceLayout layout,
                                           const Mask& mask);

// logits = h W + b, h: [batch x hidden]
Tensor classify(Tape& tape, const DenseParams& d, const Tensor& h);

}  // namespace newsdistill
