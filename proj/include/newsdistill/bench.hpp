#pragma once

#include <cstddef>
#include <cstdint>

#include "newsdistill/encoder.hpp"

namespace newsdistill {

struct BenchReport {
  std::size_t teacher_depth = 0;
  std::size_t student_depth = 0;
  std::size_t k = 0;
  std::size_t samples = 0;  // timed passes per model
  std::size_t warmup = 0;
  std::size_t seq_len = 0;
  double teacher_median_us = 0.0;
  double student_median_us = 0.0;

  double ratio() const { return teacher_median_us / student_median_us; }
};

// Median single-sequence forward latency (encoder + attentive pooling, no
// gradient tape) of a teacher and a student of depth teacher_depth / K.
BenchReport bench_forward(const EncoderConfig& teacher_config, const BlockMap& map, std::size_t attn_dim,
                          std::size_t passes, std::size_t warmup, std::size_t seq_len, std::uint64_t seed);

}  // namespace newsdistill
