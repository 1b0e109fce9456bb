#include "newsdistill/bench.hpp"

#include <algorithm>
#include <chrono>

#include "newsdistill/errors.hpp"
#include "newsdistill/heads.hpp"

namespace newsdistill {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Sink so the optimizer keeps every pass.
volatile double g_sink = 0.0;

}  // namespace

BenchReport bench_forward(const EncoderConfig& teacher_config, const BlockMap& map, std::size_t attn_dim,
                          std::size_t passes, std::size_t warmup, std::size_t seq_len, std::uint64_t seed) {
  map.validate();
  if (teacher_config.num_layers != map.teacher_depth()) {
    throw ConfigError("teacher depth " + std::to_string(teacher_config.num_layers) + " is not K*N = " +
                      std::to_string(map.teacher_depth()));
  }
  if (passes == 0) throw ConfigError("bench.passes must be positive");
  if (seq_len == 0 || seq_len > teacher_config.max_seq_len) {
    throw ConfigError("bench.seq_len must lie in 1..max_seq_len");
  }
  Rng rng(seed);
  const EncoderParams teacher = EncoderParams::random(teacher_config, rng);
  const EncoderParams student = init_student_from_teacher(teacher, map.n);
  const PoolingParams pool = PoolingParams::random(teacher_config.hidden_dim, attn_dim, rng);

  std::vector<std::size_t> ids(seq_len);
  for (auto& id : ids) id = 2 + rng.index(teacher_config.vocab_size - 2);
  TokenSequence seq{ids, Mask(seq_len, 1)};
  const TokenBatch batch = TokenBatch::single(seq);

  auto pass = [&](const EncoderParams& enc) {
    const auto t0 = std::chrono::steady_clock::now();
    Tape tape(Tape::Mode::kInference);
    const EncoderState st = encode(tape, enc, batch);
    const Tensor h = attentive_pool(tape, pool, st.last(), st.layout, st.mask);
    g_sink = g_sink + h.value(0);
    return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
  };
  // Interleaved so drift in machine load hits both models alike.
  for (std::size_t i = 0; i < warmup; ++i) {
    pass(teacher);
    pass(student);
  }
  std::vector<double> tt, st;
  tt.reserve(passes);
  st.reserve(passes);
  for (std::size_t i = 0; i < passes; ++i) {
    tt.push_back(pass(teacher));
    st.push_back(pass(student));
  }
  BenchReport r;
  r.teacher_depth = map.teacher_depth();
  r.student_depth = map.n;
  r.k = map.k;
  r.samples = passes;
  r.warmup = warmup;
  r.seq_len = seq_len;
  r.teacher_median_us = median(tt);
  r.student_median_us = median(st);
  return r;
}

}  // namespace newsdistill
