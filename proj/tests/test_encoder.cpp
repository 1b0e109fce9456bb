#include "catch_amalgamated.hpp"

#include "newsdistill/encoder.hpp"
#include "newsdistill/errors.hpp"
#include "test_support.hpp"

using namespace newsdistill;

namespace {

EncoderConfig small_config(std::size_t layers) {
  EncoderConfig c;
  c.vocab_size = 30;
  c.max_seq_len = 8;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.num_layers = layers;
  c.dropout = 0.0;
  return c;
}

TokenBatch manual_batch(std::vector<std::size_t> ids, Mask mask) {
  TokenBatch b;
  b.layout = {1, ids.size()};
  b.ids = std::move(ids);
  b.mask = std::move(mask);
  return b;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  std::vector<double> out;
  for (std::size_t c = 0; c < t.cols(); ++c) out.push_back(t.at(r, c));
  return out;
}

}  // namespace

TEST_CASE("zero parameters give zero hidden states") {
  const auto params = EncoderParams::zeros(small_config(3));
  Tape tape(Tape::Mode::kInference);
  const auto state = encode(tape, params, manual_batch({3, 4, 5}, {1, 1, 1}));
  REQUIRE(state.depth() == 3);
  for (const auto& h : state.layer_hidden) {
    for (double v : h.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("single token through one layer") {
  Rng rng(1);
  const auto params = EncoderParams::random(small_config(1), rng);
  Tape tape(Tape::Mode::kInference);
  const auto state = encode(tape, params, manual_batch({7}, {1}));
  REQUIRE(state.layer_hidden.size() == 1);
  CHECK(state.layer_hidden[0].shape() == Shape{1, 8});
  CHECK(state.embeddings.shape() == Shape{1, 8});
}

TEST_CASE("depth contract") {
  Rng rng(2);
  const auto teacher = EncoderParams::random(small_config(4), rng);
  const auto student = init_student_from_teacher(teacher, 2);
  Tape tape(Tape::Mode::kInference);
  const auto batch = manual_batch({3, 4, 5}, {1, 1, 1});
  CHECK(encode(tape, teacher, batch).depth() == 4);
  CHECK(encode(tape, student, batch).depth() == 2);
}

TEST_CASE("permuting tail padding leaves valid positions bitwise unchanged") {
  Rng rng(3);
  const auto params = EncoderParams::random(small_config(2), rng);
  Tape tape(Tape::Mode::kInference);
  const auto a = encode(tape, params, manual_batch({4, 9, 6, 11, 17}, {1, 1, 1, 0, 0}));
  const auto b = encode(tape, params, manual_batch({4, 9, 6, 17, 11}, {1, 1, 1, 0, 0}));
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t r = 0; r < 3; ++r) CHECK(row(a.layer_hidden[l], r) == row(b.layer_hidden[l], r));
  }
}

TEST_CASE("attention puts zero weight on padded keys") {
  Rng rng(4);
  const Tensor q = testing::random_tensor({8, 4}, rng, false);
  const Tensor k = testing::random_tensor({8, 4}, rng, false);
  const Mask mask{1, 1, 0, 1, 1, 0, 0, 1};
  const auto probs = ops::attention_probabilities(q, k, {2, 4}, 2, mask);
  // [batch][head][query][key]
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t i = 0; i < 4; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
          const double p = probs[((b * 2 + h) * 4 + i) * 4 + j];
          if (!mask[b * 4 + j]) CHECK(std::abs(p) <= 1e-12);
          total += p;
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("out-of-vocabulary ids and overlong sequences are input errors") {
  Rng rng(5);
  const auto params = EncoderParams::random(small_config(1), rng);
  Tape tape(Tape::Mode::kInference);
  CHECK_THROWS_AS(encode(tape, params, manual_batch({3, 30}, {1, 1})), InputError);
  CHECK_THROWS_AS(encode(tape, params, manual_batch(std::vector<std::size_t>(9, 3), Mask(9, 1))), InputError);
}

TEST_CASE("config validation") {
  auto c = small_config(2);
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(2);
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS((BlockMap{0, 2}.validate()), ConfigError);
}

TEST_CASE("block_of enumerates teacher layers") {
  CHECK(block_of({2, 2}, 1) == std::vector<std::size_t>{1, 2});
  CHECK(block_of({2, 2}, 2) == std::vector<std::size_t>{3, 4});
  for (std::size_t i = 1; i <= 4; ++i) CHECK(block_of({1, 4}, i) == std::vector<std::size_t>{i});
  CHECK(block_of({4, 2}, 2) == std::vector<std::size_t>{5, 6, 7, 8});
  CHECK_THROWS_AS(block_of({2, 2}, 0), ContractError);
  CHECK_THROWS_AS(block_of({2, 2}, 3), ContractError);
}

TEST_CASE("student initialization copies the first layers") {
  Rng rng(6);
  const auto teacher = EncoderParams::random(small_config(4), rng);
  const auto student = init_student_from_teacher(teacher, 2);
  REQUIRE(student.layers.size() == 2);
  CHECK(student.config.num_layers == 2);
  auto same = [](const Tensor& a, const Tensor& b) {
    return std::equal(a.values().begin(), a.values().end(), b.values().begin(), b.values().end());
  };
  CHECK(same(student.token_embedding, teacher.token_embedding));
  CHECK(same(student.position_embedding, teacher.position_embedding));
  for (std::size_t l = 0; l < 2; ++l) {
    for (const auto& [role, member] : LayerParams::roles()) {
      INFO(role);
      CHECK(same(student.layers[l].*member, teacher.layers[l].*member));
      CHECK_FALSE((student.layers[l].*member).is_same(teacher.layers[l].*member));
    }
  }
  CHECK_FALSE(same(student.layers[1].wq, teacher.layers[2].wq));
  CHECK_THROWS_AS(init_student_from_teacher(teacher, 5), ConfigError);
}

TEST_CASE("student copies do not alias the teacher") {
  Rng rng(7);
  const auto teacher = EncoderParams::random(small_config(2), rng);
  const double before = teacher.layers[0].wq.value(0);
  auto student = init_student_from_teacher(teacher, 1);
  student.layers[0].wq.mutable_values()[0] += 1.0;
  student.token_embedding.mutable_values()[0] += 1.0;
  CHECK(teacher.layers[0].wq.value(0) == before);
  CHECK(teacher.token_embedding.value(0) != student.token_embedding.value(0));
}

TEST_CASE("full-depth copy reproduces the teacher bitwise") {
  Rng rng(8);
  const auto teacher = EncoderParams::random(small_config(3), rng);
  const auto student = init_student_from_teacher(teacher, 3);
  Tape tape(Tape::Mode::kInference);
  const auto batch = manual_batch({2, 5, 8, 13, 0}, {1, 1, 1, 1, 0});
  const auto t = encode(tape, teacher, batch);
  const auto s = encode(tape, student, batch);
  const auto tv = t.last().values();
  const auto sv = s.last().values();
  CHECK(std::equal(tv.begin(), tv.end(), sv.begin(), sv.end()));
}

TEST_CASE("token batches trim to the widest unmasked extent") {
  const TokenSequence a{{3, 4, 0, 0}, {1, 1, 0, 0}};
  const TokenSequence b{{5, 6, 7, 0}, {1, 1, 1, 0}};
  const auto batch = TokenBatch::pack({&a, &b});
  CHECK(batch.layout.batch == 2);
  CHECK(batch.layout.seq == 3);
  CHECK(batch.ids == std::vector<std::size_t>{3, 4, 0, 5, 6, 7});
  CHECK(batch.mask == Mask{1, 1, 0, 1, 1, 1});
  const TokenSequence empty{{0, 0}, {0, 0}};
  CHECK_THROWS_AS(TokenBatch::single(empty), InputError);
}
