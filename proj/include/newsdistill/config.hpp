#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "newsdistill/data.hpp"
#include "newsdistill/encoder.hpp"
#include "newsdistill/tasks.hpp"

namespace newsdistill {

enum class DataKind { kSynthetic, kMind, kJsonl };

// Every synthetic generator reads the fields it needs.
struct SyntheticFields {
  std::uint64_t seed = 0;  // 0: use the run seed
  std::size_t vocab_size = 200;
  std::size_t num_classes = 4;
  std::size_t seq_len = 12;
  double signal_strength = 0.7;
  std::size_t indicators_per_class = 4;
  std::size_t distractors = 0;
  std::size_t num_topics = 8;
  std::size_t news_per_topic = 40;
  std::size_t num_users = 300;
  std::size_t topics_per_user = 1;
  std::size_t clicks = 8;
  std::size_t negatives = 4;
  double affinity = 1.0;
  std::size_t query_len = 8;
  std::size_t doc_len = 16;
  std::size_t n_train = 5000;
  std::size_t n_valid = 500;
  std::size_t n_test = 2000;
};

struct DataFields {
  DataKind kind = DataKind::kSynthetic;
  std::filesystem::path news;       // MIND news.tsv
  std::filesystem::path behaviors;  // MIND behaviors.tsv
  std::filesystem::path train, valid, test;  // retrieval JSONL
  std::filesystem::path vocab;      // optional vocab file
  std::size_t vocab_max_size = 30000;
  double test_fraction = 1.0 / 6.0;
  double valid_fraction = 0.1;
  std::size_t query_len = 16;
  std::size_t doc_len = 64;
  SyntheticFields synthetic;
};

struct BenchFields {
  std::size_t passes = 1000;
  std::size_t warmup = 100;
  std::size_t seq_len = 16;
};

struct GradcheckFields {
  std::size_t samples = 200;
  double tolerance = 1e-3;
  double step = 1e-5;
};

// Flat "key = value" configuration; see README for every key.
struct RunConfig {
  RunConfig() { encoder.vocab_size = 0; }

  tasks::TrainOptions train;
  EncoderConfig encoder;  // teacher geometry; num_layers is the teacher depth, vocab_size 0 = from data
  std::size_t k = 2;
  std::size_t attn_dim = 16;
  DataFields data;
  std::filesystem::path out_dir = "out";
  std::filesystem::path init_checkpoint;
  bool init_from_teacher = false;
  std::filesystem::path resume_from;
  std::vector<double> sweep_betas = {0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  BenchFields bench;
  GradcheckFields gradcheck;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  // Canonical text: every key in documented order.
  std::string dump() const;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  BlockMap block_map() const;
  // Geometry, divisibility and existence of referenced paths.
  void validate() const;
};

// Seed the synthetic generators use.
std::uint64_t data_seed(const RunConfig& config);

// Loads or generates the dataset the config names. Fills the vocab size into
// encoder.vocab_size when it is 0.
tasks::TaskData load_task_data(RunConfig& config, data::Vocab* vocab_out = nullptr);

}  // namespace newsdistill
