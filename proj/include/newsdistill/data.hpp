#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "newsdistill/encoder.hpp"

namespace newsdistill::data {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kReservedIds = 2;

// Token <-> id map with PAD = 0 and UNK = 1 reserved.
class Vocab {
 public:
  Vocab() = default;

  // Most frequent tokens first, ties broken lexicographically; at most
  // max_size ids including the reserved ones.
  static Vocab build(const std::vector<std::vector<std::string>>& corpus, std::size_t max_size);
  // Tokens in id order starting at kReservedIds.
  static Vocab from_tokens(std::vector<std::string> tokens);

  // One token per line; id = line index + kReservedIds.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t id(std::string_view token) const;  // kUnkId when absent
  const std::string& token(std::size_t id) const;
  std::size_t size() const { return tokens_.size() + kReservedIds; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// Lowercased alphanumeric runs; whitespace and punctuation separate words and are dropped.
std::vector<std::string> split_words(std::string_view text);

// Words -> ids (UNK fallback), truncated to max_len and padded with PAD.
TokenSequence tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len);

TokenSequence make_sequence(const std::vector<std::size_t>& ids, std::size_t max_len);

struct ClassifySample {
  TokenSequence tokens;
  std::size_t label = 0;
  std::string news_id;
};

struct ClassificationDataset {
  std::vector<ClassifySample> train, valid, test;
  std::vector<std::string> class_names;
  std::size_t num_classes() const { return class_names.size(); }
};

// Indices refer to ImpressionDataset::news.
struct Impression {
  std::vector<std::size_t> history;
  std::vector<std::size_t> candidates;
  std::vector<int> labels;
  std::string user_id;
};

struct ImpressionDataset {
  std::vector<TokenSequence> news;
  std::vector<std::string> news_ids;
  std::vector<Impression> train, valid, test;
};

struct RetrievalSample {
  TokenSequence query;
  TokenSequence doc;
  int label = 0;
};

struct RetrievalDataset {
  std::vector<RetrievalSample> train, valid, test;
};

// ---------------------------------------------------------------------------
// MIND tab-separated layout.

struct MindOptions {
  std::size_t max_seq_len = 16;
  std::size_t vocab_max_size = 30000;
  // Impressions in the last test_fraction of the time span form the test
  // split; the last valid_fraction of the remainder forms validation.
  double test_fraction = 1.0 / 6.0;
  double valid_fraction = 0.1;
};

struct MindData {
  Vocab vocab;
  ClassificationDataset classification;
  ImpressionDataset impressions;
  std::size_t skipped_unknown_news = 0;
};

struct NewsRecord {
  std::string news_id;
  std::string category;
  std::string subcategory;
  std::string title;
};

struct BehaviorRecord {
  std::string impression_id;
  std::string user_id;
  std::int64_t time = 0;  // seconds, comparable within a file
  std::vector<std::string> history;
  std::vector<std::pair<std::string, int>> impressions;
};

NewsRecord parse_news_line(std::string_view line, std::size_t line_no);
BehaviorRecord parse_behavior_line(std::string_view line, std::size_t line_no);
// "11/15/2019 8:55:22 AM"
std::int64_t parse_mind_time(std::string_view text);

// When vocab is null one is built from the news titles.
MindData load_mind(const std::filesystem::path& news_path, const std::filesystem::path& behaviors_path,
                   const MindOptions& options = {}, const Vocab* vocab = nullptr);

// Writes classification news (category = class name) and impressions in MIND
// layout; titles are rendered through the vocab.
void write_mind(const std::filesystem::path& news_path, const std::filesystem::path& behaviors_path,
                const Vocab& vocab, const ClassificationDataset* classification, const ImpressionDataset* impressions);

// ---------------------------------------------------------------------------
// Retrieval JSONL: {"query": string, "doc": string, "label": 0|1} per line.

std::vector<RetrievalSample> load_retrieval_jsonl(const std::filesystem::path& path, const Vocab& vocab,
                                                  std::size_t query_len, std::size_t doc_len);
void write_retrieval_jsonl(const std::filesystem::path& path, const std::vector<RetrievalSample>& samples,
                           const Vocab& vocab);

// ---------------------------------------------------------------------------
// Seeded synthetic generators.

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t vocab_size = 200;
  std::size_t num_classes = 4;
  std::size_t seq_len = 12;
  // Probability that a sample carries its class signal.
  double signal_strength = 0.7;
  // Disjoint class-indicative tokens per class; a signal-carrying sample
  // contains exactly one of its class's indicators.
  std::size_t indicators_per_class = 4;
  // Indicators of uniformly random classes added to every sample. When
  // positive, the genuine indicator is marked by a preceding cue token, so the
  // label depends on token order rather than on token presence alone.
  std::size_t distractors = 0;
  std::size_t n_train = 5000;
  std::size_t n_valid = 500;
  std::size_t n_test = 2000;
};

struct SyntheticClassification {
  ClassificationDataset dataset;
  Vocab vocab;
  double bayes_accuracy = 0.0;
};

SyntheticClassification gen_synthetic_classification(const SyntheticSpec& spec);

struct ImpressionSpec {
  std::uint64_t seed = 1;
  std::size_t vocab_size = 200;
  std::size_t num_topics = 8;
  std::size_t seq_len = 10;
  std::size_t news_per_topic = 40;
  std::size_t num_users = 300;
  std::size_t topics_per_user = 1;
  std::size_t history_len = 8;
  std::size_t num_negatives = 4;
  // Probability that a clicked (history or positive) news comes from the
  // user's preferred topics; 0 makes users preference-free.
  double affinity = 1.0;
  std::size_t n_train = 2000;
  std::size_t n_valid = 200;
  std::size_t n_test = 500;
};

struct SyntheticImpressions {
  ImpressionDataset dataset;
  Vocab vocab;
  std::vector<std::size_t> news_topic;
  // Planted-model scores per test impression (user preference of the candidate topic).
  std::vector<std::vector<double>> oracle_scores;
  double oracle_auc = 0.0;
};

SyntheticImpressions gen_synthetic_impressions(const ImpressionSpec& spec);

struct RetrievalSpec {
  std::uint64_t seed = 1;
  std::size_t vocab_size = 200;
  std::size_t num_topics = 8;
  std::size_t query_len = 8;
  std::size_t doc_len = 16;
  std::size_t n_train = 2000;
  std::size_t n_valid = 200;
  std::size_t n_test = 500;
};

// Queries and documents drawn from topic vocabularies; relevant iff same topic.
// Uses the same topic vocabulary layout as gen_synthetic_impressions so that
// models distilled on impressions transfer.
struct SyntheticRetrieval {
  RetrievalDataset dataset;
  Vocab vocab;
};

SyntheticRetrieval gen_synthetic_retrieval(const RetrievalSpec& spec);

// "w<id>" naming used by the synthetic generators.
Vocab synthetic_vocab(std::size_t vocab_size);

}  // namespace newsdistill::data
