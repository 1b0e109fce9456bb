#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "newsdistill/data.hpp"
#include "newsdistill/distill.hpp"
#include "newsdistill/encoder.hpp"
#include "newsdistill/heads.hpp"
#include "newsdistill/metrics.hpp"

namespace newsdistill::tasks {

enum class TaskKind { kClassify, kRecsys, kRetrieval };

std::string to_string(TaskKind task);
TaskKind parse_task(const std::string& text);

// ---------------------------------------------------------------------------
// Classification: encode -> attentive pool -> dense.

PathOutput classify_forward(Tape& tape, const EncoderParams& encoder, const HeadParams& heads, const TokenBatch& batch,
                            Rng* dropout_rng);

TokenBatch classify_tokens(std::span<const data::ClassifySample* const> samples);

// ---------------------------------------------------------------------------
// Two-tower recommendation.

// One pooled vector per news: [batch x hidden].
Tensor news_embed(Tape& tape, const EncoderParams& encoder, const HeadParams& heads, const TokenBatch& news,
                  Rng* dropout_rng, EncoderState* state_out = nullptr);

// Attentive pooling over each user's clicked news. history_rows holds
// layout.batch * layout.seq row indices into news_emb, kZeroRow marking padding.
// Each user's clicks are pooled in a canonical (value-sorted) order so the
// result is bitwise independent of history order. Users without clicks get u = 0.
Tensor user_encode(Tape& tape, const PoolingParams& user, const Tensor& news_emb,
                   std::span<const std::size_t> history_rows, ops::SequenceLayout layout);

// <u, h> for u, h of shape [hidden]; result has shape [1].
Tensor click_score(Tape& tape, const Tensor& u, const Tensor& h);

// Every impression's history and candidates, with each distinct news encoded once.
struct RecsysBatch {
  TokenBatch news;
  std::vector<std::size_t> history_rows;  // batch * history_len, kZeroRow padded
  ops::SequenceLayout history_layout;
  std::vector<std::size_t> candidate_rows;     // flattened over impressions
  std::vector<std::size_t> candidate_offsets;  // batch + 1 entries
  std::vector<std::size_t> positives;          // index of the clicked candidate (training batches)

  std::size_t size() const { return history_layout.batch; }
  // Candidate count shared by every impression, 0 when they differ.
  std::size_t uniform_candidates() const;
};

// Keeps the history_len most recent clicks of each impression.
RecsysBatch make_recsys_batch(const data::ImpressionDataset& dataset,
                              std::span<const data::Impression* const> impressions, std::size_t history_len);

// Per-impression candidate scores, flattened like candidate_rows: [total candidates].
Tensor recsys_scores(Tape& tape, const EncoderParams& encoder, const HeadParams& heads, const RecsysBatch& batch,
                     Rng* dropout_rng, Tensor* news_emb_out = nullptr, Tensor* users_out = nullptr,
                     EncoderState* state_out = nullptr);

// Logits [batch x C] over the candidates; pooled = {news embeddings, user embeddings}.
PathOutput recsys_forward(Tape& tape, const EncoderParams& encoder, const HeadParams& heads, const RecsysBatch& batch,
                          Rng* dropout_rng);

// One training instance per clicked candidate: that positive first, followed by
// num_negatives non-clicked candidates of the same impression (all of them, in
// order, when there are exactly num_negatives; sampled otherwise). Impressions
// without non-clicked candidates draw negatives from the whole news table.
std::vector<data::Impression> training_instances(const data::ImpressionDataset& dataset,
                                                 std::span<const data::Impression> impressions,
                                                 std::size_t num_negatives, Rng& rng);

// ---------------------------------------------------------------------------
// Two-tower retrieval: query and document towers share one encoder + pooling.

struct RetrievalBatch {
  TokenBatch queries;
  TokenBatch docs;
  std::vector<double> labels;
};

RetrievalBatch make_retrieval_batch(std::span<const data::RetrievalSample* const> samples);

// Inner products of query and document embeddings: [batch].
Tensor retrieval_scores(Tape& tape, const EncoderParams& encoder, const HeadParams& heads, const RetrievalBatch& batch,
                        Rng* dropout_rng);

// ---------------------------------------------------------------------------
// Training driver.

struct TaskData {
  TaskKind task = TaskKind::kClassify;
  data::ClassificationDataset classification;
  data::ImpressionDataset impressions;
  data::RetrievalDataset retrieval;
};

struct TrainOptions {
  TaskKind task = TaskKind::kClassify;
  DistillConfig distill;
  AdamConfig adam;
  std::size_t epochs = 3;
  std::size_t teacher_epochs = 0;  // disjoint teacher phase; 0 means `epochs`
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::size_t history_len = 8;
  std::size_t num_negatives = 4;
  std::size_t eval_every = 1;  // epochs between validation passes; 0: last epoch only
  std::size_t max_steps = 0;   // per phase; 0: unlimited
};

struct ModelMetrics {
  std::string model;  // "teacher" or "student"
  std::string split;  // "valid" or "test"
  std::vector<metrics::MetricRecord> records;

  double value(const std::string& metric) const;
};

struct EpochReport {
  int phase = 0;
  std::size_t epoch = 0;  // 1-based within the phase
  std::vector<ModelMetrics> metrics;
  bool improved = false;  // new best validation value of the selection metric
};

// Everything needed to continue training exactly where it stopped.
struct TrainState {
  ModelPair pair;
  AdamState adam;
  Rng data_rng;
  Rng dropout_rng;
  // Data-order RNG at the start of the student-facing phase; the disjoint
  // student phase restarts from it so it sees the batches a joint student sees.
  Rng phase_start_rng;
  int phase = 0;  // 1: disjoint student phase
  std::size_t epoch = 0;  // completed epochs of the current phase
  std::uint64_t global_step = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  int best_phase = 0;
  // FNV-1a digest of each epoch's sample order, per phase.
  std::vector<std::uint64_t> order_digests;
};

// Head layout the task needs.
HeadSpec head_spec(TaskKind task, std::size_t attn_dim, std::size_t num_classes);

// Fresh models for the configured mode. The joint teacher and the disjoint
// teacher of the same seed start from identical weights.
ModelPair initial_pair(const TrainOptions& options, const EncoderConfig& teacher_config, const BlockMap& map,
                       const HeadSpec& heads);

// Keeps one side of a trained pair (student when present, teacher otherwise) as
// a student-only model whose heads carry only the pooling layer; used to start
// retrieval fine-tuning from a distilled checkpoint.
ModelPair transfer_pair(const ModelPair& source, bool take_teacher = false);

TrainState make_state(const TrainOptions& options, ModelPair pair);

struct TrainHooks {
  std::function<void(const StepReport&, int phase)> on_step;
  // Called after every epoch (after validation when it ran).
  std::function<void(const EpochReport&, const TrainState&)> on_epoch;
};

// Runs (or resumes) training until all phases have completed their epochs.
void train(TrainState& state, const TaskData& data, const TrainOptions& options, const TrainHooks& hooks = {});

// Dropout off; metrics of every model present in the pair.
std::vector<ModelMetrics> evaluate(const ModelPair& pair, const TaskData& data, const std::string& split,
                                   const TrainOptions& options);

// Metric used to pick the best checkpoint: accuracy or AUC.
std::string selection_metric(TaskKind task);

// Predictions of one side over a classification split.
std::vector<std::size_t> predict_classes(const EncoderParams& encoder, const HeadParams& heads,
                                         std::span<const data::ClassifySample> samples, std::size_t batch_size);

}  // namespace newsdistill::tasks
