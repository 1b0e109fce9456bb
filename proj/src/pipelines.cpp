#include <algorithm>
#include <unordered_map>

#include "newsdistill/errors.hpp"
#include "newsdistill/tasks.hpp"

namespace newsdistill::tasks {

std::string to_string(TaskKind task) {
  switch (task) {
    case TaskKind::kClassify: return "classify";
    case TaskKind::kRecsys: return "recsys";
    case TaskKind::kRetrieval: return "retrieval";
  }
  return "classify";
}

TaskKind parse_task(const std::string& text) {
  if (text == "classify") return TaskKind::kClassify;
  if (text == "recsys") return TaskKind::kRecsys;
  if (text == "retrieval") return TaskKind::kRetrieval;
  throw ConfigError("task: expected classify|recsys|retrieval, got '" + text + "'");
}

PathOutput classify_forward(Tape& tape, const EncoderParams& encoder, const HeadParams& heads, const TokenBatch& batch,
                            Rng* dropout_rng) {
  if (!heads.dense) throw ContractError("classification needs a dense head");
  PathOutput out;
  out.state = encode(tape, encoder, batch, {dropout_rng});
  Tensor h = attentive_pool(tape, heads.pool, out.state.last(), batch.layout, batch.mask);
  out.logits = classify(tape, *heads.dense, h);
  out.pooled = {h};
  return out;
}

TokenBatch classify_tokens(std::span<const data::ClassifySample* const> samples) {
  std::vector<const TokenSequence*> seqs;
  seqs.reserve(samples.size());
  for (const auto* s : samples) seqs.push_back(&s->tokens);
  return TokenBatch::pack(seqs);
}

Tensor news_embed(Tape& tape, const EncoderParams& encoder, const HeadParams& heads, const TokenBatch& news,
                  Rng* dropout_rng, EncoderState* state_out) {
  EncoderState state = encode(tape, encoder, news, {dropout_rng});
  Tensor pooled = attentive_pool(tape, heads.pool, state.last(), news.layout, news.mask);
  if (state_out) *state_out = std::move(state);
  return pooled;
}

Tensor user_encode(Tape& tape, const PoolingParams& user, const Tensor& news_emb,
                   std::span<const std::size_t> history_rows, ops::SequenceLayout layout) {
  if (history_rows.size() != layout.rows()) {
    throw DimensionError("user_encode: " + std::to_string(history_rows.size()) + " history rows for layout " +
                         std::to_string(layout.batch) + "x" + std::to_string(layout.seq));
  }
  const std::size_t d = news_emb.cols();
  const auto values = news_emb.values();
  auto row_less = [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(values.begin() + a * d, values.begin() + (a + 1) * d, values.begin() + b * d,
                                        values.begin() + (b + 1) * d);
  };
  std::vector<std::size_t> rows(layout.rows(), ops::kZeroRow);
  Mask mask(layout.rows(), 0);
  for (std::size_t b = 0; b < layout.batch; ++b) {
    std::vector<std::size_t> clicked;
    for (std::size_t i = 0; i < layout.seq; ++i) {
      const std::size_t r = history_rows[b * layout.seq + i];
      if (r == ops::kZeroRow) continue;
      if (r >= news_emb.rows()) throw DimensionError("user_encode: history row out of range");
      clicked.push_back(r);
    }
    std::stable_sort(clicked.begin(), clicked.end(), row_less);
    for (std::size_t i = 0; i < clicked.size(); ++i) {
      rows[b * layout.seq + i] = clicked[i];
      mask[b * layout.seq + i] = 1;
    }
  }
  Tensor h = ops::gather_rows(tape, news_emb, rows);
  return attentive_pool(tape, user, h, layout, mask, /*allow_empty=*/true);
}

Tensor click_score(Tape& tape, const Tensor& u, const Tensor& h) {
  if (u.rank() != 1 || u.shape() != h.shape()) {
    throw DimensionError("click_score expects two vectors of equal extent, got " + shape_to_string(u.shape()) +
                         " and " + shape_to_string(h.shape()));
  }
  const std::size_t d = u.numel();
  return ops::rows_dot(tape, ops::reshape(tape, u, {1, d}), ops::reshape(tape, h, {1, d}));
}

std::size_t RecsysBatch::uniform_candidates() const {
  if (candidate_offsets.size() < 2) return 0;
  const std::size_t c = candidate_offsets[1] - candidate_offsets[0];
  for (std::size_t b = 1; b + 1 < candidate_offsets.size(); ++b) {
    if (candidate_offsets[b + 1] - candidate_offsets[b] != c) return 0;
  }
  return c;
}

RecsysBatch make_recsys_batch(const data::ImpressionDataset& dataset,
                              std::span<const data::Impression* const> impressions, std::size_t history_len) {
  if (impressions.empty()) throw DimensionError("make_recsys_batch: empty batch");
  if (history_len == 0) throw ConfigError("history_len must be positive");
  RecsysBatch batch;
  std::unordered_map<std::size_t, std::size_t> row_of;
  std::vector<const TokenSequence*> seqs;
  auto row = [&](std::size_t news) {
    if (news >= dataset.news.size()) throw DataError("impression refers to unknown news index " + std::to_string(news));
    auto [it, inserted] = row_of.emplace(news, seqs.size());
    if (inserted) seqs.push_back(&dataset.news[news]);
    return it->second;
  };
  batch.history_layout = {impressions.size(), history_len};
  batch.history_rows.assign(batch.history_layout.rows(), ops::kZeroRow);
  batch.candidate_offsets.push_back(0);
  for (std::size_t b = 0; b < impressions.size(); ++b) {
    const auto& im = *impressions[b];
    if (im.candidates.empty() || im.candidates.size() != im.labels.size()) {
      throw DataError("impression needs at least one candidate and one label per candidate");
    }
    const std::size_t start = im.history.size() > history_len ? im.history.size() - history_len : 0;
    for (std::size_t i = start; i < im.history.size(); ++i) {
      batch.history_rows[b * history_len + (i - start)] = row(im.history[i]);
    }
    std::size_t positive = im.candidates.size();
    for (std::size_t c = 0; c < im.candidates.size(); ++c) {
      batch.candidate_rows.push_back(row(im.candidates[c]));
      if (im.labels[c] == 1 && positive == im.candidates.size()) positive = c;
    }
    batch.positives.push_back(positive == im.candidates.size() ? 0 : positive);
    batch.candidate_offsets.push_back(batch.candidate_rows.size());
  }
  batch.news = TokenBatch::pack(seqs);
  return batch;
}

Tensor recsys_scores(Tape& tape, const EncoderParams& encoder, const HeadParams& heads, const RecsysBatch& batch,
                     Rng* dropout_rng, Tensor* news_emb_out, Tensor* users_out, EncoderState* state_out) {
  if (!heads.user) throw ContractError("recommendation needs a user encoder head");
  Tensor news = news_embed(tape, encoder, heads, batch.news, dropout_rng, state_out);
  Tensor users = user_encode(tape, *heads.user, news, batch.history_rows, batch.history_layout);
  std::vector<std::size_t> user_rows(batch.candidate_rows.size());
  for (std::size_t b = 0; b + 1 < batch.candidate_offsets.size(); ++b) {
    for (std::size_t c = batch.candidate_offsets[b]; c < batch.candidate_offsets[b + 1]; ++c) user_rows[c] = b;
  }
  Tensor scores = ops::rows_dot(tape, ops::gather_rows(tape, users, user_rows),
                                ops::gather_rows(tape, news, batch.candidate_rows));
  if (news_emb_out) *news_emb_out = news;
  if (users_out) *users_out = users;
  return scores;
}

PathOutput recsys_forward(Tape& tape, const EncoderParams& encoder, const HeadParams& heads, const RecsysBatch& batch,
                          Rng* dropout_rng) {
  const std::size_t c = batch.uniform_candidates();
  if (c == 0) throw ContractError("recsys_forward needs the same candidate count in every impression");
  Tensor news, users;
  PathOutput out;
  Tensor scores = recsys_scores(tape, encoder, heads, batch, dropout_rng, &news, &users, &out.state);
  out.logits = ops::reshape(tape, scores, {batch.size(), c});
  out.pooled = {news, users};
  return out;
}

std::vector<data::Impression> training_instances(const data::ImpressionDataset& dataset,
                                                 std::span<const data::Impression> impressions,
                                                 std::size_t num_negatives, Rng& rng) {
  if (num_negatives == 0) throw ConfigError("num_negatives must be positive");
  std::vector<data::Impression> out;
  for (const auto& im : impressions) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t c = 0; c < im.candidates.size(); ++c) (im.labels[c] == 1 ? pos : neg).push_back(im.candidates[c]);
    for (std::size_t p : pos) {
      data::Impression inst;
      inst.history = im.history;
      inst.user_id = im.user_id;
      inst.candidates.push_back(p);
      if (neg.size() == num_negatives) {
        inst.candidates.insert(inst.candidates.end(), neg.begin(), neg.end());
      } else if (neg.size() > num_negatives) {
        std::vector<std::size_t> pool = neg;
        for (std::size_t k = 0; k < num_negatives; ++k) {
          std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
          inst.candidates.push_back(pool[k]);
        }
      } else if (!neg.empty()) {
        for (std::size_t k = 0; k < num_negatives; ++k) inst.candidates.push_back(neg[rng.index(neg.size())]);
      } else {
        if (dataset.news.size() < 2) throw DataError("cannot draw negatives from a single-news table");
        for (std::size_t k = 0; k < num_negatives; ++k) {
          std::size_t n;
          do n = rng.index(dataset.news.size());
          while (std::find(pos.begin(), pos.end(), n) != pos.end());
          inst.candidates.push_back(n);
        }
      }
      inst.labels.assign(inst.candidates.size(), 0);
      inst.labels[0] = 1;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

RetrievalBatch make_retrieval_batch(std::span<const data::RetrievalSample* const> samples) {
  std::vector<const TokenSequence*> q, d;
  RetrievalBatch batch;
  for (const auto* s : samples) {
    q.push_back(&s->query);
    d.push_back(&s->doc);
    batch.labels.push_back(static_cast<double>(s->label));
  }
  batch.queries = TokenBatch::pack(q);
  batch.docs = TokenBatch::pack(d);
  return batch;
}

Tensor retrieval_scores(Tape& tape, const EncoderParams& encoder, const HeadParams& heads, const RetrievalBatch& batch,
                        Rng* dropout_rng) {
  Tensor q = news_embed(tape, encoder, heads, batch.queries, dropout_rng);
  Tensor d = news_embed(tape, encoder, heads, batch.docs, dropout_rng);
  return ops::rows_dot(tape, q, d);
}

}  // namespace newsdistill::tasks
