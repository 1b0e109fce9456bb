#include "newsdistill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "newsdistill/errors.hpp"

namespace newsdistill::metrics {

namespace {

void check_parallel(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ContractError(std::string(what) + ": predictions and labels differ in length");
  if (a == 0) throw ContractError(std::string(what) + ": empty input");
}

void check_impression(const RankedImpression& imp) {
  if (imp.scores.size() != imp.labels.size()) throw ContractError("impression scores and labels differ in length");
  if (imp.scores.empty()) throw ContractError("empty impression");
}

}  // namespace

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  check_parallel(preds.size(), labels.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t num_classes) {
  check_parallel(preds.size(), labels.size(), "macro_f1");
  if (num_classes == 0) throw ContractError("macro_f1: zero classes");
  std::vector<std::size_t> tp(num_classes), fp(num_classes), fn(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= num_classes || labels[i] >= num_classes) throw ContractError("macro_f1: class index out of range");
    if (preds[i] == labels[i]) {
      ++tp[preds[i]];
    } else {
      ++fp[preds[i]];
      ++fn[labels[i]];
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    // 2PR/(P+R) == 2TP/(2TP+FP+FN)
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom > 0) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return sum / static_cast<double>(num_classes);
}

std::optional<double> auc(const RankedImpression& imp) {
  check_impression(imp);
  // Rank-sum form with average ranks for ties.
  const std::size_t n = imp.scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return imp.scores[a] < imp.scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && imp.scores[idx[j + 1]] == imp.scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = avg;
    i = j + 1;
  }
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (imp.labels[i] > 0) {
      pos += 1;
      rank_sum += rank[i];
    } else {
      neg += 1;
    }
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

std::vector<std::size_t> ranking_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double mrr(const RankedImpression& imp) {
  check_impression(imp);
  const auto order = ranking_order(imp.scores);
  double sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (imp.labels[order[r]] > 0) {
      sum += 1.0 / static_cast<double>(r + 1);
      ++positives;
    }
  }
  if (positives == 0) return 0.0;
  return sum / static_cast<double>(positives);
}

double ndcg_at_k(const RankedImpression& imp, std::size_t k) {
  check_impression(imp);
  if (k == 0) throw ContractError("ndcg_at_k: k must be positive");
  auto dcg = [k](const std::vector<int>& labels_in_order) {
    double s = 0.0;
    for (std::size_t r = 0; r < std::min(k, labels_in_order.size()); ++r) {
      s += (std::exp2(static_cast<double>(labels_in_order[r])) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
    }
    return s;
  };
  const auto order = ranking_order(imp.scores);
  std::vector<int> ranked(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranked[r] = imp.labels[order[r]];
  std::vector<int> ideal = imp.labels;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal);
  if (idcg == 0.0) return 0.0;
  return dcg(ranked) / idcg;
}

std::vector<MetricRecord> ranking_report(const std::vector<RankedImpression>& impressions) {
  MetricRecord a{"auc"}, m{"mrr"}, n5{"ndcg@5"}, n10{"ndcg@10"};
  double sa = 0, sm = 0, s5 = 0, s10 = 0;
  for (const auto& imp : impressions) {
    if (auto v = auc(imp)) {
      sa += *v;
      ++a.n_instances;
    } else {
      ++a.n_excluded;
    }
    const bool has_pos = std::any_of(imp.labels.begin(), imp.labels.end(), [](int l) { return l > 0; });
    if (!has_pos) {
      ++m.n_excluded;
      ++n5.n_excluded;
      ++n10.n_excluded;
      continue;
    }
    sm += mrr(imp);
    s5 += ndcg_at_k(imp, 5);
    s10 += ndcg_at_k(imp, 10);
    ++m.n_instances;
  }
  n5.n_instances = n10.n_instances = m.n_instances;
  if (a.n_instances) a.value = sa / static_cast<double>(a.n_instances);
  if (m.n_instances) {
    m.value = sm / static_cast<double>(m.n_instances);
    n5.value = s5 / static_cast<double>(m.n_instances);
    n10.value = s10 / static_cast<double>(m.n_instances);
  }
  return {a, m, n5, n10};
}

std::vector<MetricRecord> classification_report(std::span<const std::size_t> preds,
                                                std::span<const std::size_t> labels, std::size_t num_classes) {
  return {{"accuracy", accuracy(preds, labels), preds.size(), 0},
          {"macro_f1", macro_f1(preds, labels, num_classes), preds.size(), 0}};
}

std::string to_json(const MetricRecord& record) {
  nlohmann::json j{{"metric", record.metric},
                   {"value", record.value},
                   {"n_instances", record.n_instances},
                   {"n_excluded", record.n_excluded}};
  return j.dump();
}

}  // namespace newsdistill::metrics
