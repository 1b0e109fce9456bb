#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace newsdistill::metrics {

// Fraction of exact matches.
double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

// Unweighted mean of per-class F1. A class with no predicted and no true
// instances contributes F1 = 0.
double macro_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t num_classes);

// Scores of one impression with parallel 0/1 click labels.
struct RankedImpression {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Mann-Whitney AUC with ties credited 0.5; nullopt when the impression lacks
// positives or negatives.
std::optional<double> auc(const RankedImpression& imp);

// Mean of 1/rank over positives; ranks from a stable descending sort (ties keep
// original order).
double mrr(const RankedImpression& imp);

// DCG@k / ideal DCG@k with gains 2^label - 1 and discount log2(rank + 1).
double ndcg_at_k(const RankedImpression& imp, std::size_t k);

// Positions sorted by score descending, ties by original index.
std::vector<std::size_t> ranking_order(std::span<const double> scores);

struct MetricRecord {
  std::string metric;
  double value = 0.0;
  std::size_t n_instances = 0;
  std::size_t n_excluded = 0;
};

// Unweighted means over impressions; AUC skips (and counts) single-class impressions.
std::vector<MetricRecord> ranking_report(const std::vector<RankedImpression>& impressions);
std::vector<MetricRecord> classification_report(std::span<const std::size_t> preds,
                                                std::span<const std::size_t> labels, std::size_t num_classes);

// {"metric":..., "value":..., "n_instances":..., "n_excluded":...}
std::string to_json(const MetricRecord& record);

}  // namespace newsdistill::metrics
