#include <algorithm>
#include <set>

#include "newsdistill/data.hpp"
#include "newsdistill/errors.hpp"
#include "newsdistill/metrics.hpp"
#include "newsdistill/rng.hpp"

namespace newsdistill::data {

Vocab synthetic_vocab(std::size_t vocab_size) {
  if (vocab_size <= kReservedIds) throw ConfigError("synthetic vocab_size must exceed " + std::to_string(kReservedIds));
  std::vector<std::string> tokens;
  for (std::size_t id = kReservedIds; id < vocab_size; ++id) tokens.push_back("w" + std::to_string(id));
  return Vocab::from_tokens(std::move(tokens));
}

namespace {

std::size_t random_length(Rng& rng, std::size_t max_len) {
  const std::size_t lo = std::max<std::size_t>(1, max_len / 2);
  return lo + rng.index(max_len - lo + 1);
}

// Topic t owns ids [kReservedIds + t*m, kReservedIds + (t+1)*m) with m chosen so
// the topic blocks cover half of the free ids; the rest is background.
struct TopicLayout {
  std::size_t topics = 0;
  std::size_t per_topic = 0;
  std::size_t background_begin = 0;
  std::size_t vocab_size = 0;

  TopicLayout(std::size_t vocab, std::size_t num_topics) : topics(num_topics), vocab_size(vocab) {
    if (num_topics == 0) throw ConfigError("num_topics must be positive");
    per_topic = (vocab - kReservedIds) / 2 / num_topics;
    if (per_topic == 0) throw ConfigError("vocab_size too small for " + std::to_string(num_topics) + " topics");
    background_begin = kReservedIds + per_topic * topics;
  }

  std::size_t topic_token(Rng& rng, std::size_t t) const { return kReservedIds + t * per_topic + rng.index(per_topic); }
  std::size_t background_token(Rng& rng) const {
    return background_begin + rng.index(vocab_size - background_begin);
  }

  // At least one topic token; others topical with probability topical_p.
  TokenSequence text(Rng& rng, std::size_t t, std::size_t max_len, double topical_p) const {
    const std::size_t len = random_length(rng, max_len);
    std::vector<std::size_t> ids(len);
    for (auto& id : ids) id = rng.bernoulli(topical_p) ? topic_token(rng, t) : background_token(rng);
    ids[rng.index(len)] = topic_token(rng, t);
    return make_sequence(ids, max_len);
  }
};

}  // namespace

SyntheticClassification gen_synthetic_classification(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("synthetic classification needs at least 2 classes");
  if (spec.seq_len == 0 || spec.indicators_per_class == 0) throw ConfigError("seq_len and indicators_per_class must be positive");
  if (spec.signal_strength < 0.0 || spec.signal_strength > 1.0) throw ConfigError("signal_strength must lie in [0, 1]");
  const std::size_t n_ind = spec.num_classes * spec.indicators_per_class;
  if (spec.vocab_size < kReservedIds + n_ind + 1) {
    throw ConfigError("vocab_size too small for " + std::to_string(n_ind) + " indicator tokens plus background");
  }
  SyntheticClassification out;
  out.vocab = synthetic_vocab(spec.vocab_size);
  for (std::size_t c = 0; c < spec.num_classes; ++c) out.dataset.class_names.push_back("class" + std::to_string(c));

  Rng rng(spec.seed);
  const bool cued = spec.distractors > 0;
  const std::size_t cue = kReservedIds + n_ind;
  const std::size_t bg_begin = cue + (cued ? 1 : 0);
  if (bg_begin >= spec.vocab_size) throw ConfigError("vocab_size leaves no background tokens");
  const std::size_t min_len = cued ? spec.distractors + 2 : 1;
  if (spec.seq_len < min_len) {
    throw ConfigError("seq_len " + std::to_string(spec.seq_len) + " cannot hold a cue, an indicator and " +
                      std::to_string(spec.distractors) + " distractors");
  }
  auto indicator = [&](std::size_t c) {
    return kReservedIds + c * spec.indicators_per_class + rng.index(spec.indicators_per_class);
  };
  auto sample = [&](std::size_t serial) {
    ClassifySample s;
    s.label = rng.index(spec.num_classes);
    const std::size_t len = std::max(min_len, random_length(rng, spec.seq_len));
    std::vector<std::size_t> ids(len);
    for (auto& id : ids) id = bg_begin + rng.index(spec.vocab_size - bg_begin);
    // Free positions, consumed without replacement.
    std::vector<std::size_t> slots(len);
    for (std::size_t i = 0; i < len; ++i) slots[i] = i;
    rng.shuffle(slots);
    if (rng.bernoulli(spec.signal_strength)) {
      if (cued) {
        // Cue at p, indicator at p + 1; both slots removed from the pool.
        const std::size_t p = rng.index(len - 1);
        ids[p] = cue;
        ids[p + 1] = indicator(s.label);
        slots.erase(std::remove_if(slots.begin(), slots.end(), [&](std::size_t i) { return i == p || i == p + 1; }),
                    slots.end());
      } else {
        ids[slots.back()] = indicator(s.label);
        slots.pop_back();
      }
    }
    for (std::size_t d = 0; d < spec.distractors && !slots.empty(); ++d) {
      const std::size_t pos = slots.back();
      slots.pop_back();
      // A distractor never directly follows the cue.
      if (pos > 0 && ids[pos - 1] == cue) continue;
      ids[pos] = indicator(rng.index(spec.num_classes));
    }
    s.tokens = make_sequence(ids, spec.seq_len);
    s.news_id = "S" + std::to_string(serial);
    return s;
  };
  std::size_t serial = 0;
  for (auto [part, n] : {std::pair{&out.dataset.train, spec.n_train}, std::pair{&out.dataset.valid, spec.n_valid},
                         std::pair{&out.dataset.test, spec.n_test}}) {
    for (std::size_t i = 0; i < n; ++i) part->push_back(sample(serial++));
  }
  // An indicator identifies the class; without one every class is equally likely.
  out.bayes_accuracy = spec.signal_strength + (1.0 - spec.signal_strength) / static_cast<double>(spec.num_classes);
  return out;
}

SyntheticImpressions gen_synthetic_impressions(const ImpressionSpec& spec) {
  if (spec.topics_per_user == 0 || spec.topics_per_user > spec.num_topics) {
    throw ConfigError("topics_per_user must lie in 1..num_topics");
  }
  if (spec.news_per_topic == 0 || spec.num_users == 0 || spec.history_len == 0 || spec.seq_len == 0) {
    throw ConfigError("impression generator extents must be positive");
  }
  if (spec.affinity < 0.0 || spec.affinity > 1.0) throw ConfigError("affinity must lie in [0, 1]");
  const TopicLayout layout(spec.vocab_size, spec.num_topics);
  const bool everything_preferred = spec.topics_per_user == spec.num_topics;

  SyntheticImpressions out;
  out.vocab = synthetic_vocab(spec.vocab_size);
  Rng rng(spec.seed);
  auto& ds = out.dataset;
  for (std::size_t t = 0; t < spec.num_topics; ++t) {
    for (std::size_t j = 0; j < spec.news_per_topic; ++j) {
      ds.news.push_back(layout.text(rng, t, spec.seq_len, 0.5));
      ds.news_ids.push_back("N" + std::to_string(ds.news.size()));
      out.news_topic.push_back(t);
    }
  }

  std::vector<std::set<std::size_t>> preferred(spec.num_users);
  for (auto& pref : preferred) {
    while (pref.size() < spec.topics_per_user) pref.insert(rng.index(spec.num_topics));
  }
  auto news_of_topic = [&](std::size_t t) { return t * spec.news_per_topic + rng.index(spec.news_per_topic); };
  auto any_news = [&] { return rng.index(ds.news.size()); };
  auto preferred_news = [&](const std::set<std::size_t>& pref) {
    auto it = pref.begin();
    std::advance(it, rng.index(pref.size()));
    return news_of_topic(*it);
  };
  auto other_news = [&](const std::set<std::size_t>& pref) {
    std::size_t t;
    do t = rng.index(spec.num_topics);
    while (pref.count(t));
    return news_of_topic(t);
  };

  auto impression = [&](std::vector<double>& oracle) {
    Impression im;
    const std::size_t u = rng.index(spec.num_users);
    const auto& pref = preferred[u];
    im.user_id = "U" + std::to_string(u);
    const std::size_t hist = 1 + rng.index(spec.history_len);
    for (std::size_t h = 0; h < hist; ++h) {
      im.history.push_back(rng.bernoulli(spec.affinity) ? preferred_news(pref) : any_news());
    }
    im.candidates.push_back(rng.bernoulli(spec.affinity) ? preferred_news(pref) : any_news());
    im.labels.push_back(1);
    for (std::size_t k = 0; k < spec.num_negatives; ++k) {
      const bool on_affinity = rng.bernoulli(spec.affinity) && !everything_preferred;
      im.candidates.push_back(on_affinity ? other_news(pref) : any_news());
      im.labels.push_back(0);
    }
    std::vector<std::size_t> perm(im.candidates.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    Impression shuffled = im;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.candidates[i] = im.candidates[perm[i]];
      shuffled.labels[i] = im.labels[perm[i]];
    }
    oracle.clear();
    for (auto c : shuffled.candidates) oracle.push_back(pref.count(out.news_topic[c]) ? 1.0 : 0.0);
    return shuffled;
  };

  std::vector<double> oracle;
  for (std::size_t i = 0; i < spec.n_train; ++i) ds.train.push_back(impression(oracle));
  for (std::size_t i = 0; i < spec.n_valid; ++i) ds.valid.push_back(impression(oracle));
  std::vector<metrics::RankedImpression> ranked;
  for (std::size_t i = 0; i < spec.n_test; ++i) {
    ds.test.push_back(impression(oracle));
    out.oracle_scores.push_back(oracle);
    ranked.push_back({oracle, ds.test.back().labels});
  }
  auto report = metrics::ranking_report(ranked);
  for (const auto& r : report) {
    if (r.metric == "auc") out.oracle_auc = r.value;
  }
  return out;
}

SyntheticRetrieval gen_synthetic_retrieval(const RetrievalSpec& spec) {
  if (spec.num_topics < 2) throw ConfigError("retrieval generator needs at least 2 topics");
  if (spec.query_len == 0 || spec.doc_len == 0) throw ConfigError("query_len and doc_len must be positive");
  const TopicLayout layout(spec.vocab_size, spec.num_topics);
  SyntheticRetrieval out;
  out.vocab = synthetic_vocab(spec.vocab_size);
  Rng rng(spec.seed);
  auto sample = [&] {
    RetrievalSample s;
    const std::size_t tq = rng.index(spec.num_topics);
    s.label = rng.bernoulli(0.5) ? 1 : 0;
    std::size_t td = tq;
    if (!s.label) td = (tq + 1 + rng.index(spec.num_topics - 1)) % spec.num_topics;
    s.query = layout.text(rng, tq, spec.query_len, 0.7);
    s.doc = layout.text(rng, td, spec.doc_len, 0.5);
    return s;
  };
  for (std::size_t i = 0; i < spec.n_train; ++i) out.dataset.train.push_back(sample());
  for (std::size_t i = 0; i < spec.n_valid; ++i) out.dataset.valid.push_back(sample());
  for (std::size_t i = 0; i < spec.n_test; ++i) out.dataset.test.push_back(sample());
  return out;
}

}  // namespace newsdistill::data
