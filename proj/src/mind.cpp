#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "newsdistill/data.hpp"
#include "newsdistill/errors.hpp"

namespace newsdistill::data {

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string_view> split_spaces(std::string_view s) {
  std::vector<std::string_view> out;
  for (auto part : split(s, ' ')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

long parse_int(std::string_view s, const char* what) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(std::string("malformed ") + what + " '" + std::string(s) + "'");
  }
  return v;
}

// Days since 1970-01-01 of a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

std::string line_error(const std::string& file_kind, std::size_t line_no, const std::string& msg) {
  return file_kind + " line " + std::to_string(line_no) + ": " + msg;
}

}  // namespace

std::int64_t parse_mind_time(std::string_view text) {
  const auto parts = split_spaces(text);
  if (parts.size() != 3) throw DataError("malformed time '" + std::string(text) + "'");
  const auto date = split(parts[0], '/');
  const auto clock = split(parts[1], ':');
  if (date.size() != 3 || clock.size() != 3) throw DataError("malformed time '" + std::string(text) + "'");
  const long month = parse_int(date[0], "month"), day = parse_int(date[1], "day"), year = parse_int(date[2], "year");
  long hour = parse_int(clock[0], "hour");
  const long minute = parse_int(clock[1], "minute"), second = parse_int(clock[2], "second");
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour < 1 || hour > 12 || minute > 59 || second > 60 ||
      minute < 0 || second < 0) {
    throw DataError("time out of range '" + std::string(text) + "'");
  }
  if (parts[2] == "AM") {
    if (hour == 12) hour = 0;
  } else if (parts[2] == "PM") {
    if (hour != 12) hour += 12;
  } else {
    throw DataError("malformed time '" + std::string(text) + "'");
  }
  const std::int64_t days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  return days * 86400 + hour * 3600 + minute * 60 + second;
}

NewsRecord parse_news_line(std::string_view line, std::size_t line_no) {
  const auto fields = split(strip_cr(line), '\t');
  if (fields.size() < 4) {
    throw DataError(line_error("news", line_no, "expected at least 4 tab-separated fields, got " +
                                                    std::to_string(fields.size())));
  }
  NewsRecord r{std::string(fields[0]), std::string(fields[1]), std::string(fields[2]), std::string(fields[3])};
  if (r.news_id.empty()) throw DataError(line_error("news", line_no, "empty news id"));
  if (r.category.empty()) throw DataError(line_error("news", line_no, "empty category"));
  if (split_words(r.title).empty()) throw DataError(line_error("news", line_no, "title has no words"));
  return r;
}

BehaviorRecord parse_behavior_line(std::string_view line, std::size_t line_no) {
  const auto fields = split(strip_cr(line), '\t');
  if (fields.size() != 5) {
    throw DataError(line_error("behaviors", line_no, "expected 5 tab-separated fields, got " +
                                                         std::to_string(fields.size())));
  }
  BehaviorRecord r;
  r.impression_id = fields[0];
  r.user_id = fields[1];
  if (r.user_id.empty()) throw DataError(line_error("behaviors", line_no, "empty user id"));
  try {
    r.time = parse_mind_time(fields[2]);
  } catch (const DataError& e) {
    throw DataError(line_error("behaviors", line_no, e.what()));
  }
  for (auto h : split_spaces(fields[3])) r.history.emplace_back(h);
  for (auto item : split_spaces(fields[4])) {
    const std::size_t dash = item.rfind('-');
    if (dash == std::string_view::npos || dash == 0) {
      throw DataError(line_error("behaviors", line_no, "malformed impression '" + std::string(item) + "'"));
    }
    const auto label = item.substr(dash + 1);
    if (label != "0" && label != "1") {
      throw DataError(line_error("behaviors", line_no, "impression label must be 0 or 1 in '" + std::string(item) + "'"));
    }
    r.impressions.emplace_back(std::string(item.substr(0, dash)), label == "1" ? 1 : 0);
  }
  if (r.impressions.empty()) throw DataError(line_error("behaviors", line_no, "no impressions"));
  return r;
}

MindData load_mind(const std::filesystem::path& news_path, const std::filesystem::path& behaviors_path,
                   const MindOptions& options, const Vocab* vocab) {
  if (options.test_fraction < 0.0 || options.test_fraction >= 1.0 || options.valid_fraction < 0.0 ||
      options.valid_fraction >= 1.0) {
    throw ConfigError("split fractions must lie in [0, 1)");
  }
  std::ifstream news_in(news_path);
  if (!news_in) throw DataError("cannot open news file " + news_path.string());
  std::vector<NewsRecord> records;
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(news_in, line)) {
    ++line_no;
    if (strip_cr(line).empty()) continue;
    NewsRecord r = parse_news_line(line, line_no);
    if (!index.emplace(r.news_id, records.size()).second) {
      throw DataError(line_error("news", line_no, "duplicate news id " + r.news_id));
    }
    records.push_back(std::move(r));
  }

  MindData out;
  if (vocab) {
    out.vocab = *vocab;
  } else {
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(records.size());
    for (const auto& r : records) corpus.push_back(split_words(r.title));
    out.vocab = Vocab::build(corpus, options.vocab_max_size);
  }

  auto& imp = out.impressions;
  for (const auto& r : records) {
    imp.news.push_back(tokenize(r.title, out.vocab, options.max_seq_len));
    imp.news_ids.push_back(r.news_id);
  }

  std::vector<BehaviorRecord> behaviors;
  if (!behaviors_path.empty()) {
    std::ifstream beh_in(behaviors_path);
    if (!beh_in) throw DataError("cannot open behaviors file " + behaviors_path.string());
    line_no = 0;
    while (std::getline(beh_in, line)) {
      ++line_no;
      if (strip_cr(line).empty()) continue;
      behaviors.push_back(parse_behavior_line(line, line_no));
    }
  }

  // Time-ordered split; stable so equal timestamps keep file order.
  std::vector<std::size_t> order(behaviors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return behaviors[a].time < behaviors[b].time; });
  const std::size_t n = order.size();
  const auto n_test = static_cast<std::size_t>(static_cast<double>(n) * options.test_fraction);
  const auto n_valid = static_cast<std::size_t>(static_cast<double>(n - n_test) * options.valid_fraction);
  const std::size_t train_end = n - n_test - n_valid, valid_end = n - n_test;

  // 0 = train, 1 = valid, 2 = test; news classification split follows first appearance.
  std::vector<int> news_split(records.size(), -1);
  auto lookup = [&](const std::string& id) -> std::optional<std::size_t> {
    auto it = index.find(id);
    if (it == index.end()) {
      ++out.skipped_unknown_news;
      return std::nullopt;
    }
    return it->second;
  };
  for (std::size_t rank = 0; rank < n; ++rank) {
    const auto& b = behaviors[order[rank]];
    const int split_id = rank < train_end ? 0 : (rank < valid_end ? 1 : 2);
    Impression im;
    im.user_id = b.user_id;
    for (const auto& h : b.history) {
      if (auto k = lookup(h)) {
        im.history.push_back(*k);
        if (news_split[*k] < 0) news_split[*k] = split_id;
      }
    }
    for (const auto& [id, label] : b.impressions) {
      if (auto k = lookup(id)) {
        im.candidates.push_back(*k);
        im.labels.push_back(label);
        if (news_split[*k] < 0) news_split[*k] = split_id;
      }
    }
    if (im.candidates.empty()) continue;
    (split_id == 0 ? imp.train : split_id == 1 ? imp.valid : imp.test).push_back(std::move(im));
  }

  std::set<std::string> categories;
  for (const auto& r : records) categories.insert(r.category);
  auto& cls = out.classification;
  cls.class_names.assign(categories.begin(), categories.end());
  std::map<std::string, std::size_t> class_index;
  for (std::size_t c = 0; c < cls.class_names.size(); ++c) class_index[cls.class_names[c]] = c;
  for (std::size_t i = 0; i < records.size(); ++i) {
    ClassifySample s{imp.news[i], class_index.at(records[i].category), records[i].news_id};
    const int sp = news_split[i] < 0 ? 0 : news_split[i];
    (sp == 0 ? cls.train : sp == 1 ? cls.valid : cls.test).push_back(std::move(s));
  }
  return out;
}

namespace {

std::string render(const TokenSequence& seq, const Vocab& vocab) {
  std::string text;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (!seq.mask[i]) continue;
    if (!text.empty()) text += ' ';
    text += vocab.token(seq.ids[i]);
  }
  return text;
}

std::string format_time(std::int64_t seconds) {
  // Fixed day, seconds since midnight of 11/9/2019 encoded as clock time;
  // spills into later days for more than 86400 impressions.
  const std::int64_t day = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  const std::int64_t h24 = rem / 3600;
  rem %= 3600;
  const std::int64_t h12 = h24 % 12 == 0 ? 12 : h24 % 12;
  char buf[64];
  std::snprintf(buf, sizeof buf, "11/%d/2019 %d:%02d:%02d %s", static_cast<int>(9 + day), static_cast<int>(h12),
                static_cast<int>(rem / 60), static_cast<int>(rem % 60), h24 < 12 ? "AM" : "PM");
  return buf;
}

}  // namespace

void write_mind(const std::filesystem::path& news_path, const std::filesystem::path& behaviors_path,
                const Vocab& vocab, const ClassificationDataset* classification, const ImpressionDataset* impressions) {
  std::ofstream news_out(news_path);
  if (!news_out) throw DataError("cannot write news file " + news_path.string());
  if (classification) {
    std::size_t i = 0;
    for (const auto* part : {&classification->train, &classification->valid, &classification->test}) {
      for (const auto& s : *part) {
        const std::string id = s.news_id.empty() ? "C" + std::to_string(i) : s.news_id;
        news_out << id << '\t' << classification->class_names.at(s.label) << "\tnone\t" << render(s.tokens, vocab)
                 << "\t\t\t\t\n";
        ++i;
      }
    }
  }
  if (impressions) {
    for (std::size_t k = 0; k < impressions->news.size(); ++k) {
      news_out << impressions->news_ids.at(k) << "\tnews\tnone\t" << render(impressions->news[k], vocab)
               << "\t\t\t\t\n";
    }
  }
  if (behaviors_path.empty()) return;
  std::ofstream beh_out(behaviors_path);
  if (!beh_out) throw DataError("cannot write behaviors file " + behaviors_path.string());
  if (!impressions) return;
  std::int64_t t = 0;
  std::size_t imp_id = 1;
  for (const auto* part : {&impressions->train, &impressions->valid, &impressions->test}) {
    for (const auto& im : *part) {
      beh_out << imp_id++ << '\t' << im.user_id << '\t' << format_time(t++) << '\t';
      for (std::size_t j = 0; j < im.history.size(); ++j) {
        beh_out << (j ? " " : "") << impressions->news_ids.at(im.history[j]);
      }
      beh_out << '\t';
      for (std::size_t j = 0; j < im.candidates.size(); ++j) {
        beh_out << (j ? " " : "") << impressions->news_ids.at(im.candidates[j]) << '-' << im.labels[j];
      }
      beh_out << '\n';
    }
  }
}

std::vector<RetrievalSample> load_retrieval_jsonl(const std::filesystem::path& path, const Vocab& vocab,
                                                  std::size_t query_len, std::size_t doc_len) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open retrieval file " + path.string());
  std::vector<RetrievalSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (strip_cr(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(line_error("retrieval", line_no, e.what()));
    }
    if (!j.is_object() || !j.contains("query") || !j.contains("doc") || !j.contains("label") ||
        !j["query"].is_string() || !j["doc"].is_string() || !j["label"].is_number_integer()) {
      throw DataError(line_error("retrieval", line_no, "expected {\"query\": str, \"doc\": str, \"label\": 0|1}"));
    }
    const int label = j["label"].get<int>();
    if (label != 0 && label != 1) throw DataError(line_error("retrieval", line_no, "label must be 0 or 1"));
    RetrievalSample s{tokenize(j["query"].get<std::string>(), vocab, query_len),
                      tokenize(j["doc"].get<std::string>(), vocab, doc_len), label};
    if (s.query.length() == 0 || s.doc.length() == 0) {
      throw DataError(line_error("retrieval", line_no, "query and doc need at least one word"));
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_retrieval_jsonl(const std::filesystem::path& path, const std::vector<RetrievalSample>& samples,
                           const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write retrieval file " + path.string());
  for (const auto& s : samples) {
    nlohmann::json j{{"query", render(s.query, vocab)}, {"doc", render(s.doc, vocab)}, {"label", s.label}};
    out << j.dump() << '\n';
  }
}

}  // namespace newsdistill::data
