#include <algorithm>
#include <cctype>
#include <fstream>

#include "newsdistill/data.hpp"
#include "newsdistill/errors.hpp"

namespace newsdistill::data {

Vocab Vocab::build(const std::vector<std::vector<std::string>>& corpus, std::size_t max_size) {
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& doc : corpus) {
    for (const auto& w : doc) ++freq[w];
  }
  std::vector<std::pair<std::string, std::size_t>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t keep = max_size > kReservedIds ? std::min(entries.size(), max_size - kReservedIds) : 0;
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(entries[i].first);
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], i + kReservedIds).second) {
      throw DataError("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocab file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::size_t Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(std::size_t id) const {
  static const std::string kPad = "[PAD]";
  static const std::string kUnk = "[UNK]";
  if (id == kPadId) return kPad;
  if (id == kUnkId) return kUnk;
  if (id - kReservedIds >= tokens_.size()) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id - kReservedIds];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    // Bytes >= 0x80 (UTF-8 continuation/lead bytes) stay inside words.
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

TokenSequence make_sequence(const std::vector<std::size_t>& ids, std::size_t max_len) {
  TokenSequence seq;
  seq.ids.assign(max_len, kPadId);
  seq.mask.assign(max_len, 0);
  const std::size_t n = std::min(ids.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) {
    seq.ids[i] = ids[i];
    seq.mask[i] = 1;
  }
  return seq;
}

TokenSequence tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  std::vector<std::size_t> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return make_sequence(ids, max_len);
}

}  // namespace newsdistill::data
