#include "newsdistill/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "newsdistill/errors.hpp"

namespace newsdistill {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Shortest form that reads back exactly.
  for (int prec = 1; prec <= 17; ++prec) {
    char probe[64];
    std::snprintf(probe, sizeof probe, "%.*g", prec, v);
    if (std::stod(probe) == v) return probe;
  }
  return buf;
}

std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(std::size_t v) { return std::to_string(v); }

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define ND_SIZE(name, expr)                                                  \
  Field {                                                                   \
    name, [](const RunConfig& c) { return fmt(static_cast<std::size_t>(c.expr)); }, \
        [](RunConfig& c, const std::string& v) { c.expr = to_size(name, v); }     \
  }
#define ND_DOUBLE(name, expr)                                                \
  Field {                                                                   \
    name, [](const RunConfig& c) { return fmt(static_cast<double>(c.expr)); }, \
        [](RunConfig& c, const std::string& v) { c.expr = to_double(name, v); }   \
  }
#define ND_BOOL(name, expr)                                                  \
  Field {                                                                   \
    name, [](const RunConfig& c) { return fmt(static_cast<bool>(c.expr)); }, \
        [](RunConfig& c, const std::string& v) { c.expr = to_bool(name, v); }     \
  }
#define ND_PATH(name, expr)                                                  \
  Field {                                                                   \
    name, [](const RunConfig& c) { return c.expr.string(); },               \
        [](RunConfig& c, const std::string& v) { c.expr = v; }               \
  }

std::string data_kind_name(DataKind k) {
  switch (k) {
    case DataKind::kSynthetic: return "synthetic";
    case DataKind::kMind: return "mind";
    case DataKind::kJsonl: return "jsonl";
  }
  return "synthetic";
}

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      {"task", [](const RunConfig& c) { return tasks::to_string(c.train.task); },
       [](RunConfig& c, const std::string& v) { c.train.task = tasks::parse_task(v); }},
      {"mode", [](const RunConfig& c) { return to_string(c.train.distill.mode); },
       [](RunConfig& c, const std::string& v) { c.train.distill.mode = parse_training_mode(v); }},
      ND_SIZE("seed", train.seed),
      ND_SIZE("epochs", train.epochs),
      ND_SIZE("teacher_epochs", train.teacher_epochs),
      ND_SIZE("batch_size", train.batch_size),
      ND_SIZE("eval_every", train.eval_every),
      ND_SIZE("max_steps", train.max_steps),
      ND_DOUBLE("lr", train.adam.lr),
      ND_DOUBLE("adam_beta1", train.adam.beta1),
      ND_DOUBLE("adam_beta2", train.adam.beta2),
      ND_DOUBLE("adam_eps", train.adam.eps),
      ND_DOUBLE("temperature", train.distill.temperature),
      {"temperature_mode",
       [](const RunConfig& c) {
         return std::string(c.train.distill.temperature_mode == ops::TemperatureMode::kLogits ? "logits"
                                                                                             : "probabilities");
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "logits") {
           c.train.distill.temperature_mode = ops::TemperatureMode::kLogits;
         } else if (v == "probabilities") {
           c.train.distill.temperature_mode = ops::TemperatureMode::kProbabilities;
         } else {
           throw ConfigError("temperature_mode: expected logits|probabilities, got '" + v + "'");
         }
       }},
      ND_DOUBLE("beta", train.distill.beta),
      ND_BOOL("enable_hidden_layer_loss", train.distill.enable_hidden_layer_loss),
      ND_BOOL("enable_pooled_hidden_loss", train.distill.enable_pooled_hidden_loss),
      ND_BOOL("enable_distill_loss", train.distill.enable_distill_loss),
      ND_BOOL("enable_momentum", train.distill.enable_momentum),
      ND_BOOL("momentum_embeddings", train.distill.momentum_embeddings),
      ND_BOOL("disjoint_momentum", train.distill.disjoint_momentum),
      ND_SIZE("teacher_depth", encoder.num_layers),
      ND_SIZE("k", k),
      ND_SIZE("hidden_dim", encoder.hidden_dim),
      ND_SIZE("num_heads", encoder.num_heads),
      ND_SIZE("ffn_dim", encoder.ffn_dim),
      ND_SIZE("max_seq_len", encoder.max_seq_len),
      ND_SIZE("vocab_size", encoder.vocab_size),
      ND_DOUBLE("dropout", encoder.dropout),
      ND_DOUBLE("layer_norm_eps", encoder.layer_norm_eps),
      ND_SIZE("attn_dim", attn_dim),
      ND_SIZE("history_len", train.history_len),
      ND_SIZE("num_negatives", train.num_negatives),
      ND_PATH("out_dir", out_dir),
      ND_PATH("init_checkpoint", init_checkpoint),
      {"init_from", [](const RunConfig& c) { return std::string(c.init_from_teacher ? "teacher" : "student"); },
       [](RunConfig& c, const std::string& v) {
         if (v != "teacher" && v != "student") throw ConfigError("init_from: expected student|teacher, got '" + v + "'");
         c.init_from_teacher = v == "teacher";
       }},
      ND_PATH("resume_from", resume_from),
      {"data", [](const RunConfig& c) { return data_kind_name(c.data.kind); },
       [](RunConfig& c, const std::string& v) {
         if (v == "synthetic") {
           c.data.kind = DataKind::kSynthetic;
         } else if (v == "mind") {
           c.data.kind = DataKind::kMind;
         } else if (v == "jsonl") {
           c.data.kind = DataKind::kJsonl;
         } else {
           throw ConfigError("data: expected synthetic|mind|jsonl, got '" + v + "'");
         }
       }},
      ND_PATH("data.news", data.news),
      ND_PATH("data.behaviors", data.behaviors),
      ND_PATH("data.train", data.train),
      ND_PATH("data.valid", data.valid),
      ND_PATH("data.test", data.test),
      ND_PATH("data.vocab", data.vocab),
      ND_SIZE("data.vocab_max_size", data.vocab_max_size),
      ND_DOUBLE("data.test_fraction", data.test_fraction),
      ND_DOUBLE("data.valid_fraction", data.valid_fraction),
      ND_SIZE("data.query_len", data.query_len),
      ND_SIZE("data.doc_len", data.doc_len),
      ND_SIZE("synthetic.seed", data.synthetic.seed),
      ND_SIZE("synthetic.vocab_size", data.synthetic.vocab_size),
      ND_SIZE("synthetic.num_classes", data.synthetic.num_classes),
      ND_SIZE("synthetic.seq_len", data.synthetic.seq_len),
      ND_DOUBLE("synthetic.signal_strength", data.synthetic.signal_strength),
      ND_SIZE("synthetic.indicators_per_class", data.synthetic.indicators_per_class),
      ND_SIZE("synthetic.distractors", data.synthetic.distractors),
      ND_SIZE("synthetic.num_topics", data.synthetic.num_topics),
      ND_SIZE("synthetic.news_per_topic", data.synthetic.news_per_topic),
      ND_SIZE("synthetic.num_users", data.synthetic.num_users),
      ND_SIZE("synthetic.topics_per_user", data.synthetic.topics_per_user),
      ND_SIZE("synthetic.clicks", data.synthetic.clicks),
      ND_SIZE("synthetic.negatives", data.synthetic.negatives),
      ND_DOUBLE("synthetic.affinity", data.synthetic.affinity),
      ND_SIZE("synthetic.query_len", data.synthetic.query_len),
      ND_SIZE("synthetic.doc_len", data.synthetic.doc_len),
      ND_SIZE("synthetic.n_train", data.synthetic.n_train),
      ND_SIZE("synthetic.n_valid", data.synthetic.n_valid),
      ND_SIZE("synthetic.n_test", data.synthetic.n_test),
      {"sweep.betas",
       [](const RunConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.sweep_betas.size(); ++i) s += (i ? "," : "") + fmt(c.sweep_betas[i]);
         return s;
       },
       [](RunConfig& c, const std::string& v) {
         std::vector<double> betas;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) betas.push_back(to_double("sweep.betas", trim(item)));
         if (betas.empty()) throw ConfigError("sweep.betas: expected a comma-separated list");
         c.sweep_betas = std::move(betas);
       }},
      ND_SIZE("bench.passes", bench.passes),
      ND_SIZE("bench.warmup", bench.warmup),
      ND_SIZE("bench.seq_len", bench.seq_len),
      ND_SIZE("gradcheck.samples", gradcheck.samples),
      ND_DOUBLE("gradcheck.tolerance", gradcheck.tolerance),
      ND_DOUBLE("gradcheck.step", gradcheck.step),
  };
  return kFields;
}

#undef ND_SIZE
#undef ND_DOUBLE
#undef ND_BOOL
#undef ND_PATH

const Field& field(const std::string& key) {
  static const std::map<std::string, const Field*> index = [] {
    std::map<std::string, const Field*> m;
    for (const auto& f : fields()) m[f.key] = &f;
    return m;
  }();
  auto it = index.find(key);
  if (it == index.end()) throw ConfigError("unknown config key '" + key + "'");
  return *it->second;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> kKeys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return kKeys;
}

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

BlockMap RunConfig::block_map() const {
  if (k == 0) throw ConfigError("k must be positive");
  if (encoder.num_layers % k != 0) {
    throw ConfigError("teacher_depth (" + std::to_string(encoder.num_layers) + ") must be divisible by k (" +
                      std::to_string(k) + ")");
  }
  return BlockMap{k, encoder.num_layers / k};
}

void RunConfig::validate() const {
  block_map();
  EncoderConfig probe = encoder;
  if (probe.vocab_size == 0) probe.vocab_size = 2;
  probe.validate();
  train.distill.validate();
  if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (train.epochs == 0) throw ConfigError("epochs must be positive");
  if (attn_dim == 0) throw ConfigError("attn_dim must be positive");
  if (!(train.adam.lr > 0.0)) throw ConfigError("lr must be positive");
  if (train.adam.beta1 < 0.0 || train.adam.beta1 >= 1.0) throw ConfigError("adam_beta1 must lie in [0, 1)");
  if (train.adam.beta2 < 0.0 || train.adam.beta2 >= 1.0) throw ConfigError("adam_beta2 must lie in [0, 1)");
  if (!(train.adam.eps > 0.0)) throw ConfigError("adam_eps must be positive");
  auto must_exist = [](const char* key, const std::filesystem::path& p) {
    if (p.empty()) throw ConfigError(std::string(key) + " is required");
    if (!std::filesystem::exists(p)) throw ConfigError(std::string(key) + ": no such file '" + p.string() + "'");
  };
  auto exists_if_set = [](const char* key, const std::filesystem::path& p) {
    if (!p.empty() && !std::filesystem::exists(p)) {
      throw ConfigError(std::string(key) + ": no such file '" + p.string() + "'");
    }
  };
  switch (data.kind) {
    case DataKind::kMind:
      if (train.task == tasks::TaskKind::kRetrieval) throw ConfigError("data: retrieval reads jsonl or synthetic data");
      must_exist("data.news", data.news);
      if (train.task == tasks::TaskKind::kRecsys) must_exist("data.behaviors", data.behaviors);
      exists_if_set("data.behaviors", data.behaviors);
      break;
    case DataKind::kJsonl:
      if (train.task != tasks::TaskKind::kRetrieval) throw ConfigError("data: jsonl input is for the retrieval task");
      must_exist("data.train", data.train);
      must_exist("data.valid", data.valid);
      must_exist("data.test", data.test);
      break;
    case DataKind::kSynthetic: break;
  }
  exists_if_set("data.vocab", data.vocab);
  exists_if_set("init_checkpoint", init_checkpoint);
  exists_if_set("resume_from", resume_from);
  if (data.kind == DataKind::kJsonl && data.doc_len > encoder.max_seq_len) {
    throw ConfigError("data.doc_len (" + std::to_string(data.doc_len) + ") exceeds max_seq_len (" +
                      std::to_string(encoder.max_seq_len) + ")");
  }
  if (data.kind == DataKind::kJsonl && data.query_len > encoder.max_seq_len) {
    throw ConfigError("data.query_len exceeds max_seq_len");
  }
  if (data.kind == DataKind::kSynthetic) {
    const auto& s = data.synthetic;
    const std::size_t longest = train.task == tasks::TaskKind::kRetrieval ? std::max(s.query_len, s.doc_len) : s.seq_len;
    if (longest > encoder.max_seq_len) {
      throw ConfigError("synthetic sequence length " + std::to_string(longest) + " exceeds max_seq_len (" +
                        std::to_string(encoder.max_seq_len) + ")");
    }
  }
  if (bench.passes == 0) throw ConfigError("bench.passes must be positive");
  if (gradcheck.samples == 0) throw ConfigError("gradcheck.samples must be positive");
  if (!(gradcheck.step > 0.0)) throw ConfigError("gradcheck.step must be positive");
}

std::uint64_t data_seed(const RunConfig& config) {
  return config.data.synthetic.seed ? config.data.synthetic.seed : config.train.seed;
}

tasks::TaskData load_task_data(RunConfig& config, data::Vocab* vocab_out) {
  tasks::TaskData out;
  out.task = config.train.task;
  data::Vocab vocab;
  const auto& s = config.data.synthetic;
  switch (config.data.kind) {
    case DataKind::kSynthetic:
      switch (config.train.task) {
        case tasks::TaskKind::kClassify: {
          data::SyntheticSpec spec{data_seed(config), s.vocab_size, s.num_classes, s.seq_len, s.signal_strength,
                                   s.indicators_per_class, s.distractors, s.n_train, s.n_valid, s.n_test};
          auto gen = data::gen_synthetic_classification(spec);
          out.classification = std::move(gen.dataset);
          vocab = std::move(gen.vocab);
          break;
        }
        case tasks::TaskKind::kRecsys: {
          data::ImpressionSpec spec;
          spec.seed = data_seed(config);
          spec.vocab_size = s.vocab_size;
          spec.num_topics = s.num_topics;
          spec.seq_len = s.seq_len;
          spec.news_per_topic = s.news_per_topic;
          spec.num_users = s.num_users;
          spec.topics_per_user = s.topics_per_user;
          spec.history_len = s.clicks;
          spec.num_negatives = s.negatives;
          spec.affinity = s.affinity;
          spec.n_train = s.n_train;
          spec.n_valid = s.n_valid;
          spec.n_test = s.n_test;
          auto gen = data::gen_synthetic_impressions(spec);
          out.impressions = std::move(gen.dataset);
          vocab = std::move(gen.vocab);
          break;
        }
        case tasks::TaskKind::kRetrieval: {
          data::RetrievalSpec spec{data_seed(config), s.vocab_size, s.num_topics, s.query_len, s.doc_len,
                                   s.n_train, s.n_valid, s.n_test};
          auto gen = data::gen_synthetic_retrieval(spec);
          out.retrieval = std::move(gen.dataset);
          vocab = std::move(gen.vocab);
          break;
        }
      }
      break;
    case DataKind::kMind: {
      data::MindOptions opts{config.encoder.max_seq_len, config.data.vocab_max_size, config.data.test_fraction,
                             config.data.valid_fraction};
      std::optional<data::Vocab> given;
      if (!config.data.vocab.empty()) given = data::Vocab::load(config.data.vocab);
      auto mind = data::load_mind(config.data.news, config.data.behaviors, opts, given ? &*given : nullptr);
      out.classification = std::move(mind.classification);
      out.impressions = std::move(mind.impressions);
      vocab = std::move(mind.vocab);
      break;
    }
    case DataKind::kJsonl: {
      if (config.data.vocab.empty()) throw ConfigError("data.vocab is required for jsonl input");
      vocab = data::Vocab::load(config.data.vocab);
      const auto q = config.data.query_len, d = config.data.doc_len;
      out.retrieval.train = data::load_retrieval_jsonl(config.data.train, vocab, q, d);
      out.retrieval.valid = data::load_retrieval_jsonl(config.data.valid, vocab, q, d);
      out.retrieval.test = data::load_retrieval_jsonl(config.data.test, vocab, q, d);
      break;
    }
  }
  if (config.encoder.vocab_size == 0) config.encoder.vocab_size = vocab.size();
  if (config.encoder.vocab_size < vocab.size()) {
    throw ConfigError("vocab_size (" + std::to_string(config.encoder.vocab_size) + ") is smaller than the data vocabulary (" +
                      std::to_string(vocab.size()) + ")");
  }
  if (vocab_out) *vocab_out = std::move(vocab);
  return out;
}

}  // namespace newsdistill
