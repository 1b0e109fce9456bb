#include "newsdistill/newsdistill.h"

#include <cstring>
#include <iostream>
#include <streambuf>
#include <string>

#include "newsdistill/checkpoint.hpp"
#include "newsdistill/commands.hpp"
#include "newsdistill/errors.hpp"

struct nd_config {
  newsdistill::RunConfig config;
};

struct nd_model {
  newsdistill::Checkpoint checkpoint;
};

namespace {

thread_local std::string g_last_error;

void default_log(const char* line, void*) { std::cout << line << std::endl; }

nd_log_fn g_log = default_log;
void* g_log_user = nullptr;

// Forwards complete lines to the log callback.
class LineBuf : public std::streambuf {
 protected:
  int overflow(int c) override {
    if (c == EOF) return 0;
    if (c == '\n') {
      if (g_log) g_log(line_.c_str(), g_log_user);
      line_.clear();
    } else {
      line_.push_back(static_cast<char>(c));
    }
    return c;
  }

 private:
  std::string line_;
};

template <typename F>
nd_status guard(F&& f) {
  using namespace newsdistill;
  try {
    g_last_error.clear();
    return f();
  } catch (const ConfigError& e) {
    g_last_error = e.what();
    return ND_ERR_CONFIG;
  } catch (const DataError& e) {
    g_last_error = e.what();
    return ND_ERR_DATA;
  } catch (const InputError& e) {
    g_last_error = e.what();
    return ND_ERR_DATA;
  } catch (const NumericError& e) {
    g_last_error = e.what();
    return ND_ERR_NUMERIC;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return ND_ERR_DATA;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return ND_ERR_INTERNAL;
  }
}

nd_status missing(const char* what) {
  g_last_error = std::string(what) + " is null";
  return ND_ERR_CONFIG;
}

nd_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > s.size()) std::memcpy(buf, s.c_str(), s.size() + 1);
  return ND_OK;
}

template <typename F>
nd_status with_log(F&& f) {
  return guard([&] {
    LineBuf buf;
    std::ostream log(&buf);
    return f(g_log ? &log : nullptr);
  });
}

}  // namespace

extern "C" {

const char* nd_last_error(void) { return g_last_error.c_str(); }

const char* nd_version(void) { return "1.0.0"; }

void nd_set_log(nd_log_fn fn, void* user) {
  g_log = fn;
  g_log_user = user;
}

nd_status nd_config_new(nd_config** out) {
  if (!out) return missing("out");
  return guard([&] {
    *out = new nd_config{};
    return ND_OK;
  });
}

nd_status nd_config_load(const char* path, nd_config** out) {
  if (!path) return missing("path");
  if (!out) return missing("out");
  return guard([&] {
    *out = new nd_config{newsdistill::RunConfig::load(path)};
    return ND_OK;
  });
}

nd_status nd_config_parse(const char* text, nd_config** out) {
  if (!text) return missing("text");
  if (!out) return missing("out");
  return guard([&] {
    *out = new nd_config{newsdistill::RunConfig::parse(text)};
    return ND_OK;
  });
}

nd_status nd_config_set(nd_config* config, const char* key, const char* value) {
  if (!config) return missing("config");
  if (!key || !value) return missing("key/value");
  return guard([&] {
    config->config.set(key, value);
    return ND_OK;
  });
}

nd_status nd_config_get(const nd_config* config, const char* key, char* buf, size_t cap, size_t* needed) {
  if (!config) return missing("config");
  if (!key) return missing("key");
  return guard([&] { return copy_out(config->config.get(key), buf, cap, needed); });
}

nd_status nd_config_dump(const nd_config* config, char* buf, size_t cap, size_t* needed) {
  if (!config) return missing("config");
  return guard([&] { return copy_out(config->config.dump(), buf, cap, needed); });
}

nd_status nd_config_validate(const nd_config* config) {
  if (!config) return missing("config");
  return guard([&] {
    config->config.validate();
    return ND_OK;
  });
}

void nd_config_free(nd_config* config) { delete config; }

nd_status nd_train(const nd_config* config) {
  if (!config) return missing("config");
  return with_log([&](std::ostream* log) {
    newsdistill::run_train(config->config, log);
    return ND_OK;
  });
}

nd_status nd_eval(const char* checkpoint, const nd_config* data_config, const char* split, const char* out_dir) {
  if (!checkpoint) return missing("checkpoint");
  return with_log([&](std::ostream* log) {
    newsdistill::run_eval(checkpoint, data_config ? &data_config->config : nullptr, split ? split : "test",
                          out_dir ? out_dir : ".", log);
    return ND_OK;
  });
}

nd_status nd_sweep_beta(const nd_config* config) {
  if (!config) return missing("config");
  return with_log([&](std::ostream* log) {
    newsdistill::run_sweep_beta(config->config, log);
    return ND_OK;
  });
}

nd_status nd_ablate(const nd_config* config) {
  if (!config) return missing("config");
  return with_log([&](std::ostream* log) {
    newsdistill::run_ablate(config->config, log);
    return ND_OK;
  });
}

nd_status nd_gradcheck(const nd_config* config) {
  if (!config) return missing("config");
  return with_log([&](std::ostream* log) {
    const auto results = newsdistill::run_gradcheck(config->config, log);
    for (const auto& r : results) {
      if (!r.passed()) {
        throw newsdistill::NumericError("gradcheck failed: " + r.loss + " max relative error " +
                                        std::to_string(r.max_rel_error) + " at " + r.worst_parameter);
      }
    }
    return ND_OK;
  });
}

nd_status nd_bench(const nd_config* config, double* ratio_out) {
  if (!config) return missing("config");
  return with_log([&](std::ostream* log) {
    const auto r = newsdistill::run_bench(config->config, log);
    if (ratio_out) *ratio_out = r.ratio();
    return ND_OK;
  });
}

nd_status nd_model_load(const char* checkpoint, nd_model** out) {
  if (!checkpoint) return missing("checkpoint");
  if (!out) return missing("out");
  return guard([&] {
    *out = new nd_model{newsdistill::load_checkpoint(checkpoint)};
    return ND_OK;
  });
}

nd_status nd_model_info(const nd_model* model, size_t* teacher_depth, size_t* student_depth, size_t* k,
                        size_t* num_classes) {
  if (!model) return missing("model");
  return guard([&] {
    const auto& pair = model->checkpoint.state.pair;
    if (teacher_depth) *teacher_depth = pair.teacher ? pair.teacher->layers.size() : 0;
    if (student_depth) *student_depth = pair.student ? pair.student->layers.size() : 0;
    if (k) *k = pair.map.k;
    if (num_classes) {
      const auto& heads = pair.student_heads ? pair.student_heads : pair.teacher_heads;
      *num_classes = heads && heads->dense ? heads->dense->bias.numel() : 0;
    }
    return ND_OK;
  });
}

nd_status nd_model_classify(const nd_model* model, int side, const uint32_t* ids, size_t n, double* logits) {
  using namespace newsdistill;
  if (!model) return missing("model");
  if (!ids || !logits) return missing("ids/logits");
  return guard([&] {
    const auto& pair = model->checkpoint.state.pair;
    const auto& enc = side == 0 ? pair.teacher : pair.student;
    const auto& heads = side == 0 ? pair.teacher_heads : pair.student_heads;
    if (side != 0 && side != 1) throw ConfigError("side must be 0 (teacher) or 1 (student)");
    if (!enc || !heads) throw ConfigError(std::string("checkpoint holds no ") + (side == 0 ? "teacher" : "student"));
    if (!heads->dense) throw ConfigError("checkpoint has no classification head");
    if (n == 0 || n > enc->config.max_seq_len) throw InputError("sequence length must lie in 1..max_seq_len");
    TokenSequence seq;
    seq.ids.assign(ids, ids + n);
    seq.mask.assign(n, 1);
    Tape tape(Tape::Mode::kInference);
    const Tensor out = tasks::classify_forward(tape, *enc, *heads, TokenBatch::single(seq), nullptr).logits;
    const auto v = out.values();
    std::copy(v.begin(), v.end(), logits);
    return ND_OK;
  });
}

void nd_model_free(nd_model* model) { delete model; }

}  // extern "C"
