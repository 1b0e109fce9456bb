#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "newsdistill/newsdistill.h"

namespace {

int fail(nd_status s) {
  std::fprintf(stderr, "error: %s\n", nd_last_error());
  return static_cast<int>(s);
}

struct Common {
  std::string config;
  std::string out;
  long long seed = -1;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "configuration file (key = value lines)");
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "output directory (overrides out_dir)");
  cmd->add_option("--seed", c.seed, "run seed (overrides seed)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--set", c.sets, "extra KEY=VALUE override, repeatable");
}

// Loads the config file (or defaults) and applies command-line overrides.
nd_status build_config(const Common& c, nd_config** out) {
  nd_status s = c.config.empty() ? nd_config_new(out) : nd_config_load(c.config.c_str(), out);
  if (s != ND_OK) return s;
  auto set = [&](const std::string& key, const std::string& value) {
    return s == ND_OK ? (s = nd_config_set(*out, key.c_str(), value.c_str())) : s;
  };
  if (!c.out.empty()) set("out_dir", c.out);
  if (c.seed >= 0) set("seed", std::to_string(c.seed));
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      nd_config_free(*out);
      *out = nullptr;
      std::fprintf(stderr, "error: --set expects KEY=VALUE, got '%s'\n", kv.c_str());
      return ND_ERR_CONFIG;
    }
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (s != ND_OK) {
    nd_config_free(*out);
    *out = nullptr;
  }
  return s;
}

template <typename F>
int with_config(const Common& c, F&& f) {
  nd_config* cfg = nullptr;
  nd_status s = build_config(c, &cfg);
  if (s != ND_OK) return nd_last_error()[0] ? fail(s) : static_cast<int>(s);
  s = f(cfg);
  nd_config_free(cfg);
  return s == ND_OK ? 0 : fail(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint teacher/student distillation for news models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(nd_version()));

  Common train_opts, sweep_opts, ablate_opts, grad_opts, bench_opts, eval_opts;
  auto* train = app.add_subcommand("train", "train the configured pipeline");
  add_common(train, train_opts, true);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_opts, false);
  std::string checkpoint, split = "test";
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--split", split, "valid or test")->check(CLI::IsMember({"valid", "test"}));
  auto* sweep = app.add_subcommand("sweep-beta", "train once per momentum beta");
  add_common(sweep, sweep_opts, true);
  auto* ablate = app.add_subcommand("ablate", "full model and single-component removals");
  add_common(ablate, ablate_opts, true);
  auto* grad = app.add_subcommand("gradcheck", "finite-difference audit of every loss");
  add_common(grad, grad_opts, false);
  auto* bench = app.add_subcommand("bench", "teacher vs student forward latency");
  add_common(bench, bench_opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*train) return with_config(train_opts, [](nd_config* c) { return nd_train(c); });
  if (*sweep) return with_config(sweep_opts, [](nd_config* c) { return nd_sweep_beta(c); });
  if (*ablate) return with_config(ablate_opts, [](nd_config* c) { return nd_ablate(c); });
  if (*grad) return with_config(grad_opts, [](nd_config* c) { return nd_gradcheck(c); });
  if (*bench) return with_config(bench_opts, [](nd_config* c) { return nd_bench(c, nullptr); });
  if (*eval) {
    const bool has_data = !eval_opts.config.empty() || !eval_opts.sets.empty();
    std::string out = eval_opts.out.empty() ? "." : eval_opts.out;
    if (!has_data) {
      const nd_status s = nd_eval(checkpoint.c_str(), nullptr, split.c_str(), out.c_str());
      return s == ND_OK ? 0 : fail(s);
    }
    return with_config(eval_opts, [&](nd_config* c) { return nd_eval(checkpoint.c_str(), c, split.c_str(), out.c_str()); });
  }
  return 1;
}
