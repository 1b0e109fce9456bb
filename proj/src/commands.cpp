#include "newsdistill/commands.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "newsdistill/checkpoint.hpp"
#include "newsdistill/errors.hpp"

namespace newsdistill {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

ordered_json records_json(const std::vector<metrics::MetricRecord>& records) {
  ordered_json out = ordered_json::array();
  for (const auto& r : records) {
    out.push_back({{"metric", r.metric}, {"value", r.value}, {"n_instances", r.n_instances}, {"n_excluded", r.n_excluded}});
  }
  return out;
}

ordered_json models_json(const std::vector<tasks::ModelMetrics>& models) {
  ordered_json out = ordered_json::object();
  for (const auto& m : models) out[m.model] = records_json(m.records);
  return out;
}

void log_metrics(std::ostream* log, const std::string& what, const std::vector<tasks::ModelMetrics>& models) {
  if (!log) return;
  for (const auto& m : models) {
    *log << what << ' ' << m.model;
    for (const auto& r : m.records) *log << ' ' << r.metric << '=' << r.value;
    *log << '\n';
  }
}

std::size_t class_count(const tasks::TaskData& data) {
  return data.task == tasks::TaskKind::kClassify ? data.classification.num_classes() : 0;
}

tasks::TrainState initial_state(RunConfig& cfg, const tasks::TaskData& data) {
  const auto& opts = cfg.train;
  if (!cfg.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(cfg.resume_from);
    const RunConfig prev = ck.config();
    if (prev.train.task != opts.task || prev.train.distill.mode != opts.distill.mode) {
      throw ConfigError("resume_from: checkpoint was trained as " + to_string(prev.train.task) + "/" +
                        to_string(prev.train.distill.mode) + ", config asks for " + to_string(opts.task) + "/" +
                        to_string(opts.distill.mode));
    }
    return std::move(ck.state);
  }
  if (!cfg.init_checkpoint.empty()) {
    if (opts.task != tasks::TaskKind::kRetrieval || opts.distill.mode != TrainingMode::kStudentOnly) {
      throw ConfigError("init_checkpoint: only retrieval fine-tuning in student-only mode starts from a checkpoint");
    }
    const Checkpoint ck = load_checkpoint(cfg.init_checkpoint);
    ModelPair pair = tasks::transfer_pair(ck.state.pair, cfg.init_from_teacher);
    const EncoderConfig& ec = pair.student->config;
    if (ec.vocab_size < cfg.encoder.vocab_size) {
      throw ConfigError("init_checkpoint: model vocabulary (" + std::to_string(ec.vocab_size) +
                        ") is smaller than the data vocabulary (" + std::to_string(cfg.encoder.vocab_size) + ")");
    }
    cfg.encoder.vocab_size = ec.vocab_size;
    return tasks::make_state(opts, std::move(pair));
  }
  ModelPair pair = tasks::initial_pair(opts, cfg.encoder, cfg.block_map(),
                                       tasks::head_spec(opts.task, cfg.attn_dim, class_count(data)));
  return tasks::make_state(opts, std::move(pair));
}

}  // namespace

std::string step_json(const StepRecord& s) {
  const StepReport& r = s.report;
  return ordered_json{{"step", r.step},
                      {"phase", s.phase},
                      {"L_t", r.teacher_loss},
                      {"L_s", r.student_loss},
                      {"L_hidden_l", r.hidden_layer_loss},
                      {"L_hidden_p", r.pooled_hidden_loss},
                      {"L_distill", r.distill_loss},
                      {"grad_norm_teacher", r.grad_norm_teacher},
                      {"grad_norm_student", r.grad_norm_student}}
      .dump();
}

TrainRun run_train(const RunConfig& config, std::ostream* log) {
  config.validate();
  TrainRun run;
  run.config = config;
  RunConfig& cfg = run.config;
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);

  data::Vocab vocab;
  const tasks::TaskData data = load_task_data(cfg, &vocab);
  if (cfg.data.kind == DataKind::kMind && cfg.data.vocab.empty()) {
    vocab.save(out / "vocab.txt");
    cfg.data.vocab = fs::absolute(out / "vocab.txt");
  }
  run.state = initial_state(cfg, data);
  const std::string config_text = cfg.dump();
  write_file(out / "config.txt", config_text);

  const bool resumed = !cfg.resume_from.empty();
  std::ofstream steps(out / "steps.jsonl", resumed ? std::ios::app : std::ios::trunc);
  if (!steps) throw DataError("cannot write " + (out / "steps.jsonl").string());
  bool saved_best = false;

  tasks::TrainHooks hooks;
  hooks.on_step = [&](const StepReport& r, int phase) {
    run.steps.push_back({phase, r});
    steps << step_json(run.steps.back()) << '\n';
  };
  hooks.on_epoch = [&](const tasks::EpochReport& rep, const tasks::TrainState& st) {
    steps.flush();
    run.epochs.push_back(rep);
    if (rep.improved) {
      save_checkpoint(out / "best.ckpt", config_text, st);
      saved_best = true;
    }
    if (log) {
      *log << "phase " << rep.phase << " epoch " << rep.epoch;
      if (!run.steps.empty()) *log << " L_t=" << run.steps.back().report.teacher_loss << " L_s=" << run.steps.back().report.student_loss;
      *log << '\n';
      log_metrics(log, "  valid", rep.metrics);
    }
  };
  tasks::train(run.state, data, cfg.train, hooks);
  steps.close();
  save_checkpoint(out / "final.ckpt", config_text, run.state);

  run.test = tasks::evaluate(run.state.pair, data, "test", cfg.train);
  log_metrics(log, "test", run.test);
  if (saved_best || (resumed && fs::exists(out / "best.ckpt"))) {
    const Checkpoint best = load_checkpoint(out / "best.ckpt");
    run.best_test = tasks::evaluate(best.state.pair, data, "test", cfg.train);
  }

  ordered_json epochs = ordered_json::array();
  for (const auto& e : run.epochs) {
    epochs.push_back({{"phase", e.phase}, {"epoch", e.epoch}, {"improved", e.improved}, {"valid", models_json(e.metrics)}});
  }
  const ordered_json metrics{{"task", to_string(cfg.train.task)},
                             {"mode", to_string(cfg.train.distill.mode)},
                             {"seed", cfg.train.seed},
                             {"steps", run.state.global_step},
                             {"epochs", epochs},
                             {"best",
                              {{"phase", run.state.best_phase},
                               {"epoch", run.state.best_epoch},
                               {"metric", tasks::selection_metric(cfg.train.task)},
                               {"valid", run.state.best_metric}}},
                             {"test", models_json(run.test)},
                             {"best_test", models_json(run.best_test)}};
  write_file(out / "metrics.json", metrics.dump(2) + "\n");
  return run;
}

std::vector<tasks::ModelMetrics> run_eval(const fs::path& checkpoint, const RunConfig* data_config,
                                          const std::string& split, const fs::path& out_dir, std::ostream* log) {
  if (split != "valid" && split != "test") throw ConfigError("split must be valid or test, got '" + split + "'");
  const Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig cfg = data_config ? *data_config : ck.config();
  cfg.resume_from.clear();
  cfg.init_checkpoint.clear();
  cfg.validate();
  // The vocabulary the model was trained with bounds the data's.
  const auto& enc = ck.state.pair.student ? ck.state.pair.student : ck.state.pair.teacher;
  if (!enc) throw DataError("checkpoint " + checkpoint.string() + " holds no model");
  cfg.encoder.vocab_size = enc->config.vocab_size;
  const tasks::TaskData data = load_task_data(cfg);
  auto result = tasks::evaluate(ck.state.pair, data, split, cfg.train);
  fs::create_directories(out_dir);
  const ordered_json doc{{"checkpoint", checkpoint.string()},
                         {"task", to_string(cfg.train.task)},
                         {"split", split},
                         {"metrics", models_json(result)}};
  write_file(out_dir / ("eval_" + split + ".json"), doc.dump(2) + "\n");
  log_metrics(log, split, result);
  return result;
}

std::string Table::csv() const {
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out.str();
}

namespace {

std::string num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

// Test metrics of every model of the first run, in report order.
std::vector<std::string> metric_columns(const TrainRun& run) {
  std::vector<std::string> cols;
  for (const auto& m : run.test) {
    for (const auto& r : m.records) cols.push_back(m.model + "_" + r.metric);
  }
  return cols;
}

std::vector<std::string> metric_cells(const TrainRun& run) {
  std::vector<std::string> cells;
  for (const auto& m : run.test) {
    for (const auto& r : m.records) cells.push_back(num(r.value));
  }
  return cells;
}

std::string final_loss(const TrainRun& run) {
  if (run.steps.empty()) return "";
  const auto& r = run.steps.back().report;
  return num(run.state.pair.student ? r.student_loss : r.teacher_loss);
}

}  // namespace

TableRun run_sweep_beta(const RunConfig& config, std::ostream* log) {
  if (config.sweep_betas.empty()) throw ConfigError("sweep.betas is empty");
  TableRun out;
  const fs::path root = config.out_dir;
  for (double beta : config.sweep_betas) {
    RunConfig c = config;
    c.train.distill.beta = beta;
    const std::string label = c.get("beta");
    c.out_dir = root / ("beta_" + label);
    if (log) *log << "== beta " << label << '\n';
    out.runs.push_back(run_train(c, log));
    const TrainRun& run = out.runs.back();
    if (out.table.header.empty()) {
      out.table.header = {"beta", "seed"};
      for (auto& col : metric_columns(run)) out.table.header.push_back(col);
      out.table.header.push_back("final_loss");
    }
    std::vector<std::string> row{label, std::to_string(c.train.seed)};
    for (auto& cell : metric_cells(run)) row.push_back(cell);
    row.push_back(final_loss(run));
    out.table.rows.push_back(std::move(row));
  }
  write_file(root / "sweep_beta.csv", out.table.csv());
  return out;
}

TableRun run_ablate(const RunConfig& config, std::ostream* log) {
  struct Variant {
    std::string name;
    std::string dir;
    void (*apply)(DistillConfig&);
  };
  const Variant variants[] = {
      {"full", "full", [](DistillConfig&) {}},
      {"w/o momentum", "no_momentum", [](DistillConfig& d) { d.enable_momentum = false; }},
      {"w/o distillation loss", "no_distill_loss", [](DistillConfig& d) { d.enable_distill_loss = false; }},
      {"w/o hidden losses", "no_hidden_losses",
       [](DistillConfig& d) { d.enable_hidden_layer_loss = d.enable_pooled_hidden_loss = false; }},
  };
  TableRun out;
  const fs::path root = config.out_dir / "ablate";
  for (const auto& v : variants) {
    RunConfig c = config;
    v.apply(c.train.distill);
    c.out_dir = root / v.dir;
    if (log) *log << "== " << v.name << '\n';
    out.runs.push_back(run_train(c, log));
    const TrainRun& run = out.runs.back();
    if (out.table.header.empty()) {
      out.table.header = {"variant", "seed"};
      for (auto& col : metric_columns(run)) out.table.header.push_back(col);
      out.table.header.push_back("final_loss");
    }
    std::vector<std::string> row{v.name, std::to_string(c.train.seed)};
    for (auto& cell : metric_cells(run)) row.push_back(cell);
    row.push_back(final_loss(run));
    out.table.rows.push_back(std::move(row));
  }
  write_file(config.out_dir / "ablation.csv", out.table.csv());
  return out;
}

std::vector<GradcheckResult> run_gradcheck(const RunConfig& config, std::ostream* log) {
  const auto results = gradcheck_suite(config);
  ordered_json doc = ordered_json::array();
  bool all = true;
  for (const auto& r : results) {
    all = all && r.passed();
    doc.push_back({{"loss", r.loss},
                   {"samples", r.samples},
                   {"max_rel_error", r.max_rel_error},
                   {"worst_parameter", r.worst_parameter},
                   {"tolerance", r.tolerance},
                   {"passed", r.passed()}});
    if (log) {
      *log << r.loss << " samples=" << r.samples << " max_rel_error=" << r.max_rel_error << " ("
           << r.worst_parameter << ") " << (r.passed() ? "PASS" : "FAIL") << '\n';
    }
  }
  fs::create_directories(config.out_dir);
  write_file(config.out_dir / "gradcheck.json",
             ordered_json{{"passed", all}, {"losses", doc}}.dump(2) + "\n");
  return results;
}

BenchReport run_bench(const RunConfig& config, std::ostream* log) {
  config.validate();
  EncoderConfig ec = config.encoder;
  if (ec.vocab_size == 0) ec.vocab_size = config.data.synthetic.vocab_size;
  const auto& b = config.bench;
  const BenchReport r = bench_forward(ec, config.block_map(), config.attn_dim, b.passes, b.warmup, b.seq_len,
                                      config.train.seed);
  fs::create_directories(config.out_dir);
  const ordered_json doc{{"teacher_depth", r.teacher_depth},
                         {"student_depth", r.student_depth},
                         {"k", r.k},
                         {"samples", r.samples},
                         {"warmup", r.warmup},
                         {"seq_len", r.seq_len},
                         {"teacher_median_us", r.teacher_median_us},
                         {"student_median_us", r.student_median_us},
                         {"ratio", r.ratio()}};
  write_file(config.out_dir / "bench.json", doc.dump(2) + "\n");
  if (log) {
    *log << "teacher depth " << r.teacher_depth << " median " << r.teacher_median_us << " us\n"
         << "student depth " << r.student_depth << " median " << r.student_median_us << " us\n"
         << "K=" << r.k << " samples=" << r.samples << " ratio=" << r.ratio() << '\n';
  }
  return r;
}

}  // namespace newsdistill
