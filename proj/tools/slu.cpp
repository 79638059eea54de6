// slu — command-line driver for the contextual SLU toolkit.
//
// Commands: prepare, stats, train, eval, sweep.  The environment variable
// SLU_DATA_DIR supplies the default data root wherever a directory flag is
// omitted.  All diagnostics go to stderr; data goes to files (and stdout for
// the query-style commands stats/eval/sweep).

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxslu/checkpoint.hpp"
#include "ctxslu/data.hpp"
#include "ctxslu/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctxslu;

namespace {

std::string env_data_dir() {
  const char* v = std::getenv("SLU_DATA_DIR");
  return v ? std::string(v) : std::string();
}

std::string resolve_dir(const std::optional<std::string>& flag, const std::string& config_value,
                        const std::string& what) {
  if (flag && !flag->empty()) return *flag;
  if (!config_value.empty()) return config_value;
  std::string env = env_data_dir();
  if (!env.empty()) return env;
  throw std::runtime_error("no " + what + " given (flag, config key, or SLU_DATA_DIR)");
}

std::string fingerprint_hex(uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return std::string(buf);
}

// Shortest round-trip decimal form, via the JSON serializer.
std::string num(double v) { return json(v).dump(); }

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    size_t pos = 0;
    double v = std::stod(item, &pos);
    if (pos != item.size()) throw std::runtime_error("bad number in list: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<uint64_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    size_t pos = 0;
    unsigned long long v = std::stoull(item, &pos);
    if (pos != item.size()) throw std::runtime_error("bad seed in list: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run configuration: a JSON file mirroring TrainConfig plus paths, with
// command-line flags overriding file values.  Unknown keys are rejected by
// name so typos never silently fall back to defaults.
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string data_dir;
  std::string out_dir = ".";
  TrainConfig train;
  std::vector<double> lambdas;  // sweep only
  std::vector<uint64_t> seeds;  // sweep only
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("config file " + path + " must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "data_dir") rc.data_dir = value.get<std::string>();
    else if (key == "out_dir") rc.out_dir = value.get<std::string>();
    else if (key == "variant") rc.train.variant = parse_variant(value.get<std::string>());
    else if (key == "dli") rc.train.dli_enabled = value.get<bool>();
    else if (key == "lambda") rc.train.lambda = value.get<double>();
    else if (key == "seed") rc.train.seed = value.get<uint64_t>();
    else if (key == "batch_size") rc.train.batch_size = value.get<int>();
    else if (key == "max_epochs") rc.train.max_epochs = value.get<int>();
    else if (key == "patience") rc.train.patience = value.get<int>();
    else if (key == "dropout") rc.train.dropout = value.get<double>();
    else if (key == "embedding_dim") rc.train.embedding_dim = value.get<int>();
    else if (key == "hidden_dim") rc.train.hidden_dim = value.get<int>();
    else if (key == "lr") rc.train.lr = value.get<double>();
    else if (key == "beta1") rc.train.beta1 = value.get<double>();
    else if (key == "beta2") rc.train.beta2 = value.get<double>();
    else if (key == "eps") rc.train.eps = value.get<double>();
    else if (key == "clip_norm") rc.train.clip_norm = value.get<double>();
    else if (key == "lambdas") rc.lambdas = value.get<std::vector<double>>();
    else if (key == "seeds") rc.seeds = value.get<std::vector<uint64_t>>();
    else throw std::runtime_error("unknown config key: '" + key + "' in " + path);
  }
  return rc;
}

json train_config_json(const TrainConfig& t) {
  return json{{"batch_size", t.batch_size},
              {"max_epochs", t.max_epochs},
              {"patience", t.patience},
              {"lambda", t.lambda},
              {"dropout", t.dropout},
              {"embedding_dim", t.embedding_dim},
              {"hidden_dim", t.hidden_dim},
              {"lr", t.lr},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"eps", t.eps},
              {"clip_norm", t.clip_norm},
              {"seed", t.seed},
              {"variant", to_string(t.variant)},
              {"dli", t.dli_enabled}};
}

// Common flag targets shared by train/eval/sweep; std::optional keeps
// "flag not given" distinguishable so config-file values survive.
struct Overrides {
  std::optional<std::string> data_dir, out_dir, variant;
  std::optional<bool> dli;
  std::optional<double> lambda, dropout, lr, clip_norm;
  std::optional<int> batch_size, max_epochs, patience, embedding_dim, hidden_dim;
  std::optional<uint64_t> seed;
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--data-dir", o.data_dir, "Directory with prepared train/dev/test JSONL");
  cmd->add_option("--out-dir", o.out_dir, "Directory for outputs");
  cmd->add_option("--variant", o.variant, "Model variant: nomem|memnet|sden|sden_dagger");
  cmd->add_flag("--dli,!--no-dli", o.dli, "Enable the auxiliary next-utterance task");
  cmd->add_option("--lambda", o.lambda, "Joint-loss mixing weight in [0,1]");
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--batch-size", o.batch_size, "Examples per optimizer step");
  cmd->add_option("--max-epochs", o.max_epochs, "Epoch cap");
  cmd->add_option("--patience", o.patience, "Early-stop patience (<=0 disables)");
  cmd->add_option("--dropout", o.dropout, "Dropout rate in [0,1)");
  cmd->add_option("--embedding-dim", o.embedding_dim, "Word embedding size");
  cmd->add_option("--hidden-dim", o.hidden_dim, "RNN hidden size per direction");
  cmd->add_option("--lr", o.lr, "Adam learning rate");
  cmd->add_option("--clip-norm", o.clip_norm, "Global gradient-norm clip (<=0 disables)");
}

void apply_overrides(RunConfig& rc, const Overrides& o) {
  if (o.data_dir) rc.data_dir = *o.data_dir;
  if (o.out_dir) rc.out_dir = *o.out_dir;
  if (o.variant) rc.train.variant = parse_variant(*o.variant);
  if (o.dli) rc.train.dli_enabled = *o.dli;
  if (o.lambda) rc.train.lambda = *o.lambda;
  if (o.seed) rc.train.seed = *o.seed;
  if (o.batch_size) rc.train.batch_size = *o.batch_size;
  if (o.max_epochs) rc.train.max_epochs = *o.max_epochs;
  if (o.patience) rc.train.patience = *o.patience;
  if (o.dropout) rc.train.dropout = *o.dropout;
  if (o.embedding_dim) rc.train.embedding_dim = *o.embedding_dim;
  if (o.hidden_dim) rc.train.hidden_dim = *o.hidden_dim;
  if (o.lr) rc.train.lr = *o.lr;
  if (o.clip_norm) rc.train.clip_norm = *o.clip_norm;
}

// ---------------------------------------------------------------------------
// Prepared-data access
// ---------------------------------------------------------------------------

struct PreparedSplit {
  std::vector<DialogueSession> sessions;
  std::vector<TrainExample> examples;
};

Vocab load_vocab_file(const std::string& data_dir) {
  std::string path = (fs::path(data_dir) / "vocab.json").string();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path + " is not valid JSON: " + e.what());
  }
  return Vocab::from_json(j);
}

PreparedSplit load_split(const std::string& data_dir, const std::string& split, const Vocab& vocab,
                         SkipReport* report = nullptr) {
  PreparedSplit out;
  std::string path = (fs::path(data_dir) / (split + ".jsonl")).string();
  out.sessions = load_sessions_jsonl(path);
  out.examples = make_train_examples(out.sessions, vocab, report);
  return out;
}

json stats_for(const std::vector<DialogueSession>& train,
               const std::vector<DialogueSession>& dev,
               const std::vector<DialogueSession>& test, const Vocab& vocab) {
  std::vector<DialogueSession> all;
  all.reserve(train.size() + dev.size() + test.size());
  for (const auto* split : {&train, &dev, &test}) {
    all.insert(all.end(), split->begin(), split->end());
  }
  return json{{"train", split_stats_json(compute_split_stats(train))},
              {"dev", split_stats_json(compute_split_stats(dev))},
              {"test", split_stats_json(compute_split_stats(test))},
              {"overall", split_stats_json(compute_split_stats(all))},
              {"vocab",
               {{"tokens", vocab.tokens.size()},
                {"slot_labels", vocab.slot_labels.size()},
                {"intents", vocab.intents.size()},
                {"fingerprint", fingerprint_hex(vocab.fingerprint())}}}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write error on " + path);
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

int cmd_prepare(const std::optional<std::string>& raw_dir_flag,
                const std::optional<std::string>& out_dir_flag, bool kvret_star, double prob,
                uint64_t seed, int min_freq) {
  std::string raw_dir = resolve_dir(raw_dir_flag, "", "raw data directory");
  std::string out_dir = out_dir_flag.value_or(".");
  fs::create_directories(out_dir);

  SkipReport report;
  std::vector<std::vector<DialogueSession>> splits;
  const char* names[3] = {"train", "dev", "test"};
  for (int i = 0; i < 3; ++i) {
    std::string path =
        (fs::path(raw_dir) / ("kvret_" + std::string(names[i]) + "_public.json")).string();
    if (!fs::exists(path)) throw std::runtime_error("missing raw split file " + path);
    splits.push_back(load_kvret(path, report));
  }
  if (kvret_star) {
    for (int i = 0; i < 3; ++i) {
      splits[static_cast<size_t>(i)] =
          build_kvret_star(splits[static_cast<size_t>(i)], prob, seed + static_cast<uint64_t>(i));
    }
  }

  Vocab vocab = build_vocab(splits[0], min_freq);
  for (int i = 0; i < 3; ++i) {
    save_sessions_jsonl(splits[static_cast<size_t>(i)],
                        (fs::path(out_dir) / (std::string(names[i]) + ".jsonl")).string());
  }
  write_text((fs::path(out_dir) / "vocab.json").string(), vocab.to_json().dump(2) + "\n");
  json stats = stats_for(splits[0], splits[1], splits[2], vocab);
  write_text((fs::path(out_dir) / "stats.json").string(), stats.dump(2) + "\n");
  report.write((fs::path(out_dir) / "skip_report.txt").string());

  std::cerr << "prepare: " << splits[0].size() << "/" << splits[1].size() << "/"
            << splits[2].size() << " sessions"
            << (kvret_star ? " (recombined, prob " + num(prob) + ")" : "") << ", vocab "
            << vocab.tokens.size() << " tokens, " << report.lines.size()
            << " skip-report lines -> " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

int cmd_stats(const std::optional<std::string>& data_dir_flag) {
  std::string data_dir = resolve_dir(data_dir_flag, "", "data directory");
  Vocab vocab = load_vocab_file(data_dir);
  std::vector<std::vector<DialogueSession>> splits;
  for (const char* name : {"train", "dev", "test"}) {
    splits.push_back(load_sessions_jsonl((fs::path(data_dir) / (std::string(name) + ".jsonl")).string()));
  }
  std::cout << stats_for(splits[0], splits[1], splits[2], vocab).dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const Overrides& o) {
  RunConfig rc = load_run_config(config_path);
  apply_overrides(rc, o);
  std::string data_dir = resolve_dir(std::nullopt, rc.data_dir, "data directory");
  rc.train.validate();
  fs::create_directories(rc.out_dir);

  Vocab vocab = load_vocab_file(data_dir);
  SkipReport label_report;
  PreparedSplit train = load_split(data_dir, "train", vocab, &label_report);
  PreparedSplit dev = load_split(data_dir, "dev", vocab, &label_report);
  if (!label_report.lines.empty()) {
    std::cerr << "train: " << label_report.lines.size()
              << " label fallbacks while encoding (see skip report from prepare)\n";
  }

  ParameterStore store(rc.train.seed);
  SluModel model(store,
                 model_config_from(rc.train, static_cast<int>(vocab.tokens.size()),
                                   static_cast<int>(vocab.intents.size()),
                                   static_cast<int>(vocab.slot_labels.size())));

  std::string metrics_path = (fs::path(rc.out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path);

  FitResult fitres = fit(model, train.examples, dev.examples, rc.train, vocab.slot_labels,
                         [&](const EpochMetrics& m) {
                           metrics << epoch_metrics_json(m).dump() << "\n";
                           metrics.flush();
                           std::cerr << "epoch " << m.epoch << ": train " << num(m.train_loss)
                                     << " val " << num(m.val_loss) << " slot_f1 "
                                     << num(m.slot_f1) << " intent " << num(m.intent_acc)
                                     << "\n";
                         });

  std::string ckpt_path = (fs::path(rc.out_dir) / "checkpoint.bin").string();
  json meta{{"vocab_fingerprint", fingerprint_hex(vocab.fingerprint())},
            {"vocab_size", vocab.tokens.size()},
            {"n_intents", vocab.intents.size()},
            {"n_slot_labels", vocab.slot_labels.size()},
            {"best_epoch", fitres.best_epoch},
            {"best_val_loss", fitres.best_val_loss},
            {"train_sessions", train.sessions.size()},
            {"dev_sessions", dev.sessions.size()}};
  save_checkpoint(ckpt_path, store, to_string(rc.train.variant), train_config_json(rc.train),
                  meta);

  // Final metrics line: recomputed from the float32 checkpoint actually
  // written, so a later `slu eval` on it reproduces these numbers exactly.
  ParameterStore reload_store(rc.train.seed);
  load_checkpoint(ckpt_path, reload_store);
  SluModel reloaded(reload_store,
                    model_config_from(rc.train, static_cast<int>(vocab.tokens.size()),
                                      static_cast<int>(vocab.intents.size()),
                                      static_cast<int>(vocab.slot_labels.size())));
  EvalReport final_eval = evaluate_dataset(reloaded, dev.examples, vocab.slot_labels);
  double final_val = dataset_loss(reloaded, dev.examples, rc.train.effective_lambda());
  double best_train_loss = 0.0;
  for (const EpochMetrics& m : fitres.history) {
    if (m.epoch == fitres.best_epoch) best_train_loss = m.train_loss;
  }
  json final_line{{"epoch", fitres.best_epoch},
                  {"train_loss", best_train_loss},
                  {"val_loss", final_val},
                  {"slot_p", final_eval.slot.micro.p},
                  {"slot_r", final_eval.slot.micro.r},
                  {"slot_f1", final_eval.slot.micro.f1},
                  {"intent_acc", final_eval.intent_acc},
                  {"final", true}};
  metrics << final_line.dump() << "\n";
  metrics.flush();
  if (!metrics) throw std::runtime_error("write error on " + metrics_path);

  std::cerr << "train: best epoch " << fitres.best_epoch << " (val loss "
            << num(fitres.best_val_loss) << "), checkpoint -> " << ckpt_path << ", metrics -> "
            << metrics_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& ckpt_path, const std::optional<std::string>& data_dir_flag,
             const std::string& split, const std::string& out_path) {
  std::string data_dir = resolve_dir(data_dir_flag, "", "data directory");
  if (!fs::exists(ckpt_path)) throw std::runtime_error("missing checkpoint " + ckpt_path);

  ParameterStore store(1);
  json header = load_checkpoint(ckpt_path, store);
  Vocab vocab = load_vocab_file(data_dir);

  const json& meta = header.at("meta");
  std::string want_fp = meta.at("vocab_fingerprint").get<std::string>();
  std::string have_fp = fingerprint_hex(vocab.fingerprint());
  if (want_fp != have_fp) {
    throw std::runtime_error("checkpoint was trained with a different vocabulary (fingerprint " +
                             want_fp + ", data dir has " + have_fp + ")");
  }

  const json& hyper = header.at("hyper");
  ModelConfig mc;
  mc.vocab_size = meta.at("vocab_size").get<int>();
  mc.n_intents = meta.at("n_intents").get<int>();
  mc.n_slot_labels = meta.at("n_slot_labels").get<int>();
  mc.embedding_dim = hyper.at("embedding_dim").get<int>();
  mc.hidden_dim = hyper.at("hidden_dim").get<int>();
  mc.dropout = hyper.at("dropout").get<double>();
  mc.variant = parse_variant(header.at("variant").get<std::string>());

  int before = store.count();
  SluModel model(store, mc);
  if (store.count() != before) {
    throw std::runtime_error("checkpoint does not match the model it claims to hold (" +
                             std::to_string(store.count() - before) + " parameters missing)");
  }

  PreparedSplit data = load_split(data_dir, split, vocab);
  EvalReport report = evaluate_dataset(model, data.examples, vocab.slot_labels);
  std::string text = report.to_json().dump(2) + "\n";
  std::cout << text;
  if (!out_path.empty()) write_text(out_path, text);
  return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

int cmd_sweep(const std::string& config_path, const Overrides& o,
              const std::optional<std::string>& lambdas_csv,
              const std::optional<std::string>& seeds_csv, int jobs,
              const std::string& out_path_flag) {
  RunConfig rc = load_run_config(config_path);
  apply_overrides(rc, o);
  std::string data_dir = resolve_dir(std::nullopt, rc.data_dir, "data directory");
  if (lambdas_csv) rc.lambdas = parse_double_list(*lambdas_csv);
  if (seeds_csv) rc.seeds = parse_seed_list(*seeds_csv);
  for (double l : rc.lambdas) {
    if (l < 0.0 || l > 1.0) throw std::runtime_error("lambda out of range [0,1]: " + num(l));
  }
  rc.train.validate();

  Vocab vocab = load_vocab_file(data_dir);
  PreparedSplit train = load_split(data_dir, "train", vocab);
  PreparedSplit dev = load_split(data_dir, "dev", vocab);

  SweepResult result = lambda_sweep(
      rc.train, static_cast<int>(vocab.tokens.size()), static_cast<int>(vocab.intents.size()),
      static_cast<int>(vocab.slot_labels.size()), rc.lambdas, rc.seeds, train.examples,
      dev.examples, vocab.slot_labels, jobs);

  std::ostringstream csv;
  csv << "lambda,seed,slot_f1,intent_acc\n";
  for (const SweepRow& r : result.rows) {
    csv << num(r.lambda) << "," << r.seed << "," << num(r.slot_f1) << "," << num(r.intent_acc)
        << "\n";
  }
  for (const SweepAggregate& a : result.aggregates) {
    csv << num(a.lambda) << ",mean," << num(a.mean_slot_f1) << "," << num(a.mean_intent_acc)
        << "\n";
  }

  std::string out_path = out_path_flag;
  if (out_path.empty()) {
    fs::create_directories(rc.out_dir);
    out_path = (fs::path(rc.out_dir) / "sweep.csv").string();
  }
  write_text(out_path, csv.str());
  std::cout << csv.str();
  std::cerr << "sweep: " << result.rows.size() << " runs -> " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-based contextual SLU: data preparation, training, evaluation"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Parse raw KVRET splits into canonical JSONL");
  std::optional<std::string> raw_dir, prep_out_dir;
  bool kvret_star = false;
  double prob = 0.5;
  uint64_t prep_seed = 1;
  int min_freq = 1;
  prepare->add_option("--raw-dir", raw_dir, "Directory with kvret_*_public.json");
  prepare->add_option("--out-dir", prep_out_dir, "Output directory (default .)");
  prepare->add_flag("--kvret-star", kvret_star, "Recombine different-domain session pairs");
  prepare->add_option("--prob", prob, "Recombination participation probability");
  prepare->add_option("--seed", prep_seed, "Recombination RNG seed");
  prepare->add_option("--min-freq", min_freq, "Minimum token frequency for the vocabulary");

  // stats
  auto* stats = app.add_subcommand("stats", "Print statistics of a prepared data directory");
  std::optional<std::string> stats_dir;
  stats->add_option("--data-dir", stats_dir, "Prepared data directory");

  // train
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint + metrics");
  std::string train_config;
  Overrides train_o;
  train->add_option("--config", train_config, "JSON config file");
  add_override_flags(train, train_o);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a prepared split");
  std::string ckpt, eval_split = "dev", eval_out;
  std::optional<std::string> eval_dir;
  eval->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  eval->add_option("--data-dir", eval_dir, "Prepared data directory");
  eval->add_option("--split", eval_split, "Split to evaluate: train|dev|test");
  eval->add_option("--out", eval_out, "Also write the report JSON here");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Train across lambda values and seeds; emit CSV");
  std::string sweep_config, sweep_out;
  Overrides sweep_o;
  std::optional<std::string> lambdas_csv, seeds_csv;
  int jobs = 1;
  sweep->add_option("--config", sweep_config, "JSON config file");
  add_override_flags(sweep, sweep_o);
  sweep->add_option("--lambdas", lambdas_csv, "Comma-separated lambda values");
  sweep->add_option("--seeds", seeds_csv, "Comma-separated seeds");
  sweep->add_option("--jobs", jobs, "Parallel training jobs");
  sweep->add_option("--out", sweep_out, "CSV output path (default <out-dir>/sweep.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      return cmd_prepare(raw_dir, prep_out_dir, kvret_star, prob, prep_seed, min_freq);
    }
    if (stats->parsed()) return cmd_stats(stats_dir);
    if (train->parsed()) return cmd_train(train_config, train_o);
    if (eval->parsed()) return cmd_eval(ckpt, eval_dir, eval_split, eval_out);
    if (sweep->parsed()) {
      return cmd_sweep(sweep_config, sweep_o, lambdas_csv, seeds_csv, jobs, sweep_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
