// End-to-end tests of the command-line tool, driven through the shell against
// a synthetic raw corpus. The binary path arrives in $SLU_CLI_BIN.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracle_utils.hpp"
#include "synthetic_kvret.hpp"
#include "test_support.hpp"

using nlohmann::json;

namespace {

std::string cli_bin() {
  const char* bin = std::getenv("SLU_CLI_BIN");
  REQUIRE(bin != nullptr);
  return bin;
}

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs `slu <args>` with stdout/stderr captured to files in `dir`.
RunResult run_cli(const support::TempDir& dir, const std::string& args,
                  const std::string& env_prefix = "") {
  static int counter = 0;
  std::string out_path = dir.str("cli_out_" + std::to_string(counter) + ".txt");
  std::string err_path = dir.str("cli_err_" + std::to_string(counter) + ".txt");
  ++counter;
  std::string cmd =
      env_prefix + cli_bin() + " " + args + " > " + out_path + " 2> " + err_path;
  int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = support::read_file(out_path);
  r.err = support::read_file(err_path);
  return r;
}

// Lays out raw synthetic splits and a prepared data directory.
struct CliFixture {
  support::TempDir dir{"cli"};
  std::string raw;
  std::string data;

  explicit CliFixture(uint64_t seed = 77, int n_train = 12, int n_dev = 4, int n_test = 4) {
    raw = dir.str("raw");
    data = dir.str("data");
    std::filesystem::create_directories(raw);
    synth::write_raw_corpus(raw, seed, n_train, n_dev, n_test);
    RunResult r = run_cli(dir, "prepare --raw-dir " + raw + " --out-dir " + data);
    REQUIRE(r.exit_code == 0);
  }

  // Writes a toy training config pointing at the prepared data.
  std::string write_config(const json& extra = json::object(), const std::string& name = "config.json") {
    json cfg = {{"data_dir", data},
                {"out_dir", dir.str("run")},
                {"variant", "sden_dagger"},
                {"dli", true},
                {"lambda", 0.3},
                {"seed", 5},
                {"batch_size", 16},
                {"max_epochs", 2},
                {"patience", 0},
                {"dropout", 0.1},
                {"embedding_dim", 10},
                {"hidden_dim", 5}};
    for (const auto& [k, v] : extra.items()) cfg[k] = v;
    std::string path = dir.str(name);
    support::write_file(path, cfg.dump(2));
    return path;
  }
};

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<json> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(json::parse(line));
  }
  return lines;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("prepare writes the canonical layout with accurate statistics") {
  CliFixture fx;

  for (const char* name :
       {"train.jsonl", "dev.jsonl", "test.jsonl", "vocab.json", "stats.json", "skip_report.txt"}) {
    INFO(name);
    REQUIRE(std::filesystem::exists(fx.dir.str("data/" + std::string(name))));
  }

  json stats = json::parse(support::read_file(fx.dir.str("data/stats.json")));
  REQUIRE(stats["train"]["sessions"] == 12);
  REQUIRE(stats["dev"]["sessions"] == 4);
  REQUIRE(stats["test"]["sessions"] == 4);
  REQUIRE(stats["overall"]["sessions"] == 20);
  REQUIRE(stats["train"]["turns"].get<long long>() > 0);
  REQUIRE(stats["vocab"]["intents"] == 3);

  json vocab = json::parse(support::read_file(fx.dir.str("data/vocab.json")));
  REQUIRE(vocab["tokens"].size() > 2);
  REQUIRE(vocab["tokens"][0] == "<pad>");
  REQUIRE(vocab["tokens"][1] == "<unk>");
  REQUIRE(vocab["slot_labels"][0] == "O");
  REQUIRE(vocab["intents"].size() == 3);

  SECTION("stats recomputes the same report from the prepared files") {
    RunResult r = run_cli(fx.dir, "stats --data-dir " + fx.data);
    REQUIRE(r.exit_code == 0);
    REQUIRE(json::parse(r.out) == stats);
  }

  SECTION("the data directory can come from the environment") {
    RunResult r = run_cli(fx.dir, "stats", "SLU_DATA_DIR=" + fx.data + " ");
    REQUIRE(r.exit_code == 0);
    REQUIRE(json::parse(r.out) == stats);
    RunResult bare = run_cli(fx.dir, "stats");
    REQUIRE(bare.exit_code != 0);
  }
}

TEST_CASE("prepare is deterministic and honors the recombination flags") {
  CliFixture fx;

  SECTION("a second run is byte-identical") {
    std::string second = fx.dir.str("data2");
    RunResult r = run_cli(fx.dir, "prepare --raw-dir " + fx.raw + " --out-dir " + second);
    REQUIRE(r.exit_code == 0);
    for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl", "vocab.json", "stats.json"}) {
      INFO(name);
      REQUIRE(support::read_file(fx.dir.str("data/" + std::string(name))) ==
              support::read_file(fx.dir.str("data2/" + std::string(name))));
    }
  }

  SECTION("recombination at probability zero changes nothing") {
    std::string star0 = fx.dir.str("star0");
    RunResult r = run_cli(fx.dir, "prepare --raw-dir " + fx.raw + " --out-dir " + star0 +
                                      " --kvret-star --prob 0");
    REQUIRE(r.exit_code == 0);
    for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl", "stats.json"}) {
      INFO(name);
      REQUIRE(support::read_file(fx.dir.str("star0/" + std::string(name))) ==
              support::read_file(fx.dir.str("data/" + std::string(name))));
    }
  }

  SECTION("recombination at probability one merges sessions, conserving turns") {
    std::string star1 = fx.dir.str("star1");
    RunResult r = run_cli(fx.dir, "prepare --raw-dir " + fx.raw + " --out-dir " + star1 +
                                      " --kvret-star --prob 1 --seed 3");
    REQUIRE(r.exit_code == 0);
    json before = json::parse(support::read_file(fx.dir.str("data/stats.json")));
    json after = json::parse(support::read_file(fx.dir.str("star1/stats.json")));
    REQUIRE(after["train"]["sessions"].get<long long>() <
            before["train"]["sessions"].get<long long>());
    REQUIRE(after["train"]["turns"] == before["train"]["turns"]);
    REQUIRE(after["train"]["avg_turns"].get<double>() >
            before["train"]["avg_turns"].get<double>());
  }

  SECTION("missing raw files fail with a message") {
    std::string empty_raw = fx.dir.str("empty_raw");
    std::filesystem::create_directories(empty_raw);
    RunResult r = run_cli(fx.dir, "prepare --raw-dir " + empty_raw + " --out-dir " +
                                      fx.dir.str("nowhere"));
    REQUIRE(r.exit_code != 0);
    REQUIRE(r.err.find("kvret_train_public.json") != std::string::npos);
  }
}

TEST_CASE("train writes metrics lines, a checkpoint, and honors overrides") {
  CliFixture fx;
  std::string config = fx.write_config();

  RunResult r = run_cli(fx.dir, "train --config " + config);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);

  auto lines = read_jsonl(fx.dir.str("run/metrics.jsonl"));
  REQUIRE(lines.size() == 3);  // two epochs plus the final line
  for (size_t i = 0; i < 2; ++i) {
    for (const char* key :
         {"epoch", "train_loss", "val_loss", "slot_p", "slot_r", "slot_f1", "intent_acc"}) {
      INFO("line " << i << " key " << key);
      REQUIRE(lines[i].contains(key));
    }
    REQUIRE(lines[i]["epoch"] == static_cast<int>(i) + 1);
    REQUIRE_FALSE(lines[i].contains("final"));
  }
  REQUIRE(lines.back()["final"] == true);

  std::string ckpt = support::read_file(fx.dir.str("run/checkpoint.bin"));
  REQUIRE(ckpt.size() > 8);
  REQUIRE(ckpt.substr(0, 8) == "SLUCKPT1");

  SECTION("flags override the config file") {
    std::string out2 = fx.dir.str("run2");
    RunResult r2 = run_cli(fx.dir, "train --config " + config + " --out-dir " + out2 +
                                       " --max-epochs 1");
    REQUIRE(r2.exit_code == 0);
    auto lines2 = read_jsonl(out2 + "/metrics.jsonl");
    REQUIRE(lines2.size() == 2);  // one epoch plus the final line
  }

  SECTION("training twice with one seed is byte-identical") {
    std::string out3 = fx.dir.str("run3");
    RunResult r3 = run_cli(fx.dir, "train --config " + config + " --out-dir " + out3);
    REQUIRE(r3.exit_code == 0);
    REQUIRE(support::read_file(out3 + "/metrics.jsonl") ==
            support::read_file(fx.dir.str("run/metrics.jsonl")));
    REQUIRE(support::read_file(out3 + "/checkpoint.bin") == ckpt);
  }
}

TEST_CASE("train rejects bad configurations by name") {
  CliFixture fx;

  SECTION("an unknown config key is named in the error") {
    std::string config = fx.write_config({{"learning_rate", 0.1}}, "bad.json");
    RunResult r = run_cli(fx.dir, "train --config " + config);
    REQUIRE(r.exit_code != 0);
    REQUIRE(r.err.find("learning_rate") != std::string::npos);
  }

  SECTION("the no-memory variant cannot enable the auxiliary task") {
    std::string config = fx.write_config({{"variant", "nomem"}, {"dli", true}}, "nomem.json");
    RunResult r = run_cli(fx.dir, "train --config " + config);
    REQUIRE(r.exit_code != 0);
  }

  SECTION("an unknown variant name fails") {
    std::string config = fx.write_config({{"variant", "transformer"}}, "variant.json");
    RunResult r = run_cli(fx.dir, "train --config " + config);
    REQUIRE(r.exit_code != 0);
    REQUIRE(r.err.find("transformer") != std::string::npos);
  }

  SECTION("a missing config file fails") {
    RunResult r = run_cli(fx.dir, "train --config " + fx.dir.str("absent.json"));
    REQUIRE(r.exit_code != 0);
  }
}

TEST_CASE("eval reproduces the final training metrics exactly") {
  CliFixture fx;
  std::string config = fx.write_config();
  REQUIRE(run_cli(fx.dir, "train --config " + config).exit_code == 0);
  auto lines = read_jsonl(fx.dir.str("run/metrics.jsonl"));
  json final_line = lines.back();

  RunResult r = run_cli(fx.dir, "eval --checkpoint " + fx.dir.str("run/checkpoint.bin") +
                                    " --data-dir " + fx.data + " --split dev --out " +
                                    fx.dir.str("run/report.json"));
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  json report = json::parse(r.out);

  REQUIRE_THAT(report["slot"]["p"].get<double>(),
               Catch::Matchers::WithinAbs(final_line["slot_p"].get<double>(), 1e-9));
  REQUIRE_THAT(report["slot"]["r"].get<double>(),
               Catch::Matchers::WithinAbs(final_line["slot_r"].get<double>(), 1e-9));
  REQUIRE_THAT(report["slot"]["f1"].get<double>(),
               Catch::Matchers::WithinAbs(final_line["slot_f1"].get<double>(), 1e-9));
  REQUIRE_THAT(report["intent_acc"].get<double>(),
               Catch::Matchers::WithinAbs(final_line["intent_acc"].get<double>(), 1e-9));

  REQUIRE(report.contains("per_slot_type"));
  REQUIRE(report["per_slot_type"].is_object());
  REQUIRE(report["n_utterances"].get<long long>() > 0);

  // The --out copy matches what was printed.
  REQUIRE(json::parse(support::read_file(fx.dir.str("run/report.json"))) == report);

  SECTION("a missing checkpoint fails") {
    RunResult bad = run_cli(fx.dir, "eval --checkpoint " + fx.dir.str("run/nope.bin") +
                                        " --data-dir " + fx.data);
    REQUIRE(bad.exit_code != 0);
  }

  SECTION("a vocabulary mismatch is detected by fingerprint") {
    // Re-prepare with a different minimum frequency: same sessions, different
    // token inventory, hence a different fingerprint.
    std::string other = fx.dir.str("data_minfreq");
    REQUIRE(run_cli(fx.dir, "prepare --raw-dir " + fx.raw + " --out-dir " + other +
                                " --min-freq 3")
                .exit_code == 0);
    RunResult bad = run_cli(fx.dir, "eval --checkpoint " + fx.dir.str("run/checkpoint.bin") +
                                        " --data-dir " + other);
    REQUIRE(bad.exit_code != 0);
    REQUIRE(bad.err.find("vocabulary") != std::string::npos);
  }
}

TEST_CASE("sweep emits the documented CSV grid") {
  CliFixture fx;
  std::string config = fx.write_config({{"max_epochs", 1}}, "sweep.json");

  SECTION("one lambda and one seed give one data row and one mean row") {
    RunResult r = run_cli(fx.dir, "sweep --config " + config + " --lambdas 0.3 --seeds 1");
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    auto lines = split_lines(support::read_file(fx.dir.str("run/sweep.csv")));
    REQUIRE(lines.size() == 3);
    REQUIRE(lines[0] == "lambda,seed,slot_f1,intent_acc");
    REQUIRE(lines[1].rfind("0.3,1,", 0) == 0);
    REQUIRE(lines[2].rfind("0.3,mean,", 0) == 0);
    // Stdout carries the same table.
    REQUIRE(split_lines(r.out) == lines);
  }

  SECTION("an empty lambda list yields only the header") {
    RunResult r = run_cli(fx.dir, "sweep --config " + config + " --lambdas \"\" --seeds 1");
    REQUIRE(r.exit_code == 0);
    auto lines = split_lines(support::read_file(fx.dir.str("run/sweep.csv")));
    REQUIRE(lines == std::vector<std::string>{"lambda,seed,slot_f1,intent_acc"});
  }

  SECTION("out-of-range lambdas are rejected") {
    RunResult r = run_cli(fx.dir, "sweep --config " + config + " --lambdas 0.3,1.5 --seeds 1");
    REQUIRE(r.exit_code != 0);
  }

  SECTION("parallel jobs produce a byte-identical table") {
    std::string csv1 = fx.dir.str("sweep1.csv");
    std::string csv2 = fx.dir.str("sweep2.csv");
    RunResult r1 = run_cli(fx.dir, "sweep --config " + config +
                                       " --lambdas 0.2,0.6 --seeds 4,5 --jobs 1 --out " + csv1);
    RunResult r2 = run_cli(fx.dir, "sweep --config " + config +
                                       " --lambdas 0.2,0.6 --seeds 4,5 --jobs 2 --out " + csv2);
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);
    std::string t1 = support::read_file(csv1);
    REQUIRE(t1 == support::read_file(csv2));
    auto lines = split_lines(t1);
    REQUIRE(lines.size() == 7);  // header + 4 data rows + 2 mean rows
    REQUIRE(lines[1].rfind("0.2,4,", 0) == 0);
    REQUIRE(lines[2].rfind("0.2,5,", 0) == 0);
    REQUIRE(lines[3].rfind("0.6,4,", 0) == 0);
    REQUIRE(lines[4].rfind("0.6,5,", 0) == 0);
    REQUIRE(lines[5].rfind("0.2,mean,", 0) == 0);
    REQUIRE(lines[6].rfind("0.6,mean,", 0) == 0);
  }
}
