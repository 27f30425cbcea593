#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "entropy_tree/io.hpp"
#include "entropy_tree/tree.hpp"

using namespace entropy_tree;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

// Runs the installed binary through the shell; callers quote their own args.
CliResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(CLI_BIN) + " " + args + " 2>&1";
  CliResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t got = 0;
  while ((got = fread(buf, 1, sizeof(buf), pipe)) > 0) result.output.append(buf, got);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("entropy_tree_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

std::string fork_model_path() { return std::string(FIXTURES_DIR) + "/fork.model"; }

std::string write_fork_dataset(const TempDir& dir) {
  const std::string path = dir.file("data.jsonl");
  spit(path, R"({"id": "fork-0", "prompt": "", "answer": "ly"})" "\n");
  return path;
}

}  // namespace

TEST_CASE("--help exits zero everywhere") {
  CHECK(run_cli("--help").exit_code == 0);
  for (const char* sub : {"calibrate", "run", "train-ngram", "report"}) {
    auto r = run_cli(std::string(sub) + " --help");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("--help") != std::string::npos);
  }
  auto top = run_cli("--help");
  CHECK(top.output.find("calibrate") != std::string::npos);
  CHECK(top.output.find("train-ngram") != std::string::npos);
}

TEST_CASE("bad invocations exit nonzero") {
  CHECK(run_cli("").exit_code != 0);                       // subcommand required
  CHECK(run_cli("decode").exit_code != 0);                 // unknown subcommand
  CHECK(run_cli("run --no-such-flag").exit_code != 0);     // unknown flag
  auto r = run_cli("calibrate --model-kind scripted");     // missing required keys
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("error") != std::string::npos);
}

TEST_CASE("train-ngram: deterministic file, loadable model") {
  TempDir dir;
  spit(dir.file("corpus.txt"), "a b a b\nb a\n");

  auto r = run_cli("train-ngram --corpus " + dir.file("corpus.txt") +
                   " --order 2 --alpha 1 --model-out " + dir.file("m1.ngram"));
  CHECK(r.exit_code == 0);
  REQUIRE(fs::exists(dir.file("m1.ngram")));

  auto r2 = run_cli("train-ngram --corpus " + dir.file("corpus.txt") +
                    " --order 2 --alpha 1 --model-out " + dir.file("m2.ngram"));
  CHECK(r2.exit_code == 0);
  CHECK(slurp(dir.file("m1.ngram")) == slurp(dir.file("m2.ngram")));

  NGramModel model = load_ngram(dir.file("m1.ngram"));
  CHECK(model.order() == 2);
  const TokenId a = *model.vocab().find("a");
  const TokenId b = *model.vocab().find("b");
  // Bigrams: a→b twice, b→a twice... second sequence adds b→a once: contexts
  // a:{b:2}, b:{a:2, b:1}. P(b|a) = (2+1)/(2+3) with V=3.
  CHECK(model.score_next(std::vector<TokenId>{a}).dist.probs[b] == doctest::Approx(0.6));
}

TEST_CASE("calibrate: reproducible thresholds file") {
  TempDir dir;
  const std::string dataset = write_fork_dataset(dir);
  const std::string base = "calibrate --model-kind scripted --model-path " + fork_model_path() +
                           " --dataset " + dataset + " --strategy greedy --seed 7";

  auto r = run_cli(base + " --q 80 --out " + dir.file("cal"));
  CHECK(r.exit_code == 0);
  REQUIRE(fs::exists(dir.file("cal/thresholds.txt")));
  auto kv = load_key_values(dir.file("cal/thresholds.txt"));
  CHECK(kv.at("tau") == "0.6881388137135884");
  CHECK(kv.at("delta") == "1");
  CHECK(kv.at("entropy_pool_size") == "4");

  auto r2 = run_cli(base + " --q 80 --out " + dir.file("cal2"));
  CHECK(r2.exit_code == 0);
  CHECK(slurp(dir.file("cal/thresholds.txt")) == slurp(dir.file("cal2/thresholds.txt")));

  // Lower percentile, lower threshold.
  auto low = run_cli(base + " --q 50 --out " + dir.file("cal3"));
  CHECK(low.exit_code == 0);
  CHECK(load_key_values(dir.file("cal3/thresholds.txt")).at("tau") == "0");
}

TEST_CASE("run: full pipeline on the fork fixture") {
  TempDir dir;
  const std::string dataset = write_fork_dataset(dir);
  const std::string base =
      "run --model-kind scripted --model-path " + fork_model_path() + " --dataset " + dataset +
      " --tau 0.5 --b 2 --n-tree 4 --max-tokens 16 --strategy greedy --seed 11" +
      " --pattern '(ly|ry)' --fallback none";

  auto r = run_cli(base + " --out " + dir.file("out"));
  CHECK(r.exit_code == 0);
  for (const char* name : {"report.jsonl", "passk.csv", "auroc.csv", "config.txt"}) {
    CHECK(fs::exists(dir.path / "out" / name));
  }

  EvalReport report = report_from_jsonl(slurp(dir.file("out/report.jsonl")));
  CHECK(report.master_seed == 11);
  REQUIRE(report.methods.size() == 2);  // entropy_tree + multi_chain by default
  CHECK(report.methods[0].method == Method::kEntropyTree);
  CHECK(report.methods[1].method == Method::kMultiChain);
  REQUIRE(report.records.size() == 2);
  CHECK(report.records[0].n == 2);  // fork expands once, budget 4
  CHECK(report.records[0].c == 1);
  CHECK(report.config_snapshot.at("dataset.problems") == "1");
  CHECK(report.config_snapshot.at("tree.tau") == "0.5");

  // The console summary table shows the methods.
  CHECK(r.output.find("entropy_tree") != std::string::npos);
  CHECK(r.output.find("multi_chain") != std::string::npos);

  SUBCASE("jobs do not change the output") {
    auto j1 = run_cli(base + " --jobs 1 --out " + dir.file("j1"));
    auto j4 = run_cli(base + " --jobs 4 --out " + dir.file("j4"));
    CHECK(j1.exit_code == 0);
    CHECK(j4.exit_code == 0);
    const std::string a = slurp(dir.file("j1/report.jsonl"));
    const std::string b = slurp(dir.file("j4/report.jsonl"));
    CHECK(!a.empty());
    // jobs is echoed in the config snapshot; reports differ only there.
    EvalReport ra = report_from_jsonl(a);
    EvalReport rb = report_from_jsonl(b);
    ra.config_snapshot.erase("jobs");
    rb.config_snapshot.erase("jobs");
    CHECK(report_to_jsonl(ra) == report_to_jsonl(rb));
    CHECK(slurp(dir.file("j1/passk.csv")) == slurp(dir.file("j4/passk.csv")));
  }

  SUBCASE("rerun from the echoed config") {
    auto again = run_cli("run --config " + dir.file("out/config.txt") + " --out " +
                         dir.file("again"));
    CHECK(again.exit_code == 0);
    CHECK(slurp(dir.file("out/report.jsonl")) == slurp(dir.file("again/report.jsonl")));
  }

  SUBCASE("re-render CSVs from the stored report") {
    auto rerender = run_cli("report --report " + dir.file("out/report.jsonl") + " --out " +
                            dir.file("rr"));
    CHECK(rerender.exit_code == 0);
    CHECK(slurp(dir.file("rr/passk.csv")) == slurp(dir.file("out/passk.csv")));
    CHECK(slurp(dir.file("rr/auroc.csv")) == slurp(dir.file("out/auroc.csv")));
  }
}

TEST_CASE("run: thresholds file feeds tau, flags override") {
  TempDir dir;
  const std::string dataset = write_fork_dataset(dir);
  spit(dir.file("th.txt"), "tau = 0.5\ndelta = 0\n");

  const std::string common =
      "run --model-kind scripted --model-path " + fork_model_path() + " --dataset " + dataset +
      " --n-tree 4 --max-tokens 16 --strategy greedy --seed 11 --pattern '(ly|ry)'" +
      " --fallback none --methods entropy_tree";

  auto from_file = run_cli(common + " --thresholds " + dir.file("th.txt") + " --out " +
                           dir.file("a"));
  CHECK(from_file.exit_code == 0);
  EvalReport ra = report_from_jsonl(slurp(dir.file("a/report.jsonl")));
  CHECK(ra.config_snapshot.at("tree.tau") == "0.5");
  CHECK(ra.records[0].n == 2);

  // Explicit --tau wins over the file; a prohibitive threshold stops forking.
  auto overridden = run_cli(common + " --thresholds " + dir.file("th.txt") +
                            " --tau 0.9 --out " + dir.file("b"));
  CHECK(overridden.exit_code == 0);
  EvalReport rb = report_from_jsonl(slurp(dir.file("b/report.jsonl")));
  CHECK(rb.config_snapshot.at("tree.tau") == "0.9");
  CHECK(rb.records[0].n == 1);
}

TEST_CASE("run: missing threshold points at calibrate") {
  TempDir dir;
  const std::string dataset = write_fork_dataset(dir);
  auto r = run_cli("run --model-kind scripted --model-path " + fork_model_path() +
                   " --dataset " + dataset + " --seed 1 --out " + dir.file("out"));
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("calibrate") != std::string::npos);
  CHECK(r.output.find("--tau") != std::string::npos);
  CHECK(!fs::exists(dir.file("out/report.jsonl")));
}

TEST_CASE("run: empty dataset leaves no partial outputs") {
  TempDir dir;
  spit(dir.file("empty.jsonl"), "\n");
  auto r = run_cli("run --model-kind scripted --model-path " + fork_model_path() +
                   " --dataset " + dir.file("empty.jsonl") + " --tau 0.5 --seed 1 --out " +
                   dir.file("out"));
  CHECK(r.exit_code != 0);
  CHECK(!fs::exists(dir.file("out/report.jsonl")));
  CHECK(!fs::exists(dir.file("out/passk.csv")));
}

TEST_CASE("run: output directory from the environment") {
  TempDir dir;
  const std::string dataset = write_fork_dataset(dir);
  auto r = run_cli("run --model-kind scripted --model-path " + fork_model_path() +
                       " --dataset " + dataset +
                       " --tau 0.5 --strategy greedy --seed 11 --pattern '(ly|ry)'"
                       " --fallback none",
                   "ENTROPY_TREE_OUT=" + dir.file("envout"));
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(dir.file("envout/report.jsonl")));

  // With neither --out nor the variable, the run refuses early.
  auto bare = run_cli("run --model-kind scripted --model-path " + fork_model_path() +
                      " --dataset " + dataset + " --tau 0.5 --seed 11");
  CHECK(bare.exit_code != 0);
  CHECK(bare.output.find("ENTROPY_TREE_OUT") != std::string::npos);
}

TEST_CASE("run: tree dumps per problem") {
  TempDir dir;
  const std::string dataset = write_fork_dataset(dir);
  const std::string base =
      "run --model-kind scripted --model-path " + fork_model_path() + " --dataset " + dataset +
      " --tau 0.5 --strategy greedy --seed 11 --pattern '(ly|ry)' --fallback none";

  auto r = run_cli(base + " --dump-trees --out " + dir.file("out"));
  CHECK(r.exit_code == 0);
  REQUIRE(fs::exists(dir.file("out/trees/fork-0.json")));
  DecodingTree tree = tree_from_json(slurp(dir.file("out/trees/fork-0.json")));
  CHECK(tree.nodes.size() == 9);
  CHECK(tree.nodes[0].branched);

  // Dumps only make sense when the tree method actually runs.
  auto no_tree = run_cli(base + " --dump-trees --methods multi_chain --out " + dir.file("x"));
  CHECK(no_tree.exit_code != 0);
  CHECK(no_tree.output.find("entropy_tree") != std::string::npos);
}

TEST_CASE("run: ablations execute end to end") {
  TempDir dir;
  const std::string dataset = write_fork_dataset(dir);
  auto r = run_cli(
      "run --model-kind scripted --model-path " + fork_model_path() + " --dataset " + dataset +
      " --tau 0.5 --n-tree 4 --max-tokens 16 --seed 3 --pattern '(ly|ry)' --fallback none" +
      " --methods 'entropy_tree ablation_late_percentile ablation_random_branch'" +
      " --late-q 75 --out " + dir.file("out"));
  CHECK(r.exit_code == 0);
  EvalReport report = report_from_jsonl(slurp(dir.file("out/report.jsonl")));
  REQUIRE(report.methods.size() == 3);
  CHECK(report.methods[1].method == Method::kAblationLatePercentile);
  CHECK(report.methods[1].params.at("ablation.percentile_q") == "75");
  CHECK(report.methods[2].method == Method::kAblationRandomBranch);
  CHECK(report.methods[2].params.count("ablation.matched_rate"));

  auto dup = run_cli("run --model-kind scripted --model-path " + fork_model_path() +
                     " --dataset " + dataset + " --tau 0.5 --seed 3" +
                     " --methods 'multi_chain multi_chain' --out " + dir.file("d"));
  CHECK(dup.exit_code != 0);
  CHECK(dup.output.find("duplicate") != std::string::npos);
}
