// entropy-tree: threshold calibration, tree/chain decoding experiments,
// n-gram training and report re-rendering. Every run is driven by a flat
// key=value config; flags override file values and the effective config is
// echoed into the output directory.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "entropy_tree/common.hpp"
#include "entropy_tree/eval.hpp"
#include "entropy_tree/io.hpp"
#include "entropy_tree/uncertainty.hpp"

namespace et = entropy_tree;
namespace fs = std::filesystem;

namespace {

using Settings = std::map<std::string, std::string>;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const std::string* get(const Settings& s, const std::string& key) {
  const auto it = s.find(key);
  return it == s.end() ? nullptr : &it->second;
}

std::string require(const Settings& s, const std::string& key, const std::string& hint) {
  if (const std::string* v = get(s, key)) return *v;
  throw std::runtime_error("missing setting '" + key + "': " + hint);
}

long long as_int(const Settings& s, const std::string& key, long long fallback) {
  const std::string* v = get(s, key);
  if (!v) return fallback;
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw std::runtime_error("setting '" + key + "' is not an integer: " + *v);
  }
  return out;
}

double as_double(const Settings& s, const std::string& key, double fallback) {
  const std::string* v = get(s, key);
  if (!v) return fallback;
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw std::runtime_error("setting '" + key + "' is not a number: " + *v);
  }
  return out;
}

std::uint64_t as_u64(const Settings& s, const std::string& key) {
  const std::string v = require(s, key, "seeds are always explicit, pass --seed");
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::runtime_error("setting '" + key + "' is not an unsigned integer: " + v);
  }
  return out;
}

bool as_bool(const Settings& s, const std::string& key, bool fallback) {
  const std::string* v = get(s, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw std::runtime_error("setting '" + key + "' is not a boolean: " + *v);
}

// Binds string-valued flags onto config keys; flag values land in an overlay
// applied on top of the --config file.
struct ConfigCommand {
  CLI::App* cmd = nullptr;
  std::string config_path;
  Settings overlay;

  explicit ConfigCommand(CLI::App* app) : cmd(app) {
    cmd->add_option("--config", config_path, "key = value config file");
  }

  void bind(const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [this, key](const std::string& value) { overlay[key] = value; }, help);
  }

  void bind_flag(const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_flag_function(
        flag, [this, key](std::int64_t) { overlay[key] = "true"; }, help);
  }

  Settings resolve() const {
    Settings out;
    if (!config_path.empty()) out = et::load_key_values(config_path);
    for (const auto& [key, value] : overlay) out[key] = value;
    return out;
  }
};

fs::path resolve_out(const Settings& s) {
  if (const std::string* v = get(s, "out")) return *v;
  if (const char* env = std::getenv("ENTROPY_TREE_OUT")) return env;
  throw std::runtime_error(
      "no output directory: pass --out, set 'out' in the config, or export ENTROPY_TREE_OUT");
}

et::SamplerConfig build_sampler(const Settings& s, std::uint64_t master_seed) {
  et::SamplerConfig sampler;
  if (const std::string* v = get(s, "sampler.strategy")) {
    sampler.strategy = et::strategy_from_name(*v);
  }
  sampler.k = static_cast<int>(as_int(s, "sampler.k", 0));
  sampler.p = as_double(s, "sampler.p", 1.0);
  sampler.temperature = as_double(s, "sampler.temperature", 1.0);
  sampler.seed = get(s, "sampler.seed") ? as_u64(s, "sampler.seed") : master_seed;
  return sampler;
}

et::ExtractionRule build_rule(const Settings& s) {
  const et::ExtractionRule base = et::default_extraction_rule();
  const std::string* pattern = get(s, "extract.pattern");
  const std::string* policy = get(s, "extract.policy");
  const std::string* fallback = get(s, "extract.fallback");
  return et::ExtractionRule(pattern ? *pattern : base.pattern(),
                            policy ? et::policy_from_name(*policy) : base.policy(),
                            fallback ? et::fallback_from_name(*fallback) : base.fallback());
}

int resolve_jobs(const Settings& s) {
  const auto jobs = as_int(s, "jobs", 1);
  if (jobs < 1) throw std::runtime_error("jobs must be >= 1");
  return static_cast<int>(jobs);
}

std::string settings_text(const Settings& s) {
  std::string out;
  for (const auto& [key, value] : s) out += key + " = " + value + "\n";
  return out;
}

void print_summary(const et::EvalReport& report) {
  std::printf("%-26s %9s %9s %9s %10s %12s %13s\n", "method", "pass@1", "pass@10", "pass@20",
              "vote_acc", "auroc[pe]", "auroc[ln_pe]");
  auto cell = [](const std::vector<double>& curve, int k) {
    if (k > static_cast<int>(curve.size())) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", curve[k - 1]);
    return std::string(buf);
  };
  auto metric_cell = [](const std::map<std::string, double>& auroc, const char* key) {
    const auto it = auroc.find(key);
    if (it == auroc.end()) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", it->second);
    return std::string(buf);
  };
  for (const et::MethodSummary& m : report.methods) {
    char acc[32];
    std::snprintf(acc, sizeof(acc), "%.4f", m.vote_accuracy);
    std::printf("%-26s %9s %9s %9s %10s %12s %13s\n", et::method_name(m.method).c_str(),
                cell(m.mean_pass_at_k, 1).c_str(), cell(m.mean_pass_at_k, 10).c_str(),
                cell(m.mean_pass_at_k, 20).c_str(), acc,
                metric_cell(m.auroc, et::kMetricPe).c_str(),
                metric_cell(m.auroc, et::kMetricLnPe).c_str());
  }
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_calibrate(const Settings& s) {
  const auto model = et::load_model(require(s, "model.kind", "scripted, ngram or attention"),
                                    require(s, "model.path", "path to a model file"));
  const et::Dataset calib =
      et::load_dataset(require(s, "calibration.dataset", "dataset providing prompts"));
  if (calib.problems.empty()) throw std::runtime_error("calibration dataset is empty");

  const std::uint64_t master_seed = as_u64(s, "seed");
  const et::SamplerConfig sampler = build_sampler(s, master_seed);
  const double q = as_double(s, "calibration.q", 80.0);
  const int max_tokens =
      static_cast<int>(as_int(s, "calibration.max_tokens", as_int(s, "tree.max_tokens", 256)));

  std::vector<std::vector<et::TokenId>> prompts;
  prompts.reserve(calib.problems.size());
  for (const et::ProblemRecord& p : calib.problems) {
    prompts.push_back(model->vocab().encode(p.prompt));
  }

  const et::CalibrationResult result =
      et::calibrate_thresholds_full(*model, prompts, sampler, q, max_tokens);

  const fs::path out_dir = resolve_out(s);
  Settings thresholds;
  thresholds["tau"] = et::format_double(result.thresholds.tau);
  thresholds["delta"] = et::format_double(result.thresholds.delta);
  thresholds["q"] = et::format_double(q);
  thresholds["entropy_pool_size"] = std::to_string(result.entropy_pool.size());
  thresholds["importance_pool_size"] = std::to_string(result.importance_pool.size());
  const fs::path out_file = out_dir / "thresholds.txt";
  et::write_text_atomic(out_file, settings_text(thresholds));

  const auto [lo, hi] =
      std::minmax_element(result.entropy_pool.begin(), result.entropy_pool.end());
  std::printf("pooled %zu entropies in [%.6f, %.6f], %zu importances\n",
              result.entropy_pool.size(), *lo, *hi, result.importance_pool.size());
  std::printf("tau = %s (q=%g)\ndelta = %s\nwrote %s\n",
              et::format_double(result.thresholds.tau).c_str(), q,
              et::format_double(result.thresholds.delta).c_str(), out_file.string().c_str());
  return 0;
}

int cmd_run(const Settings& s) {
  const std::string model_kind = require(s, "model.kind", "scripted, ngram or attention");
  const std::string model_path = require(s, "model.path", "path to a model file");
  const auto model = et::load_model(model_kind, model_path);
  const std::string dataset_path = require(s, "dataset", "path to a dataset (JSON lines)");
  const et::Dataset dataset = et::load_dataset(dataset_path);
  if (dataset.problems.empty()) throw std::runtime_error("dataset is empty: " + dataset_path);

  const std::uint64_t master_seed = as_u64(s, "seed");
  const int jobs = resolve_jobs(s);
  const et::SamplerConfig sampler = build_sampler(s, master_seed);
  const et::ExtractionRule rule = build_rule(s);

  std::vector<et::Method> methods;
  {
    std::istringstream in(get(s, "methods") ? *get(s, "methods") : "entropy_tree multi_chain");
    for (std::string name; in >> name;) {
      const et::Method m = et::method_from_name(name);
      if (std::find(methods.begin(), methods.end(), m) != methods.end()) {
        throw std::runtime_error("duplicate method: " + name);
      }
      methods.push_back(m);
    }
    if (methods.empty()) throw std::runtime_error("empty methods list");
  }
  const bool any_tree = std::any_of(methods.begin(), methods.end(),
                                    [](et::Method m) { return m != et::Method::kMultiChain; });

  // Thresholds: a calibrate-produced file, overridable by explicit keys.
  double tau = 0.0, delta = 0.0;
  bool have_tau = false;
  if (const std::string* file = get(s, "thresholds")) {
    const Settings t = et::load_key_values(*file);
    tau = as_double(t, "tau", 0.0);
    delta = as_double(t, "delta", 0.0);
    if (!get(t, "tau")) throw std::runtime_error("thresholds file lacks 'tau': " + *file);
    have_tau = true;
  }
  if (get(s, "tree.tau")) {
    tau = as_double(s, "tree.tau", 0.0);
    have_tau = true;
  }
  if (get(s, "tree.delta")) delta = as_double(s, "tree.delta", 0.0);
  if (any_tree && !have_tau) {
    throw std::runtime_error(
        "no entropy threshold configured: run `entropy-tree calibrate` and pass the produced "
        "file via --thresholds, or set --tau explicitly");
  }

  et::BranchConfig config;
  config.tau = tau;
  config.delta = delta;
  config.b = static_cast<int>(as_int(s, "tree.b", 2));
  config.n_tree = static_cast<int>(as_int(s, "tree.n_tree", 20));
  config.max_tokens = static_cast<int>(as_int(s, "tree.max_tokens", 256));
  config.sampler = sampler;

  const int n_chains = static_cast<int>(as_int(s, "n_chains", config.n_tree));
  et::AblationOptions ablation;
  ablation.late_percentile_q = as_double(s, "ablation.late_q", 90.0);
  if (get(s, "ablation.matched_rate")) {
    ablation.matched_rate = as_double(s, "ablation.matched_rate", 0.0);
  }
  const bool dump_trees = as_bool(s, "dump_trees", false);
  if (dump_trees &&
      std::find(methods.begin(), methods.end(), et::Method::kEntropyTree) == methods.end()) {
    throw std::runtime_error("--dump-trees needs the entropy_tree method");
  }

  et::EvalReport report;
  bool first = true;
  for (const et::Method method : methods) {
    et::EvalReport one;
    switch (method) {
      case et::Method::kEntropyTree:
        one = et::run_entropy_tree(dataset, *model, config, rule, master_seed, jobs);
        break;
      case et::Method::kMultiChain:
        one = et::run_multi_chain(dataset, *model, n_chains, sampler, rule, master_seed,
                                  config.max_tokens, jobs);
        break;
      case et::Method::kAblationLatePercentile:
        one = et::run_ablation(dataset, *model, config, et::AblationMode::kLatePercentile, rule,
                               master_seed, ablation, jobs);
        break;
      case et::Method::kAblationRandomBranch:
        one = et::run_ablation(dataset, *model, config, et::AblationMode::kRandomBranch, rule,
                               master_seed, ablation, jobs);
        break;
    }
    if (first) {
      report = std::move(one);
      first = false;
    } else {
      et::merge_report(report, std::move(one));
    }
  }

  // Echo the fully resolved configuration for exact reruns.
  Settings echo;
  echo["model.kind"] = model_kind;
  echo["model.path"] = model_path;
  echo["dataset"] = dataset_path;
  echo["seed"] = std::to_string(master_seed);
  echo["jobs"] = std::to_string(jobs);
  {
    std::string names;
    for (const et::Method m : methods) {
      if (!names.empty()) names += ' ';
      names += et::method_name(m);
    }
    echo["methods"] = names;
  }
  echo["tree.tau"] = et::format_double(config.tau);
  echo["tree.delta"] = et::format_double(config.delta);
  echo["tree.b"] = std::to_string(config.b);
  echo["tree.n_tree"] = std::to_string(config.n_tree);
  echo["tree.max_tokens"] = std::to_string(config.max_tokens);
  echo["n_chains"] = std::to_string(n_chains);
  echo["sampler.strategy"] = et::strategy_name(sampler.strategy);
  echo["sampler.k"] = std::to_string(sampler.k);
  echo["sampler.p"] = et::format_double(sampler.p);
  echo["sampler.temperature"] = et::format_double(sampler.temperature);
  echo["sampler.seed"] = std::to_string(sampler.seed);
  echo["extract.pattern"] = rule.pattern();
  echo["extract.policy"] = et::policy_name(rule.policy());
  echo["extract.fallback"] = et::fallback_name(rule.fallback());
  echo["ablation.late_q"] = et::format_double(ablation.late_percentile_q);
  if (ablation.matched_rate) {
    echo["ablation.matched_rate"] = et::format_double(*ablation.matched_rate);
  }
  echo["dump_trees"] = dump_trees ? "true" : "false";
  report.config_snapshot = echo;
  report.config_snapshot["dataset.problems"] = std::to_string(dataset.problems.size());

  const fs::path out_dir = resolve_out(s);
  et::write_text_atomic(out_dir / "report.jsonl", et::report_to_jsonl(report));
  et::write_text_atomic(out_dir / "passk.csv", et::passk_csv(report));
  et::write_text_atomic(out_dir / "auroc.csv", et::auroc_csv(report));
  et::write_text_atomic(out_dir / "config.txt", settings_text(echo));

  if (dump_trees) {
    for (const et::ProblemRecord& p : dataset.problems) {
      const auto prompt = model->vocab().encode(p.prompt);
      const std::uint64_t seed =
          et::hash_combine(et::hash_combine(master_seed, et::hash_str(p.id)), 0);
      const et::DecodingTree tree = et::decode_tree(*model, prompt, config, seed);
      et::write_text_atomic(out_dir / "trees" / (p.id + ".json"), et::tree_to_json(tree));
    }
  }

  print_summary(report);
  std::printf("wrote %s\n", (out_dir / "report.jsonl").string().c_str());
  return 0;
}

int cmd_train_ngram(const Settings& s) {
  const std::string corpus_path = require(s, "corpus", "whitespace-tokenized text file");
  std::vector<std::vector<std::string>> corpus;
  {
    std::istringstream in(read_file(corpus_path));
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::vector<std::string> tokens;
      for (std::string tok; ls >> tok;) tokens.push_back(std::move(tok));
      if (!tokens.empty()) corpus.push_back(std::move(tokens));
    }
  }
  if (corpus.empty()) throw std::runtime_error("corpus is empty: " + corpus_path);

  const int order = static_cast<int>(as_int(s, "order", 2));
  const double alpha = as_double(s, "alpha", 1.0);
  const et::NGramModel model = et::train_ngram(corpus, order, alpha);

  const std::string out_path = require(s, "model.out", "where to write the model file");
  et::save_ngram(model, out_path);
  std::printf("trained order-%d model: %d tokens, %zu contexts, alpha=%s\nwrote %s\n",
              model.order(), model.vocab().size(), model.counts().size(),
              et::format_double(model.alpha()).c_str(), out_path.c_str());
  return 0;
}

int cmd_report(const Settings& s) {
  const std::string in_path = require(s, "report", "path to a report.jsonl");
  const et::EvalReport report = et::report_from_jsonl(read_file(in_path));
  const fs::path out_dir = resolve_out(s);
  et::write_text_atomic(out_dir / "passk.csv", et::passk_csv(report));
  et::write_text_atomic(out_dir / "auroc.csv", et::auroc_csv(report));
  print_summary(report);
  std::printf("wrote %s and %s\n", (out_dir / "passk.csv").string().c_str(),
              (out_dir / "auroc.csv").string().c_str());
  return 0;
}

void bind_model_flags(ConfigCommand& c) {
  c.bind("--model-kind", "model.kind", "backend kind: scripted, ngram or attention");
  c.bind("--model-path", "model.path", "model file path");
}

void bind_sampler_flags(ConfigCommand& c) {
  c.bind("--strategy", "sampler.strategy", "greedy, top_k, top_p or top_k_then_top_p");
  c.bind("--top-k", "sampler.k", "top-k truncation (0 = whole vocabulary)");
  c.bind("--top-p", "sampler.p", "nucleus mass in (0,1]");
  c.bind("--temperature", "sampler.temperature", "softmax temperature > 0");
  c.bind("--sampler-seed", "sampler.seed", "sampler seed (defaults to --seed)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-gated tree decoding over pluggable token-level backends"};
  app.require_subcommand(1);

  CLI::App* cal = app.add_subcommand("calibrate", "pool per-token statistics, write thresholds");
  ConfigCommand cal_cfg(cal);
  bind_model_flags(cal_cfg);
  bind_sampler_flags(cal_cfg);
  cal_cfg.bind("--dataset", "calibration.dataset", "calibration dataset (JSON lines)");
  cal_cfg.bind("--q", "calibration.q", "percentile in (0,100], default 80");
  cal_cfg.bind("--max-tokens", "calibration.max_tokens", "chain length cap, default 256");
  cal_cfg.bind("--seed", "seed", "master seed (required)");
  cal_cfg.bind("--out", "out", "output directory");

  CLI::App* run = app.add_subcommand("run", "decode a dataset and write report + CSVs");
  ConfigCommand run_cfg(run);
  bind_model_flags(run_cfg);
  bind_sampler_flags(run_cfg);
  run_cfg.bind("--dataset", "dataset", "dataset file (JSON lines)");
  run_cfg.bind("--methods", "methods",
               "space-separated: entropy_tree multi_chain ablation_late_percentile "
               "ablation_random_branch");
  run_cfg.bind("--thresholds", "thresholds", "thresholds file from `calibrate`");
  run_cfg.bind("--tau", "tree.tau", "entropy threshold (overrides --thresholds)");
  run_cfg.bind("--delta", "tree.delta", "importance threshold (overrides --thresholds)");
  run_cfg.bind("--b", "tree.b", "branching factor, default 2");
  run_cfg.bind("--n-tree", "tree.n_tree", "leaf budget, default 20");
  run_cfg.bind("--max-tokens", "tree.max_tokens", "generation cap, default 256");
  run_cfg.bind("--n-chains", "n_chains", "chains for multi_chain, default = n_tree");
  run_cfg.bind("--pattern", "extract.pattern", "answer regex with one capture group");
  run_cfg.bind("--policy", "extract.policy", "last_match or first_match");
  run_cfg.bind("--fallback", "extract.fallback", "last_number or none");
  run_cfg.bind("--late-q", "ablation.late_q", "late-calibration percentile, default 90");
  run_cfg.bind("--matched-rate", "ablation.matched_rate",
               "random-branch rate (default: measured from a paired run)");
  run_cfg.bind("--jobs", "jobs", "worker threads over problems, default 1");
  run_cfg.bind("--seed", "seed", "master seed (required)");
  run_cfg.bind("--out", "out", "output directory");
  run_cfg.bind_flag("--dump-trees", "dump_trees", "write trees/<id>.json per problem");

  CLI::App* train = app.add_subcommand("train-ngram", "fit an add-alpha n-gram model");
  ConfigCommand train_cfg(train);
  train_cfg.bind("--corpus", "corpus", "whitespace-tokenized corpus, one sequence per line");
  train_cfg.bind("--order", "order", "n-gram order >= 1, default 2");
  train_cfg.bind("--alpha", "alpha", "additive smoothing > 0, default 1");
  train_cfg.bind("--model-out", "model.out", "output model file");

  CLI::App* rep = app.add_subcommand("report", "re-render CSVs from a stored report");
  ConfigCommand rep_cfg(rep);
  rep_cfg.bind("--report", "report", "report.jsonl produced by `run`");
  rep_cfg.bind("--out", "out", "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(cal)) return cmd_calibrate(cal_cfg.resolve());
    if (app.got_subcommand(run)) return cmd_run(run_cfg.resolve());
    if (app.got_subcommand(train)) return cmd_train_ngram(train_cfg.resolve());
    if (app.got_subcommand(rep)) return cmd_report(rep_cfg.resolve());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
