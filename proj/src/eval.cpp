#include "entropy_tree/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "entropy_tree/common.hpp"
#include "entropy_tree/io.hpp"

namespace entropy_tree {

namespace {

using u128 = unsigned __int128;

u128 gcd128(u128 a, u128 b) {
  while (b != 0) {
    const u128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

void check_pass_at_k_args(int n, int c, int k) {
  if (n < 1 || c < 0 || c > n) throw std::invalid_argument("pass@k needs 0 <= c <= n, n >= 1");
  if (k < 1 || k > n) throw std::invalid_argument("pass@k needs 1 <= k <= n");
}

}  // namespace

std::pair<std::uint64_t, std::uint64_t> pass_at_k_fraction(int n, int c, int k) {
  check_pass_at_k_args(n, c, k);
  if (n > 62) throw std::invalid_argument("exact pass@k fraction limited to n <= 62");
  if (n - c < k) return {1, 1};
  // C(n-c,k)/C(n,k) = prod_{i<k} (n-c-i)/(n-i), reduced at every step so the
  // running numerator and denominator stay far below the 128-bit ceiling.
  u128 num = 1, den = 1;
  for (int i = 0; i < k; ++i) {
    num *= static_cast<unsigned>(n - c - i);
    den *= static_cast<unsigned>(n - i);
    const u128 g = gcd128(num, den);
    num /= g;
    den /= g;
  }
  u128 pass_num = den - num;
  const u128 g = gcd128(pass_num == 0 ? den : pass_num, den);
  pass_num /= g;
  const u128 pass_den = den / g;
  return {static_cast<std::uint64_t>(pass_num), static_cast<std::uint64_t>(pass_den)};
}

double pass_at_k(int n, int c, int k) {
  check_pass_at_k_args(n, c, k);
  if (n - c < k) return 1.0;
  if (c == 0) return 0.0;
  if (n <= 62) {
    const auto [num, den] = pass_at_k_fraction(n, c, k);
    return static_cast<double>(num) / static_cast<double>(den);
  }
  double log_ratio = 0.0;
  for (int i = 0; i < k; ++i) {
    log_ratio += std::log(static_cast<double>(n - c - i)) - std::log(static_cast<double>(n - i));
  }
  return std::clamp(1.0 - std::exp(log_ratio), 0.0, 1.0);
}

double auroc(std::span<const ScoredOutcome> outcomes) {
  std::uint64_t positives = 0, negatives = 0;  // incorrect / correct
  for (const auto& o : outcomes) (o.incorrect ? positives : negatives)++;
  if (positives == 0 || negatives == 0) {
    throw std::invalid_argument("AUROC undefined: need both correct and incorrect outcomes");
  }

  std::vector<ScoredOutcome> sorted(outcomes.begin(), outcomes.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredOutcome& a, const ScoredOutcome& b) { return a.uncertainty < b.uncertainty; });

  std::uint64_t wins = 0, ties = 0, negatives_below = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    std::uint64_t group_pos = 0, group_neg = 0;
    while (j < sorted.size() && sorted[j].uncertainty == sorted[i].uncertainty) {
      (sorted[j].incorrect ? group_pos : group_neg)++;
      ++j;
    }
    ties += group_pos * group_neg;
    wins += group_pos * negatives_below;
    negatives_below += group_neg;
    i = j;
  }
  return static_cast<double>(2 * wins + ties) / (2.0 * positives * negatives);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty list");
  if (!(q > 0.0 && q <= 100.0)) throw std::invalid_argument("percentile q must be in (0,100]");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  // Multiply before dividing: q/100 alone can round up (e.g. 80/100 * 10 is
  // not exactly 8) and shift the rank.
  auto rank = static_cast<std::int64_t>(std::ceil(q * n / 100.0));
  rank = std::clamp<std::int64_t>(rank, 1, values.size());
  return values[static_cast<std::size_t>(rank - 1)];
}

CalibrationResult calibrate_thresholds_full(const ModelBackend& model,
                                            const std::vector<std::vector<TokenId>>& prompts,
                                            const SamplerConfig& sampler, double percentile_q,
                                            int max_tokens) {
  if (prompts.empty()) throw std::invalid_argument("no calibration prompts");
  CalibrationResult result;
  BranchConfig config;
  config.n_tree = 1;
  config.max_tokens = max_tokens;
  config.sampler = sampler;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const DecodingTree tree =
        decode_tree(model, prompts[i], config, hash_combine(sampler.seed, i));
    for (std::size_t n = 1; n < tree.nodes.size(); ++n) {
      result.entropy_pool.push_back(tree.nodes[n].entropy);
      if (tree.nodes[n].importance) result.importance_pool.push_back(*tree.nodes[n].importance);
    }
  }
  if (result.entropy_pool.empty()) throw std::runtime_error("calibration generated no tokens");
  result.thresholds.tau = percentile(result.entropy_pool, percentile_q);
  result.thresholds.delta =
      result.importance_pool.empty() ? 0.0 : percentile(result.importance_pool, percentile_q);
  return result;
}

Thresholds calibrate_thresholds(const ModelBackend& model,
                                const std::vector<std::vector<TokenId>>& prompts,
                                const SamplerConfig& sampler, double percentile_q,
                                int max_tokens) {
  return calibrate_thresholds_full(model, prompts, sampler, percentile_q, max_tokens).thresholds;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kEntropyTree: return "entropy_tree";
    case Method::kMultiChain: return "multi_chain";
    case Method::kAblationLatePercentile: return "ablation_late_percentile";
    case Method::kAblationRandomBranch: return "ablation_random_branch";
  }
  throw std::logic_error("bad Method");
}

Method method_from_name(const std::string& name) {
  if (name == "entropy_tree") return Method::kEntropyTree;
  if (name == "multi_chain") return Method::kMultiChain;
  if (name == "ablation_late_percentile") return Method::kAblationLatePercentile;
  if (name == "ablation_random_branch") return Method::kAblationRandomBranch;
  throw std::invalid_argument("unknown method: " + name);
}

// ---------------------------------------------------------------------------
// Aggregation

std::vector<double> mean_pass_at_k_curve(std::span<const SampleRecord> records, int budget) {
  if (records.empty()) throw std::invalid_argument("no records to aggregate");
  if (budget < 1) throw std::invalid_argument("budget must be >= 1");
  std::vector<double> curve(budget, 0.0);
  for (int k = 1; k <= budget; ++k) {
    double sum = 0.0;
    for (const SampleRecord& r : records) sum += pass_at_k(r.n, r.c, std::min(k, r.n));
    curve[k - 1] = sum / static_cast<double>(records.size());
  }
  return curve;
}

std::map<std::string, double> auroc_by_metric(std::span<const SampleRecord> records) {
  std::map<std::string, std::vector<ScoredOutcome>> by_metric;
  for (const SampleRecord& r : records) {
    for (const auto& [key, value] : r.metrics) {
      by_metric[key].push_back(ScoredOutcome{value, !r.voted_correct});
    }
  }
  std::map<std::string, double> out;
  for (const auto& [key, outcomes] : by_metric) {
    try {
      out[key] = auroc(outcomes);
    } catch (const std::invalid_argument&) {
      // single-class or partial coverage: AUROC undefined for this metric
    }
  }
  return out;
}

double vote_accuracy(std::span<const SampleRecord> records) {
  if (records.empty()) throw std::invalid_argument("no records to aggregate");
  double sum = 0.0;
  for (const SampleRecord& r : records) sum += r.voted_correct ? 1.0 : 0.0;
  return sum / static_cast<double>(records.size());
}

void merge_report(EvalReport& base, EvalReport&& extra) {
  for (auto& kv : extra.config_snapshot) base.config_snapshot.insert(std::move(kv));
  std::move(extra.methods.begin(), extra.methods.end(), std::back_inserter(base.methods));
  std::move(extra.records.begin(), extra.records.end(), std::back_inserter(base.records));
}

// ---------------------------------------------------------------------------
// Experiment drivers

namespace {

std::uint64_t problem_seed(std::uint64_t master_seed, const std::string& id) {
  return hash_combine(master_seed, hash_str(id));
}

template <typename Fn>
void for_each_problem(std::size_t count, int jobs, Fn&& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto drain = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(jobs, count);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_threads; ++w) pool.emplace_back(drain);
  drain();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string trim_copy(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

SampleRecord assess(const ProblemRecord& problem, Method method,
                    const std::vector<LeafSequence>& leaves, const ExtractionRule& rule) {
  std::vector<std::optional<std::string>> answers;
  answers.reserve(leaves.size());
  for (const LeafSequence& leaf : leaves) answers.push_back(extract_answer(leaf.text, rule));

  const std::string gold = trim_copy(problem.gold);
  const AnswerDistribution dist = answer_distribution(answers);
  const double pe = predictive_entropy(dist);
  const auto vote = majority_vote(answers);

  SampleRecord record;
  record.problem_id = problem.id;
  record.method = method;
  record.n = static_cast<int>(leaves.size());
  record.c = static_cast<int>(std::count_if(
      answers.begin(), answers.end(), [&](const auto& a) { return a && *a == gold; }));
  record.uncertainty = pe;
  record.voted_correct = vote && *vote == gold;
  record.voted = vote ? *vote : std::string(kNoAnswerKey);
  record.gold = gold;
  record.metrics[kMetricPe] = pe;
  record.metrics[kMetricLnPe] = ln_predictive_entropy(leaves);
  if (leaves.size() >= 2) record.metrics[kMetricLexsim] = lexical_similarity_uncertainty(leaves);
  return record;
}

double mean_branch_depth_of(const DecodingTree& tree) {
  std::vector<int> depth(tree.nodes.size(), 0);
  double sum = 0.0;
  int count = 0;
  for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
    for (int child : tree.nodes[n].children) depth[child] = depth[n] + 1;
    if (tree.nodes[n].branched) {
      // Depth of a fork = 1-based position of the token it decides.
      sum += depth[n] + 1;
      ++count;
    }
  }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / count;
}

std::map<std::string, std::string> sampler_params(const SamplerConfig& sampler) {
  return {
      {"sampler.strategy", strategy_name(sampler.strategy)},
      {"sampler.k", std::to_string(sampler.k)},
      {"sampler.p", format_double(sampler.p)},
      {"sampler.temperature", format_double(sampler.temperature)},
      {"sampler.seed", std::to_string(sampler.seed)},
  };
}

std::map<std::string, std::string> tree_params(const BranchConfig& config) {
  auto params = sampler_params(config.sampler);
  params.emplace("tree.tau", format_double(config.tau));
  params.emplace("tree.delta", format_double(config.delta));
  params.emplace("tree.b", std::to_string(config.b));
  params.emplace("tree.n_tree", std::to_string(config.n_tree));
  params.emplace("tree.max_tokens", std::to_string(config.max_tokens));
  return params;
}

// Shared body of the three tree-decoding drivers; they differ only in the
// method label, the branch rule and extra reported parameters.
EvalReport run_tree_driver(const Dataset& dataset, const ModelBackend& model,
                           const BranchConfig& config, const ExtractionRule& rule,
                           std::uint64_t master_seed, int jobs, Method method,
                           const BranchRule& branch_rule,
                           std::map<std::string, std::string> extra_params) {
  if (dataset.problems.empty()) throw std::invalid_argument("dataset is empty");
  config.validate();
  config.sampler.validate(model.vocab().size());

  EvalReport report;
  report.master_seed = master_seed;
  report.records.resize(dataset.problems.size());

  for_each_problem(dataset.problems.size(), jobs, [&](std::size_t i) {
    const ProblemRecord& problem = dataset.problems[i];
    try {
      const std::vector<TokenId> prompt = model.vocab().encode(problem.prompt);
      // Tree seed matches chain 0 of a multi-chain run on the same problem,
      // so an n_tree=1 tree replays that chain exactly.
      const std::uint64_t seed = hash_combine(problem_seed(master_seed, problem.id), 0);
      const DecodingTree tree = decode_tree_with_rule(model, prompt, config, seed, branch_rule);
      const auto leaves = collect_leaves(tree);
      SampleRecord record = assess(problem, method, leaves, rule);
      record.branch_count = tree.branched_node_count();
      record.tokens_generated = tree.generated_node_count();
      record.mean_branch_depth = mean_branch_depth_of(tree);
      report.records[i] = std::move(record);
    } catch (const std::exception& e) {
      throw std::runtime_error("problem '" + problem.id + "': " + e.what());
    }
  });

  MethodSummary summary;
  summary.method = method;
  summary.budget = config.n_tree;
  summary.mean_pass_at_k = mean_pass_at_k_curve(report.records, summary.budget);
  summary.auroc = auroc_by_metric(report.records);
  summary.vote_accuracy = vote_accuracy(report.records);
  summary.params = tree_params(config);
  for (auto& kv : extra_params) summary.params.insert(std::move(kv));

  report.config_snapshot = summary.params;
  report.config_snapshot.emplace("method", method_name(method));
  report.config_snapshot.emplace("dataset.problems", std::to_string(dataset.problems.size()));
  report.methods.push_back(std::move(summary));
  return report;
}

}  // namespace

EvalReport run_entropy_tree(const Dataset& dataset, const ModelBackend& model,
                            const BranchConfig& config, const ExtractionRule& rule,
                            std::uint64_t master_seed, int jobs) {
  return run_tree_driver(dataset, model, config, rule, master_seed, jobs, Method::kEntropyTree,
                         BranchRule{}, {});
}

EvalReport run_multi_chain(const Dataset& dataset, const ModelBackend& model, int n_chains,
                           const SamplerConfig& sampler, const ExtractionRule& rule,
                           std::uint64_t master_seed, int max_tokens, int jobs) {
  if (dataset.problems.empty()) throw std::invalid_argument("dataset is empty");
  if (n_chains < 1) throw std::invalid_argument("n_chains must be >= 1");
  sampler.validate(model.vocab().size());
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");

  EvalReport report;
  report.master_seed = master_seed;
  report.records.resize(dataset.problems.size());

  for_each_problem(dataset.problems.size(), jobs, [&](std::size_t i) {
    const ProblemRecord& problem = dataset.problems[i];
    try {
      const std::vector<TokenId> prompt = model.vocab().encode(problem.prompt);
      const std::uint64_t pseed = problem_seed(master_seed, problem.id);
      std::vector<LeafSequence> chains;
      chains.reserve(n_chains);
      for (int chain = 0; chain < n_chains; ++chain) {
        chains.push_back(
            decode_chain(model, prompt, sampler, max_tokens, hash_combine(pseed, chain)));
      }
      SampleRecord record = assess(problem, Method::kMultiChain, chains, rule);
      record.branch_count = 0;
      for (const LeafSequence& chain : chains) record.tokens_generated += chain.length;
      report.records[i] = std::move(record);
    } catch (const std::exception& e) {
      throw std::runtime_error("problem '" + problem.id + "': " + e.what());
    }
  });

  MethodSummary summary;
  summary.method = Method::kMultiChain;
  summary.budget = n_chains;
  summary.mean_pass_at_k = mean_pass_at_k_curve(report.records, summary.budget);
  summary.auroc = auroc_by_metric(report.records);
  summary.vote_accuracy = vote_accuracy(report.records);
  summary.params = sampler_params(sampler);
  summary.params.emplace("n_chains", std::to_string(n_chains));
  summary.params.emplace("max_tokens", std::to_string(max_tokens));

  report.config_snapshot = summary.params;
  report.config_snapshot.emplace("method", method_name(Method::kMultiChain));
  report.config_snapshot.emplace("dataset.problems", std::to_string(dataset.problems.size()));
  report.methods.push_back(std::move(summary));
  return report;
}

EvalReport run_ablation(const Dataset& dataset, const ModelBackend& model,
                        const BranchConfig& config, AblationMode mode,
                        const ExtractionRule& rule, std::uint64_t master_seed,
                        const AblationOptions& options, int jobs) {
  if (dataset.problems.empty()) throw std::invalid_argument("dataset is empty");

  if (mode == AblationMode::kLatePercentile) {
    std::vector<std::vector<TokenId>> prompts;
    prompts.reserve(dataset.problems.size());
    for (const ProblemRecord& p : dataset.problems) prompts.push_back(model.vocab().encode(p.prompt));
    const Thresholds thresholds = calibrate_thresholds(
        model, prompts, config.sampler, options.late_percentile_q, config.max_tokens);
    BranchConfig recalibrated = config;
    recalibrated.tau = thresholds.tau;
    recalibrated.delta = thresholds.delta;
    return run_tree_driver(dataset, model, recalibrated, rule, master_seed, jobs,
                           Method::kAblationLatePercentile, BranchRule{},
                           {{"ablation.percentile_q", format_double(options.late_percentile_q)}});
  }

  // Random branching at matched probability: the fork rate comes from a
  // paired entropy-guided run on the same dataset and seed unless the caller
  // supplies one explicitly.
  double rate = 0.0;
  if (options.matched_rate) {
    rate = *options.matched_rate;
    if (!(rate >= 0.0 && rate <= 1.0)) {
      throw std::invalid_argument("matched branch rate must be in [0,1]");
    }
  } else {
    const EvalReport paired = run_entropy_tree(dataset, model, config, rule, master_seed, jobs);
    std::int64_t branches = 0, tokens = 0;
    for (const SampleRecord& r : paired.records) {
      branches += r.branch_count;
      tokens += r.tokens_generated;
    }
    if (tokens <= 0) throw std::runtime_error("paired run generated no tokens");
    rate = static_cast<double>(branches) / static_cast<double>(tokens);
  }
  return run_tree_driver(dataset, model, config, rule, master_seed, jobs,
                         Method::kAblationRandomBranch,
                         BranchRule{BranchRule::Kind::kRandomMatched, rate},
                         {{"ablation.matched_rate", format_double(rate)}});
}

}  // namespace entropy_tree
