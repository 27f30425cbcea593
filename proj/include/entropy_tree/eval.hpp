#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "entropy_tree/tree.hpp"
#include "entropy_tree/uncertainty.hpp"

namespace entropy_tree {

// Unbiased pass@k estimator: 1 - C(n-c,k)/C(n,k). Exact rational arithmetic
// up to n = 62, log-space beyond.
double pass_at_k(int n, int c, int k);

// Reduced fraction form of pass@k for n <= 62; used by exact oracles.
std::pair<std::uint64_t, std::uint64_t> pass_at_k_fraction(int n, int c, int k);

struct ScoredOutcome {
  double uncertainty = 0.0;
  bool incorrect = false;
};

// Probability that a random incorrect outcome scores strictly above a random
// correct one, ties credited 1/2 (Mann-Whitney). Needs both classes.
double auroc(std::span<const ScoredOutcome> outcomes);

// Nearest-rank percentile: the ceil(q/100 * n)-th smallest value, q in (0,100].
double percentile(std::vector<double> values, double q);

struct Thresholds {
  double tau = 0.0;
  double delta = 0.0;
};

struct CalibrationResult {
  Thresholds thresholds;
  std::vector<double> entropy_pool;     // per-token H_t over all chains
  std::vector<double> importance_pool;  // per-token I_t where reported
};

// Plain chain decoding over the calibration prompts, pooling per-token
// entropy and importance globally; thresholds are the q-th percentile of
// each pool. Chain i is seeded from (sampler.seed, i).
CalibrationResult calibrate_thresholds_full(const ModelBackend& model,
                                            const std::vector<std::vector<TokenId>>& prompts,
                                            const SamplerConfig& sampler, double percentile_q,
                                            int max_tokens = 256);
Thresholds calibrate_thresholds(const ModelBackend& model,
                                const std::vector<std::vector<TokenId>>& prompts,
                                const SamplerConfig& sampler, double percentile_q,
                                int max_tokens = 256);

// ---------------------------------------------------------------------------
// Experiment drivers

struct ProblemRecord {
  std::string id;
  std::string prompt;  // whitespace-split into vocabulary tokens at run time
  std::string gold;
};

struct Dataset {
  std::vector<ProblemRecord> problems;
};

enum class Method { kEntropyTree, kMultiChain, kAblationLatePercentile, kAblationRandomBranch };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

// Uncertainty metric keys used in records, reports and CSVs. Semantic
// entropy and p(True) are reserved names only; no implementation fills them.
inline constexpr const char* kMetricPe = "pe";
inline constexpr const char* kMetricLnPe = "ln_pe";
inline constexpr const char* kMetricLexsim = "lexsim";
inline constexpr const char* kMetricSemanticEntropy = "semantic_entropy";
inline constexpr const char* kMetricPTrue = "p_true";

struct SampleRecord {
  std::string problem_id;
  Method method = Method::kEntropyTree;
  int n = 0;  // leaves or chains produced
  int c = 0;  // correct among them
  double uncertainty = 0.0;  // predictive entropy of the answer distribution
  bool voted_correct = false;
  std::string voted;  // kNoAnswerKey when the vote is empty
  std::string gold;
  std::map<std::string, double> metrics;  // defined uncertainty metrics only
  int branch_count = 0;
  int tokens_generated = 0;
  double mean_branch_depth = std::numeric_limits<double>::quiet_NaN();
};

struct MethodSummary {
  Method method = Method::kEntropyTree;
  int budget = 0;  // n_tree or chain count; pass@k columns span 1..budget
  std::vector<double> mean_pass_at_k;   // index k-1
  std::map<std::string, double> auroc;  // per metric, only where defined
  double vote_accuracy = 0.0;
  std::map<std::string, std::string> params;
};

struct EvalReport {
  std::uint64_t master_seed = 0;
  std::map<std::string, std::string> config_snapshot;
  std::vector<MethodSummary> methods;
  std::vector<SampleRecord> records;
};

// Appends the methods and records of `extra` onto `base`.
void merge_report(EvalReport& base, EvalReport&& extra);

// Aggregation used both by the drivers and by report re-rendering.
// pass@k columns clamp k to the produced n: a tree that exhausted its budget
// with n < k leaves contributes its all-leaves pass rate.
std::vector<double> mean_pass_at_k_curve(std::span<const SampleRecord> records, int budget);
std::map<std::string, double> auroc_by_metric(std::span<const SampleRecord> records);
double vote_accuracy(std::span<const SampleRecord> records);

// Entropy-Tree decoding over the dataset: one tree per problem, answers
// extracted from the leaves, predictive entropy as the uncertainty score.
EvalReport run_entropy_tree(const Dataset& dataset, const ModelBackend& model,
                            const BranchConfig& config, const ExtractionRule& rule,
                            std::uint64_t master_seed, int jobs = 1);

// Budget-matched baseline: n_chains independent sampled chains per problem.
EvalReport run_multi_chain(const Dataset& dataset, const ModelBackend& model, int n_chains,
                           const SamplerConfig& sampler, const ExtractionRule& rule,
                           std::uint64_t master_seed, int max_tokens = 256, int jobs = 1);

enum class AblationMode { kLatePercentile, kRandomBranch };

struct AblationOptions {
  double late_percentile_q = 90.0;
  // Per-token fork rate for the random-branching ablation. Unset means
  // "measure it from a paired entropy-guided run on the same inputs".
  std::optional<double> matched_rate;
};

EvalReport run_ablation(const Dataset& dataset, const ModelBackend& model,
                        const BranchConfig& config, AblationMode mode,
                        const ExtractionRule& rule, std::uint64_t master_seed,
                        const AblationOptions& options = {}, int jobs = 1);

}  // namespace entropy_tree
