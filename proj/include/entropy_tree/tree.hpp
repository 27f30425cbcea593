#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "entropy_tree/model.hpp"
#include "entropy_tree/sampling.hpp"

namespace entropy_tree {

struct BranchConfig {
  double tau = 0.0;    // entropy threshold, nats
  double delta = 0.0;  // importance threshold, [0,1]
  int b = 2;           // branching factor
  int n_tree = 1;      // leaf budget
  int max_tokens = 256;
  SamplerConfig sampler;

  void validate() const;
};

struct TreeNode {
  TokenId token = -1;  // -1 on the root, which holds only the prompt
  double entropy = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> importance;
  double logprob = std::numeric_limits<double>::quiet_NaN();
  bool branched = false;  // expansion of this node forked into >= 2 children
  std::vector<int> children;
};

enum class FinishReason { kEos, kMaxTokens };

// Traversal bookkeeping for one root-to-leaf generation in progress.
struct PathState {
  std::vector<TokenId> tokens;  // generated suffix, prompt excluded
  double cum_logprob = 0.0;
  bool finished = false;
  std::optional<FinishReason> finish_reason;
};

// One completed root-to-leaf generation.
struct LeafSequence {
  std::vector<TokenId> tokens;
  std::string text;  // space-joined tokens, trailing EOS dropped
  double cum_logprob = 0.0;
  int length = 0;
  std::vector<int> branch_positions;  // 1-based positions decided at a fork
};

// Shared-prefix tree of generated tokens. nodes[0] is the root; node order
// is creation order, which is deterministic for a fixed decode.
struct DecodingTree {
  Vocabulary vocab;
  std::vector<TokenId> prompt;
  std::vector<TreeNode> nodes;

  int leaf_node_count() const;
  int generated_node_count() const { return static_cast<int>(nodes.size()) - 1; }
  int branched_node_count() const;
};

// Entropy gate: candidate iff H_t >= tau (boundary inclusive).
bool is_branch_candidate(double entropy, double tau);

// Dual gate: entropy >= tau and importance >= delta. Backends that report no
// importance pass the importance gate.
bool should_branch(double entropy, std::optional<double> importance, double tau, double delta);

// Children permitted for one fork under the leaf budget: min(b, remaining+1).
// A return of 1 means no branching.
int allowed_children(int current_leaf_count, int b, int n_tree);

// The c most probable tokens with their log-probabilities, descending, ties
// to the lowest id. Zero-probability tokens never qualify, so the result may
// be shorter than c.
std::vector<std::pair<TokenId, double>> branch_tokens(const TokenDistribution& dist, int c);

// Branch decision rule for one step. Entropy/importance gating is the
// default; the Bernoulli variant exists for the random-branching ablation.
struct BranchRule {
  enum class Kind { kEntropyGated, kRandomMatched };
  Kind kind = Kind::kEntropyGated;
  double random_rate = 0.0;  // per-token fork probability for kRandomMatched
};

// Entropy-gated tree decoding: breadth-first expansion of active paths
// (shortest generated length first, FIFO among equals), forking into the
// top-b tokens wherever both gates pass and the leaf budget allows, plain
// sampling elsewhere. Deterministic for fixed inputs at any worker count.
DecodingTree decode_tree(const ModelBackend& model, std::span<const TokenId> prompt,
                         const BranchConfig& config, std::uint64_t master_seed,
                         int workers = 1);

DecodingTree decode_tree_with_rule(const ModelBackend& model, std::span<const TokenId> prompt,
                                   const BranchConfig& config, std::uint64_t master_seed,
                                   const BranchRule& rule, int workers = 1);

// One LeafSequence per leaf, in depth-first child order.
std::vector<LeafSequence> collect_leaves(const DecodingTree& tree);

// Single sampled chain; equivalent to decode_tree with n_tree = 1 under the
// same seed.
LeafSequence decode_chain(const ModelBackend& model, std::span<const TokenId> prompt,
                          const SamplerConfig& sampler, int max_tokens, std::uint64_t seed);

// Round-tripping JSON dump of a decoded tree.
std::string tree_to_json(const DecodingTree& tree);
DecodingTree tree_from_json(const std::string& text);

}  // namespace entropy_tree
