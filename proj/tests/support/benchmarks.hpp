#pragma once

// Synthetic models, datasets and structural checks shared by the unit and
// acceptance suites.

#include <cmath>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "entropy_tree/common.hpp"
#include "entropy_tree/eval.hpp"
#include "entropy_tree/model.hpp"
#include "entropy_tree/tree.hpp"

namespace bench {

using namespace entropy_tree;

inline TokenDistribution sparse_dist(int v, std::initializer_list<std::pair<int, double>> mass) {
  TokenDistribution d;
  d.probs.assign(v, 0.0);
  for (const auto& [id, p] : mass) d.probs[id] = p;
  return d;
}

// Single high-entropy fork: the gold answer sits behind the second-ranked
// root token with probability q_correct; every other step is deterministic.
// Leaf texts are "A ANSWER: wrong" and "B ANSWER: right".
inline ScriptedModel fork_model(double q_correct = 0.05) {
  Vocabulary vocab({"A", "B", "ANSWER:", "right", "wrong", "EOS"}, 5);
  const int v = vocab.size();
  ScriptedModel::Table table;
  table[{}] = {sparse_dist(v, {{0, 1.0 - q_correct}, {1, q_correct}}), std::nullopt};
  table[{0}] = {sparse_dist(v, {{2, 1.0}}), std::nullopt};
  table[{0, 2}] = {sparse_dist(v, {{4, 1.0}}), std::nullopt};
  table[{1}] = {sparse_dist(v, {{2, 1.0}}), std::nullopt};
  table[{1, 2}] = {sparse_dist(v, {{3, 1.0}}), std::nullopt};
  return ScriptedModel(std::move(vocab), std::move(table));
}

inline Dataset fork_dataset() {
  Dataset d;
  d.problems.push_back({"fork-0", "", "right"});
  return d;
}

// Entropy of the fork_model root step.
inline double fork_entropy(double q_correct = 0.05) {
  const double a = 1.0 - q_correct;
  return -(a * std::log(a) + q_correct * std::log(q_correct));
}

// 60 problems: 20 "hard" two-way forks where the tied vote lands on the
// wrong answer, 40 "easy" deterministic problems. Separates methods by how
// well predictive entropy flags the hard mistakes.
inline ScriptedModel mixed_model() {
  std::vector<std::string> tokens;
  for (int i = 0; i < 60; ++i) tokens.push_back("q" + std::to_string(i));
  for (const char* t : {"A", "B", "ANSWER:", "right", "wrong", "EOS"}) tokens.emplace_back(t);
  const int a = 60, b = 61, marker = 62, right = 63, wrong = 64, eos = 65;
  Vocabulary vocab(std::move(tokens), eos);
  const int v = vocab.size();

  ScriptedModel::Table table;
  for (int i = 0; i < 20; ++i) {
    table[{i}] = {sparse_dist(v, {{a, 0.5}, {b, 0.5}}), std::nullopt};
    table[{i, a}] = {sparse_dist(v, {{marker, 1.0}}), std::nullopt};
    table[{i, a, marker}] = {sparse_dist(v, {{wrong, 1.0}}), std::nullopt};
    table[{i, b}] = {sparse_dist(v, {{marker, 1.0}}), std::nullopt};
    table[{i, b, marker}] = {sparse_dist(v, {{right, 1.0}}), std::nullopt};
  }
  for (int i = 20; i < 60; ++i) {
    table[{i}] = {sparse_dist(v, {{marker, 1.0}}), std::nullopt};
    table[{i, marker}] = {sparse_dist(v, {{right, 1.0}}), std::nullopt};
  }
  return ScriptedModel(std::move(vocab), std::move(table));
}

inline Dataset mixed_dataset() {
  Dataset d;
  for (int i = 0; i < 20; ++i) {
    d.problems.push_back(
        {"hard-" + std::to_string(i), "q" + std::to_string(i), "right"});
  }
  for (int i = 20; i < 60; ++i) {
    d.problems.push_back(
        {"easy-" + std::to_string(i), "q" + std::to_string(i), "right"});
  }
  return d;
}

// One main line m1..m10 whose step entropy rises strictly with position:
// the off-token probability is 0.02 + 0.03*t. Off-line prefixes terminate.
inline ScriptedModel monotone_model() {
  std::vector<std::string> tokens{"s"};
  for (int t = 1; t <= 10; ++t) tokens.push_back("m" + std::to_string(t));
  tokens.emplace_back("alt");
  tokens.emplace_back("EOS");
  Vocabulary vocab(std::move(tokens), 12);
  const int v = vocab.size();

  ScriptedModel::Table table;
  std::vector<TokenId> prefix{0};
  for (int t = 1; t <= 10; ++t) {
    const double eps = 0.02 + 0.03 * t;
    table[prefix] = {sparse_dist(v, {{t, 1.0 - eps}, {11, eps}}), std::nullopt};
    prefix.push_back(t);
  }
  // Importance-free everywhere, fallback included: this model exercises the
  // entropy gate alone.
  ScriptedEntry fallback{sparse_dist(v, {{12, 1.0}}), std::nullopt};
  return ScriptedModel(std::move(vocab), std::move(table), std::move(fallback));
}

inline Dataset monotone_dataset() {
  Dataset d;
  d.problems.push_back({"mono-0", "s", "none"});
  return d;
}

// Entropy of the monotone model's step t (1-based).
inline double monotone_entropy(int t) {
  const double eps = 0.02 + 0.03 * t;
  return -((1.0 - eps) * std::log(1.0 - eps) + eps * std::log(eps));
}

// ---------------------------------------------------------------------------
// Randomized models for the invariant suite

inline ScriptedModel random_scripted(Rng& rng) {
  const int v = 2 + static_cast<int>(rng.next_u64() % 7);  // 2..8
  std::vector<std::string> tokens;
  for (int i = 0; i + 1 < v; ++i) tokens.push_back("t" + std::to_string(i));
  tokens.emplace_back("EOS");
  Vocabulary vocab(std::move(tokens), v - 1);

  auto random_entry = [&] {
    ScriptedEntry entry;
    entry.dist.probs.assign(v, 0.0);
    double sum = 0.0;
    for (int i = 0; i < v; ++i) {
      if (rng.next_double() < 0.3) continue;  // sparse support
      entry.dist.probs[i] = 0.05 + rng.next_double();
      sum += entry.dist.probs[i];
    }
    if (sum == 0.0) {
      entry.dist.probs[rng.next_u64() % v] = sum = 1.0;
    }
    for (double& p : entry.dist.probs) p /= sum;
    if (rng.next_double() < 0.5) entry.importance = rng.next_double();
    return entry;
  };

  ScriptedModel::Table table;
  std::vector<std::vector<TokenId>> prefixes{{}};
  for (TokenId x = 0; x < v; ++x) {
    prefixes.push_back({x});
    for (TokenId y = 0; y < v; ++y) prefixes.push_back({x, y});
  }
  for (const auto& prefix : prefixes) {
    if (rng.next_double() < 0.8) table[prefix] = random_entry();
  }
  return ScriptedModel(std::move(vocab), std::move(table), random_entry());
}

inline BranchConfig random_branch_config(Rng& rng, int vocab_size) {
  BranchConfig config;
  config.tau = rng.next_double() * std::log(static_cast<double>(vocab_size)) * 1.1;
  config.delta = rng.next_double() < 0.5 ? 0.0 : rng.next_double();
  config.b = 2 + static_cast<int>(rng.next_u64() % 4);
  config.n_tree = 1 + static_cast<int>(rng.next_u64() % 24);
  config.max_tokens = 1 + static_cast<int>(rng.next_u64() % 32);
  switch (rng.next_u64() % 4) {
    case 0: config.sampler.strategy = SampleStrategy::kGreedy; break;
    case 1: config.sampler.strategy = SampleStrategy::kTopK; break;
    case 2: config.sampler.strategy = SampleStrategy::kTopP; break;
    default: config.sampler.strategy = SampleStrategy::kTopKThenTopP; break;
  }
  config.sampler.k = static_cast<int>(rng.next_u64() % (vocab_size + 1));
  config.sampler.p = rng.next_double() < 0.5 ? 1.0 : 0.3 + 0.7 * rng.next_double();
  config.sampler.temperature = rng.next_double() < 0.5 ? 1.0 : 0.5 + 1.5 * rng.next_double();
  config.sampler.seed = rng.next_u64();
  return config;
}

// ---------------------------------------------------------------------------
// Structural invariants of a decoded tree. Throws std::logic_error with a
// description of the first violation.

inline void check_tree_invariants(const DecodingTree& tree, const BranchConfig& config,
                                  bool entropy_gated = true) {
  auto fail = [](const std::string& what) { throw std::logic_error("tree invariant: " + what); };
  const int n = static_cast<int>(tree.nodes.size());
  if (n < 1 || tree.nodes[0].token != -1) fail("missing root");

  std::vector<int> parent_count(n, 0);
  for (int id = 0; id < n; ++id) {
    const TreeNode& node = tree.nodes[id];
    std::set<TokenId> child_tokens;
    for (int child : node.children) {
      if (child <= id || child >= n) fail("child id out of order");
      ++parent_count[child];
      if (!child_tokens.insert(tree.nodes[child].token).second) {
        fail("duplicate sibling token");
      }
    }
    const int width = static_cast<int>(node.children.size());
    if (node.branched && (width < 2 || width > config.b)) fail("branched width out of [2, b]");
    if (!node.branched && width > 1) fail("unbranched node with multiple children");
    if (id > 0) {
      if (parent_count[id] != 1) fail("node without unique parent");
      if (!(tree.nodes[id].entropy >= 0.0)) fail("bad entropy annotation");
      if (!(tree.nodes[id].logprob <= 1e-12)) fail("positive logprob");
    }
  }

  const int leaves = tree.leaf_node_count();
  if (leaves < 1 || leaves > config.n_tree) fail("leaf budget violated");

  // Replay the forks in creation order and re-check the budget arithmetic;
  // after the budget is exhausted every node must revert to sampling.
  int running_leaves = 1;
  for (const TreeNode& node : tree.nodes) {
    if (!node.branched) continue;
    const int width = static_cast<int>(node.children.size());
    const int allowed = std::min(config.b, config.n_tree - running_leaves + 1);
    if (width > allowed) fail("fork wider than the remaining budget");
    running_leaves += width - 1;
  }
  if (running_leaves != leaves) fail("fork arithmetic does not reproduce the leaf count");

  if (entropy_gated) {
    for (const TreeNode& node : tree.nodes) {
      if (!node.branched) continue;
      const TreeNode& child = tree.nodes[node.children.front()];
      if (!(child.entropy >= config.tau)) fail("fork below the entropy threshold");
      if (child.importance && !(*child.importance >= config.delta)) {
        fail("fork below the importance threshold");
      }
    }
  }

  // Leaves must be distinct sequences, end properly, and carry consistent
  // bookkeeping. Shared prefixes are structural, so only check distinctness.
  std::set<std::vector<TokenId>> leaf_tokens;
  for (const LeafSequence& leaf : collect_leaves(tree)) {
    if (leaf.length < 1 || leaf.length > config.max_tokens) fail("leaf length out of range");
    if (leaf.tokens.back() != tree.vocab.eos_id() && leaf.length != config.max_tokens) {
      fail("leaf neither finished nor at the cap");
    }
    if (!leaf_tokens.insert(leaf.tokens).second) fail("duplicate leaf sequence");
    for (int pos : leaf.branch_positions) {
      if (pos < 1 || pos > leaf.length) fail("branch position out of range");
    }
  }
  if (static_cast<int>(leaf_tokens.size()) != leaves) fail("collect_leaves count mismatch");
}

}  // namespace bench
