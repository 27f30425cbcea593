#include "entropy_tree/tree.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "entropy_tree/common.hpp"
#include "json.hpp"

namespace entropy_tree {

void BranchConfig::validate() const {
  if (!(tau >= 0.0)) throw std::invalid_argument("tau must be >= 0");
  if (delta < 0.0 || delta > 1.0) throw std::invalid_argument("delta must be in [0,1]");
  if (b < 2) throw std::invalid_argument("branching factor b must be >= 2");
  if (n_tree < 1) throw std::invalid_argument("leaf budget n_tree must be >= 1");
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
}

int DecodingTree::leaf_node_count() const {
  int count = 0;
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    if (nodes[i].children.empty()) ++count;
  }
  return count;
}

int DecodingTree::branched_node_count() const {
  int count = 0;
  for (const TreeNode& n : nodes) {
    if (n.branched) ++count;
  }
  return count;
}

bool is_branch_candidate(double entropy, double tau) { return entropy >= tau; }

bool should_branch(double entropy, std::optional<double> importance, double tau, double delta) {
  if (entropy < tau) return false;
  return !importance.has_value() || *importance >= delta;
}

int allowed_children(int current_leaf_count, int b, int n_tree) {
  if (current_leaf_count < 1 || current_leaf_count > n_tree) {
    throw std::invalid_argument("leaf count outside [1, n_tree]");
  }
  return std::min(b, n_tree - current_leaf_count + 1);
}

std::vector<std::pair<TokenId, double>> branch_tokens(const TokenDistribution& dist, int c) {
  if (c < 2 || c > dist.size()) throw std::invalid_argument("branch width out of [2, V]");
  std::vector<TokenId> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    if (dist.probs[a] != dist.probs[b]) return dist.probs[a] > dist.probs[b];
    return a < b;
  });

  std::vector<std::pair<TokenId, double>> out;
  for (TokenId id : order) {
    if (static_cast<int>(out.size()) == c) break;
    if (dist.probs[id] <= 0.0) break;
    out.emplace_back(id, std::log(dist.probs[id]));
  }
  return out;
}

namespace {

// One active root-to-leaf path during expansion. seed_basis folds the fork
// child indices taken since the root, so a path's random stream depends only
// on its position in the tree, never on scheduling.
struct Active {
  int tip = 0;
  PathState state;
  std::uint64_t seed_basis = 0;
  Rng rng{0};
};

int append_node(DecodingTree& tree, int parent, TokenId token, double entropy,
                std::optional<double> importance, double logprob) {
  const int id = static_cast<int>(tree.nodes.size());
  TreeNode node;
  node.token = token;
  node.entropy = entropy;
  node.importance = importance;
  node.logprob = logprob;
  tree.nodes.push_back(std::move(node));
  tree.nodes[parent].children.push_back(id);
  return id;
}

std::string path_context(std::span<const TokenId> prompt, std::span<const TokenId> generated) {
  std::ostringstream out;
  out << "prompt[";
  for (std::size_t i = 0; i < prompt.size(); ++i) out << (i ? " " : "") << prompt[i];
  out << "] +[";
  for (std::size_t i = 0; i < generated.size(); ++i) out << (i ? " " : "") << generated[i];
  out << "]";
  return out.str();
}

}  // namespace

DecodingTree decode_tree_with_rule(const ModelBackend& model, std::span<const TokenId> prompt,
                                   const BranchConfig& config, std::uint64_t master_seed,
                                   const BranchRule& rule, int workers) {
  config.validate();
  config.sampler.validate(model.vocab().size());

  DecodingTree tree{model.vocab(), std::vector<TokenId>(prompt.begin(), prompt.end()), {}};
  tree.nodes.emplace_back();  // root

  std::deque<Active> queue;
  queue.push_back(Active{0, PathState{}, master_seed, Rng(mix64(master_seed))});
  int leaf_count = 1;

  const TokenId eos = model.vocab().eos_id();

  auto finish_or_requeue = [&](Active&& path, TokenId token) {
    if (token == eos) {
      path.state.finished = true;
      path.state.finish_reason = FinishReason::kEos;
      return;
    }
    if (static_cast<int>(path.state.tokens.size()) >= config.max_tokens) {
      path.state.finished = true;
      path.state.finish_reason = FinishReason::kMaxTokens;
      return;
    }
    queue.push_back(std::move(path));
  };

  while (!queue.empty()) {
    // The queue is FIFO and generated lengths in it never differ by more
    // than one, so the maximal front run of equal length is exactly the set
    // of shortest active paths (the current BFS round).
    const std::size_t front_len = queue.front().state.tokens.size();
    std::size_t round = 1;
    while (round < queue.size() && queue[round].state.tokens.size() == front_len) ++round;

    // Scoring is pure and read-only, so the round can fan out over workers.
    std::vector<StepOutput> outs(round);
    auto score_one = [&](std::size_t i) {
      const Active& path = queue[i];
      std::vector<TokenId> full(tree.prompt);
      full.insert(full.end(), path.state.tokens.begin(), path.state.tokens.end());
      try {
        outs[i] = model.score_next(full);
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string(e.what()) + " while scoring " +
                                 path_context(tree.prompt, path.state.tokens));
      }
    };
    if (workers <= 1 || round == 1) {
      for (std::size_t i = 0; i < round; ++i) score_one(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::exception_ptr error;
      std::mutex error_mutex;
      auto drain = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < round;) {
          try {
            score_one(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      };
      const std::size_t n_threads = std::min<std::size_t>(workers, round);
      std::vector<std::thread> pool;
      for (std::size_t w = 1; w < n_threads; ++w) pool.emplace_back(drain);
      drain();
      for (auto& t : pool) t.join();
      if (error) std::rethrow_exception(error);
    }

    // Decisions consume the leaf budget and the per-path random streams, so
    // they apply strictly in FIFO order.
    for (std::size_t i = 0; i < round; ++i) {
      Active path = std::move(queue.front());
      queue.pop_front();
      StepOutput& step = outs[i];
      const double h = token_entropy(step.dist);

      bool want_branch = false;
      if (rule.kind == BranchRule::Kind::kEntropyGated) {
        want_branch = should_branch(h, step.importance, config.tau, config.delta);
      } else {
        want_branch = path.rng.next_double() < rule.random_rate;
      }

      if (want_branch) {
        const int width = std::min(allowed_children(leaf_count, config.b, config.n_tree),
                                   step.dist.size());
        if (width >= 2) {
          const auto forks = branch_tokens(step.dist, width);
          if (forks.size() >= 2) {
            leaf_count += static_cast<int>(forks.size()) - 1;
            tree.nodes[path.tip].branched = true;
            for (std::size_t child = 0; child < forks.size(); ++child) {
              const auto [token, logprob] = forks[child];
              const int node = append_node(tree, path.tip, token, h, step.importance, logprob);
              Active next_path;
              next_path.tip = node;
              next_path.state.tokens = path.state.tokens;
              next_path.state.tokens.push_back(token);
              next_path.state.cum_logprob = path.state.cum_logprob + logprob;
              next_path.seed_basis = hash_combine(path.seed_basis, child);
              next_path.rng = Rng(mix64(next_path.seed_basis));
              finish_or_requeue(std::move(next_path), token);
            }
            continue;
          }
          // Degenerate support (< 2 tokens with mass): no fork possible.
        }
      }

      const TokenId token = sample_step(step.dist, config.sampler, path.rng);
      const double logprob = std::log(step.dist.probs[token]);
      path.tip = append_node(tree, path.tip, token, h, step.importance, logprob);
      path.state.tokens.push_back(token);
      path.state.cum_logprob += logprob;
      finish_or_requeue(std::move(path), token);
    }
  }
  return tree;
}

DecodingTree decode_tree(const ModelBackend& model, std::span<const TokenId> prompt,
                         const BranchConfig& config, std::uint64_t master_seed, int workers) {
  return decode_tree_with_rule(model, prompt, config, master_seed, BranchRule{}, workers);
}

std::vector<LeafSequence> collect_leaves(const DecodingTree& tree) {
  std::vector<int> parent(tree.nodes.size(), -1);
  for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
    for (int child : tree.nodes[n].children) parent[child] = static_cast<int>(n);
  }

  // Depth-first leaf order, children in creation order.
  std::vector<int> leaf_ids;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    const auto& children = tree.nodes[n].children;
    if (children.empty()) {
      if (n != 0) leaf_ids.push_back(n);
      continue;
    }
    for (auto it = children.rbegin(); it != children.rend(); ++it) stack.push_back(*it);
  }

  std::vector<LeafSequence> leaves;
  leaves.reserve(leaf_ids.size());
  for (int leaf : leaf_ids) {
    std::vector<int> chain;
    for (int n = leaf; n != 0; n = parent[n]) chain.push_back(n);
    std::reverse(chain.begin(), chain.end());

    LeafSequence seq;
    seq.tokens.reserve(chain.size());
    for (std::size_t pos = 0; pos < chain.size(); ++pos) {
      const TreeNode& node = tree.nodes[chain[pos]];
      seq.tokens.push_back(node.token);
      seq.cum_logprob += node.logprob;
      if (tree.nodes[parent[chain[pos]]].branched) {
        seq.branch_positions.push_back(static_cast<int>(pos) + 1);
      }
    }
    seq.length = static_cast<int>(seq.tokens.size());
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
      if (i + 1 == seq.tokens.size() && seq.tokens[i] == tree.vocab.eos_id()) break;
      if (!seq.text.empty()) seq.text += ' ';
      seq.text += tree.vocab.token(seq.tokens[i]);
    }
    leaves.push_back(std::move(seq));
  }
  return leaves;
}

LeafSequence decode_chain(const ModelBackend& model, std::span<const TokenId> prompt,
                          const SamplerConfig& sampler, int max_tokens, std::uint64_t seed) {
  BranchConfig config;
  config.b = 2;
  config.n_tree = 1;  // single path: sampling only
  config.max_tokens = max_tokens;
  config.sampler = sampler;
  const DecodingTree tree = decode_tree(model, prompt, config, seed);
  auto leaves = collect_leaves(tree);
  if (leaves.size() != 1) throw std::logic_error("chain decode produced multiple leaves");
  return std::move(leaves.front());
}

// ---------------------------------------------------------------------------
// JSON dump

namespace {

nlohmann::json nullable(double x) {
  if (std::isnan(x)) return nullptr;
  return x;
}

double from_nullable(const nlohmann::json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}

}  // namespace

std::string tree_to_json(const DecodingTree& tree) {
  nlohmann::json j;
  j["vocab"]["tokens"] = tree.vocab.tokens();
  j["vocab"]["eos"] = tree.vocab.eos_id();
  j["prompt"] = tree.prompt;
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (const TreeNode& n : tree.nodes) {
    nlohmann::json nj;
    nj["token"] = n.token;
    nj["entropy"] = nullable(n.entropy);
    nj["importance"] = n.importance ? nlohmann::json(*n.importance) : nlohmann::json(nullptr);
    nj["logprob"] = nullable(n.logprob);
    nj["branched"] = n.branched;
    nj["children"] = n.children;
    nodes.push_back(std::move(nj));
  }
  return j.dump();
}

DecodingTree tree_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Vocabulary vocab(j.at("vocab").at("tokens").get<std::vector<std::string>>(),
                   j.at("vocab").at("eos").get<TokenId>());
  DecodingTree tree{std::move(vocab), j.at("prompt").get<std::vector<TokenId>>(), {}};
  for (const auto& nj : j.at("nodes")) {
    TreeNode n;
    n.token = nj.at("token").get<TokenId>();
    n.entropy = from_nullable(nj.at("entropy"));
    if (!nj.at("importance").is_null()) n.importance = nj.at("importance").get<double>();
    n.logprob = from_nullable(nj.at("logprob"));
    n.branched = nj.at("branched").get<bool>();
    n.children = nj.at("children").get<std::vector<int>>();
    tree.nodes.push_back(std::move(n));
  }
  if (tree.nodes.empty()) throw std::invalid_argument("tree dump has no nodes");
  return tree;
}

}  // namespace entropy_tree
