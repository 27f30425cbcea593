#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace entropy_tree {

using TokenId = int;

// Ordered token inventory with a designated end-of-sequence token.
// Immutable once constructed.
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> tokens, TokenId eos_id);

  int size() const { return static_cast<int>(tokens_.size()); }
  TokenId eos_id() const { return eos_id_; }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<TokenId> find(std::string_view token) const;

  // Maps whitespace-split text to ids; unknown tokens are an input error.
  std::vector<TokenId> encode(std::string_view text) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.eos_id_ == b.eos_id_;
  }

 private:
  std::vector<std::string> tokens_;
  TokenId eos_id_ = 0;
  std::unordered_map<std::string, TokenId> index_;
};

// Probability vector over the vocabulary at one decoding step.
struct TokenDistribution {
  std::vector<double> probs;

  int size() const { return static_cast<int>(probs.size()); }

  // Entries in [0,1], summing to 1 within `tol`. Throws std::invalid_argument.
  void validate(double tol = 1e-9) const;
};

// One scoring step: next-token distribution plus, when the backend can
// provide one, the importance score of the step's argmax token.
struct StepOutput {
  TokenDistribution dist;
  std::optional<double> importance;
};

// Autoregressive backend interface. Backends are immutable after
// construction and score_next must be safe under concurrent readers.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual const Vocabulary& vocab() const = 0;

  // Next-token distribution after `prefix`. Pure: equal arguments give
  // bitwise-equal outputs. Unknown token ids are an input error.
  virtual StepOutput score_next(std::span<const TokenId> prefix) const = 0;
};

// ---------------------------------------------------------------------------
// Scripted table backend

struct ScriptedEntry {
  TokenDistribution dist;
  std::optional<double> importance;  // absent = backend reports none
};

// Deterministic test backend: a prefix -> (distribution, importance) table
// with a fallback entry for unlisted prefixes.
class ScriptedModel : public ModelBackend {
 public:
  using Table = std::map<std::vector<TokenId>, ScriptedEntry>;

  ScriptedModel(Vocabulary vocab, Table table, ScriptedEntry fallback);

  // Fallback one-hot on EOS with importance 1.
  ScriptedModel(Vocabulary vocab, Table table);

  const Vocabulary& vocab() const override { return vocab_; }
  StepOutput score_next(std::span<const TokenId> prefix) const override;

  const Table& table() const { return table_; }
  const ScriptedEntry& fallback() const { return fallback_; }

 private:
  Vocabulary vocab_;
  Table table_;
  ScriptedEntry fallback_;
};

// ---------------------------------------------------------------------------
// Smoothed n-gram backend

// Add-alpha n-gram model over a fixed vocabulary. Contexts shorter than
// order-1 are left-padded with a reserved BOS id that never appears in
// distributions. Reports importance 1.0 (no attention signal).
class NGramModel : public ModelBackend {
 public:
  static constexpr TokenId kBos = -1;

  using Counts = std::map<std::vector<TokenId>, std::map<TokenId, std::int64_t>>;

  NGramModel(Vocabulary vocab, int order, double alpha, Counts counts);

  const Vocabulary& vocab() const override { return vocab_; }
  StepOutput score_next(std::span<const TokenId> prefix) const override;

  int order() const { return order_; }
  double alpha() const { return alpha_; }
  const Counts& counts() const { return counts_; }

  // Last order-1 tokens of `prefix`, BOS-padded on the left.
  std::vector<TokenId> context_for(std::span<const TokenId> prefix) const;

 private:
  Vocabulary vocab_;
  int order_;
  double alpha_;
  Counts counts_;
};

// Builds the vocabulary from the corpus (token order of first appearance,
// appending "EOS" when absent) and counts sliding-window n-grams.
NGramModel train_ngram(const std::vector<std::vector<std::string>>& corpus, int order,
                       double alpha);

// ---------------------------------------------------------------------------
// Single-head attention backend

using Matrix = std::vector<std::vector<double>>;

// Tiny single-head attention layer. The next-token distribution is the
// softmax of the attention-pooled context vector dotted with every token
// embedding (tied embeddings); the importance signal is the strongest
// attention paid by the candidate argmax token to any strict predecessor.
class ToyAttentionLayer : public ModelBackend {
 public:
  ToyAttentionLayer(Vocabulary vocab, Matrix embed /* V x d_model */,
                    Matrix w_q /* d_model x d_k */, Matrix w_k /* d_model x d_k */);

  const Vocabulary& vocab() const override { return vocab_; }
  StepOutput score_next(std::span<const TokenId> prefix) const override;

  int d_model() const { return d_model_; }
  int d_k() const { return d_k_; }
  const Matrix& embed() const { return embed_; }
  const Matrix& w_q() const { return w_q_; }
  const Matrix& w_k() const { return w_k_; }

 private:
  Vocabulary vocab_;
  Matrix embed_, w_q_, w_k_;
  int d_model_ = 0;
  int d_k_ = 0;
};

// Causal single-head attention over the prefix embeddings: row-softmax of
// the masked score matrix Q K^T / sqrt(d_k). Row t has zeros past position t
// and sums to 1. Empty prefixes are an input error.
Matrix attention_matrix(const ToyAttentionLayer& layer, std::span<const TokenId> prefix);

// Max attention paid to a strict predecessor. `row` holds the nonzero prefix
// of attention row t (positions 1..t, self last); rows with no predecessor
// (t == 1) are an error.
double importance_score(std::span<const double> row);

}  // namespace entropy_tree
