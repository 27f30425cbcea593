#include "entropy_tree/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace entropy_tree {

namespace {

void check_prefix(const Vocabulary& vocab, std::span<const TokenId> prefix) {
  for (TokenId id : prefix) {
    if (id < 0 || id >= vocab.size()) {
      throw std::invalid_argument("unknown token index " + std::to_string(id) +
                                  " (vocabulary size " + std::to_string(vocab.size()) + ")");
    }
  }
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens, TokenId eos_id)
    : tokens_(std::move(tokens)), eos_id_(eos_id) {
  if (tokens_.size() < 2) {
    throw std::invalid_argument("vocabulary needs at least 2 tokens");
  }
  if (eos_id_ < 0 || eos_id_ >= static_cast<TokenId>(tokens_.size())) {
    throw std::invalid_argument("eos id out of range");
  }
  for (TokenId i = 0; i < static_cast<TokenId>(tokens_.size()); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      throw std::invalid_argument("duplicate vocabulary token: " + tokens_[i]);
    }
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw std::invalid_argument("token id out of range: " + std::to_string(id));
  }
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    auto id = find(tok);
    if (!id) throw std::invalid_argument("token not in vocabulary: " + tok);
    ids.push_back(*id);
  }
  return ids;
}

void TokenDistribution::validate(double tol) const {
  if (probs.empty()) throw std::invalid_argument("empty distribution");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || p > 1.0 + tol) {
      throw std::invalid_argument("probability out of [0,1]");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > tol) {
    throw std::invalid_argument("distribution sums to " + std::to_string(sum) + ", not 1");
  }
}

// ---------------------------------------------------------------------------
// ScriptedModel

ScriptedModel::ScriptedModel(Vocabulary vocab, Table table, ScriptedEntry fallback)
    : vocab_(std::move(vocab)), table_(std::move(table)), fallback_(std::move(fallback)) {
  for (const auto& [prefix, entry] : table_) {
    for (TokenId id : prefix) {
      if (id < 0 || id >= vocab_.size()) {
        throw std::invalid_argument("scripted prefix contains unknown token id");
      }
    }
    if (entry.dist.size() != vocab_.size()) {
      throw std::invalid_argument("scripted distribution size differs from vocabulary");
    }
    entry.dist.validate();
    if (entry.importance && (*entry.importance < 0.0 || *entry.importance > 1.0)) {
      throw std::invalid_argument("scripted importance outside [0,1]");
    }
  }
  if (fallback_.dist.size() != vocab_.size()) {
    throw std::invalid_argument("scripted fallback size differs from vocabulary");
  }
  fallback_.dist.validate();
}

namespace {

ScriptedEntry eos_fallback(const Vocabulary& vocab) {
  ScriptedEntry fb;
  fb.dist.probs.assign(vocab.size(), 0.0);
  fb.dist.probs[vocab.eos_id()] = 1.0;
  fb.importance = 1.0;
  return fb;
}

}  // namespace

ScriptedModel::ScriptedModel(Vocabulary vocab, Table table)
    : ScriptedModel(vocab, std::move(table), eos_fallback(vocab)) {}

StepOutput ScriptedModel::score_next(std::span<const TokenId> prefix) const {
  check_prefix(vocab_, prefix);
  auto it = table_.find(std::vector<TokenId>(prefix.begin(), prefix.end()));
  const ScriptedEntry& entry = it == table_.end() ? fallback_ : it->second;
  return StepOutput{entry.dist, entry.importance};
}

// ---------------------------------------------------------------------------
// NGramModel

NGramModel::NGramModel(Vocabulary vocab, int order, double alpha, Counts counts)
    : vocab_(std::move(vocab)), order_(order), alpha_(alpha), counts_(std::move(counts)) {
  if (order_ < 1) throw std::invalid_argument("n-gram order must be >= 1");
  if (!(alpha_ > 0.0)) throw std::invalid_argument("smoothing alpha must be > 0");
  for (const auto& [context, per_token] : counts_) {
    if (static_cast<int>(context.size()) != order_ - 1) {
      throw std::invalid_argument("context length differs from order-1");
    }
    for (const auto& [token, count] : per_token) {
      if (token < 0 || token >= vocab_.size()) {
        throw std::invalid_argument("count entry for unknown token id");
      }
      if (count < 0) throw std::invalid_argument("negative n-gram count");
    }
  }
}

std::vector<TokenId> NGramModel::context_for(std::span<const TokenId> prefix) const {
  const int len = order_ - 1;
  std::vector<TokenId> context(len, kBos);
  const int take = std::min<int>(len, static_cast<int>(prefix.size()));
  for (int i = 0; i < take; ++i) {
    context[len - 1 - i] = prefix[prefix.size() - 1 - i];
  }
  return context;
}

StepOutput NGramModel::score_next(std::span<const TokenId> prefix) const {
  check_prefix(vocab_, prefix);
  const auto context = context_for(prefix);
  const int v = vocab_.size();

  std::int64_t total = 0;
  const std::map<TokenId, std::int64_t>* per_token = nullptr;
  if (auto it = counts_.find(context); it != counts_.end()) {
    per_token = &it->second;
    for (const auto& [token, count] : *per_token) total += count;
  }

  TokenDistribution dist;
  dist.probs.assign(v, 0.0);
  const double denom = static_cast<double>(total) + alpha_ * v;
  for (TokenId i = 0; i < v; ++i) {
    std::int64_t count = 0;
    if (per_token) {
      if (auto it = per_token->find(i); it != per_token->end()) count = it->second;
    }
    dist.probs[i] = (static_cast<double>(count) + alpha_) / denom;
  }
  return StepOutput{std::move(dist), 1.0};
}

NGramModel train_ngram(const std::vector<std::vector<std::string>>& corpus, int order,
                       double alpha) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  if (order < 1) throw std::invalid_argument("n-gram order must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("smoothing alpha must be > 0");

  std::vector<std::string> tokens;
  std::unordered_map<std::string, TokenId> seen;
  for (const auto& sequence : corpus) {
    for (const auto& tok : sequence) {
      if (seen.emplace(tok, static_cast<TokenId>(tokens.size())).second) {
        tokens.push_back(tok);
      }
    }
  }
  if (tokens.empty()) throw std::invalid_argument("empty corpus");
  if (!seen.count("EOS")) {
    seen.emplace("EOS", static_cast<TokenId>(tokens.size()));
    tokens.push_back("EOS");
  }
  if (tokens.size() < 2) {
    // Degenerate single-token corpus still needs V >= 2.
    seen.emplace("EOS", static_cast<TokenId>(tokens.size()));
    tokens.push_back("EOS");
  }
  Vocabulary vocab(tokens, seen.at("EOS"));

  NGramModel::Counts counts;
  for (const auto& sequence : corpus) {
    std::vector<TokenId> ids;
    ids.reserve(sequence.size());
    for (const auto& tok : sequence) ids.push_back(seen.at(tok));
    for (std::size_t t = 0; t < ids.size(); ++t) {
      std::vector<TokenId> context(order - 1, NGramModel::kBos);
      for (int i = 0; i < order - 1; ++i) {
        const std::int64_t src = static_cast<std::int64_t>(t) - (order - 1) + i;
        if (src >= 0) context[i] = ids[src];
      }
      ++counts[context][ids[t]];
    }
  }
  return NGramModel(std::move(vocab), order, alpha, std::move(counts));
}

// ---------------------------------------------------------------------------
// ToyAttentionLayer

namespace {

void check_matrix(const Matrix& m, int rows, int cols, const char* name) {
  if (static_cast<int>(m.size()) != rows) {
    throw std::invalid_argument(std::string(name) + ": wrong row count");
  }
  for (const auto& row : m) {
    if (static_cast<int>(row.size()) != cols) {
      throw std::invalid_argument(std::string(name) + ": ragged or wrong column count");
    }
  }
}

// x (1 x d_model) times w (d_model x d_k).
std::vector<double> project(const std::vector<double>& x, const Matrix& w) {
  const int d_k = static_cast<int>(w.empty() ? 0 : w[0].size());
  std::vector<double> out(d_k, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int j = 0; j < d_k; ++j) out[j] += x[i] * w[i][j];
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  double max_logit = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max_logit);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

}  // namespace

ToyAttentionLayer::ToyAttentionLayer(Vocabulary vocab, Matrix embed, Matrix w_q, Matrix w_k)
    : vocab_(std::move(vocab)),
      embed_(std::move(embed)),
      w_q_(std::move(w_q)),
      w_k_(std::move(w_k)) {
  if (embed_.empty() || embed_[0].empty()) {
    throw std::invalid_argument("attention layer needs a nonempty embedding table");
  }
  d_model_ = static_cast<int>(embed_[0].size());
  check_matrix(embed_, vocab_.size(), d_model_, "embed");
  if (w_q_.empty() || w_q_[0].empty()) throw std::invalid_argument("w_q is empty");
  d_k_ = static_cast<int>(w_q_[0].size());
  check_matrix(w_q_, d_model_, d_k_, "w_q");
  check_matrix(w_k_, d_model_, d_k_, "w_k");
}

Matrix attention_matrix(const ToyAttentionLayer& layer, std::span<const TokenId> prefix) {
  if (prefix.empty()) throw std::invalid_argument("attention over an empty prefix");
  check_prefix(layer.vocab(), prefix);

  const int t_len = static_cast<int>(prefix.size());
  Matrix q(t_len), k(t_len);
  for (int t = 0; t < t_len; ++t) {
    const auto& e = layer.embed()[prefix[t]];
    q[t] = project(e, layer.w_q());
    k[t] = project(e, layer.w_k());
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(layer.d_k()));
  Matrix a(t_len, std::vector<double>(t_len, 0.0));
  for (int t = 0; t < t_len; ++t) {
    // Causal mask: row t only sees positions <= t; softmax over that span.
    std::vector<double> scores(t + 1);
    for (int j = 0; j <= t; ++j) {
      double dot = 0.0;
      for (int d = 0; d < layer.d_k(); ++d) dot += q[t][d] * k[j][d];
      scores[j] = dot * scale;
    }
    auto row = softmax(scores);
    std::copy(row.begin(), row.end(), a[t].begin());
  }
  return a;
}

double importance_score(std::span<const double> row) {
  if (row.size() < 2) {
    throw std::invalid_argument("importance undefined at the first position (no predecessor)");
  }
  return *std::max_element(row.begin(), row.end() - 1);
}

StepOutput ToyAttentionLayer::score_next(std::span<const TokenId> prefix) const {
  if (prefix.empty()) {
    throw std::invalid_argument("attention backend needs a nonempty prefix");
  }
  check_prefix(vocab_, prefix);

  const Matrix a = attention_matrix(*this, prefix);
  const auto& last_row = a.back();

  // Attention-pooled context vector of the last position.
  std::vector<double> context(d_model_, 0.0);
  for (std::size_t j = 0; j < prefix.size(); ++j) {
    for (int d = 0; d < d_model_; ++d) context[d] += last_row[j] * embed_[prefix[j]][d];
  }

  // Tied-embedding readout.
  std::vector<double> logits(vocab_.size(), 0.0);
  for (TokenId i = 0; i < vocab_.size(); ++i) {
    for (int d = 0; d < d_model_; ++d) logits[i] += context[d] * embed_[i][d];
  }
  TokenDistribution dist{softmax(logits)};

  // Importance of the argmax candidate: append it and read the new last row.
  TokenId argmax = 0;
  for (TokenId i = 1; i < dist.size(); ++i) {
    if (dist.probs[i] > dist.probs[argmax]) argmax = i;
  }
  std::vector<TokenId> extended(prefix.begin(), prefix.end());
  extended.push_back(argmax);
  const Matrix a2 = attention_matrix(*this, extended);
  const double importance = importance_score(a2.back());

  return StepOutput{std::move(dist), importance};
}

}  // namespace entropy_tree
