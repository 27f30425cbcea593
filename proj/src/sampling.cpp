#include "entropy_tree/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace entropy_tree {

std::string strategy_name(SampleStrategy s) {
  switch (s) {
    case SampleStrategy::kGreedy: return "greedy";
    case SampleStrategy::kTopK: return "top_k";
    case SampleStrategy::kTopP: return "top_p";
    case SampleStrategy::kTopKThenTopP: return "top_k_then_top_p";
  }
  throw std::logic_error("bad strategy");
}

SampleStrategy strategy_from_name(const std::string& name) {
  if (name == "greedy") return SampleStrategy::kGreedy;
  if (name == "top_k") return SampleStrategy::kTopK;
  if (name == "top_p") return SampleStrategy::kTopP;
  if (name == "top_k_then_top_p") return SampleStrategy::kTopKThenTopP;
  throw std::invalid_argument("unknown sampling strategy: " + name);
}

void SamplerConfig::validate(int vocab_size) const {
  const bool uses_k =
      strategy == SampleStrategy::kTopK || strategy == SampleStrategy::kTopKThenTopP;
  if (uses_k && k != 0 && (k < 1 || k > vocab_size)) {
    throw std::invalid_argument("sampler k out of [1, V]");
  }
  if (!(p > 0.0) || p > 1.0) throw std::invalid_argument("sampler p out of (0, 1]");
  if (!(temperature > 0.0)) throw std::invalid_argument("sampler temperature must be > 0");
}

double token_entropy(const TokenDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

TokenId greedy_select(const TokenDistribution& dist) {
  TokenId best = 0;
  for (TokenId i = 1; i < dist.size(); ++i) {
    if (dist.probs[i] > dist.probs[best]) best = i;
  }
  return best;
}

namespace {

// Token ids sorted by probability descending, ties by lowest id.
std::vector<TokenId> by_probability(const TokenDistribution& dist) {
  std::vector<TokenId> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    if (dist.probs[a] != dist.probs[b]) return dist.probs[a] > dist.probs[b];
    return a < b;
  });
  return order;
}

TokenDistribution renormalized_subset(const TokenDistribution& dist,
                                      std::span<const TokenId> kept) {
  double sum = 0.0;
  for (TokenId id : kept) sum += dist.probs[id];
  TokenDistribution out;
  out.probs.assign(dist.size(), 0.0);
  for (TokenId id : kept) out.probs[id] = dist.probs[id] / sum;
  return out;
}

}  // namespace

TokenDistribution truncate_top_k(const TokenDistribution& dist, int k) {
  if (k < 1 || k > dist.size()) throw std::invalid_argument("top-k k out of [1, V]");
  auto order = by_probability(dist);
  order.resize(k);
  return renormalized_subset(dist, order);
}

TokenDistribution truncate_top_p(const TokenDistribution& dist, double p) {
  if (!(p > 0.0) || p > 1.0) throw std::invalid_argument("top-p p out of (0, 1]");
  const auto order = by_probability(dist);

  std::vector<TokenId> kept;
  double cum = 0.0;
  for (TokenId id : order) {
    if (dist.probs[id] <= 0.0) break;  // zero mass never qualifies
    kept.push_back(id);
    cum += dist.probs[id];
    // Slack absorbs accumulation error so that e.g. 0.5 + 0.3 reaches 0.8.
    if (p < 1.0 && cum >= p - 1e-12) break;
  }
  return renormalized_subset(dist, kept);
}

TokenDistribution apply_temperature(const TokenDistribution& dist, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (temperature == 1.0) return dist;
  const double p_max = dist.probs[greedy_select(dist)];
  TokenDistribution out;
  out.probs.assign(dist.size(), 0.0);
  double sum = 0.0;
  for (int i = 0; i < dist.size(); ++i) {
    if (dist.probs[i] > 0.0) {
      // Scaling by the max first keeps p^(1/T) from underflowing everywhere.
      out.probs[i] = std::pow(dist.probs[i] / p_max, 1.0 / temperature);
      sum += out.probs[i];
    }
  }
  for (double& x : out.probs) x /= sum;
  return out;
}

TokenId sample(const TokenDistribution& dist, Rng& rng) {
  const double u = rng.next_double();
  double cum = 0.0;
  TokenId last_positive = 0;
  for (TokenId i = 0; i < dist.size(); ++i) {
    const double p = dist.probs[i];
    if (p <= 0.0) continue;
    cum += p;
    last_positive = i;
    if (u < cum) return i;
  }
  return last_positive;  // guards against cum < 1 from rounding
}

TokenDistribution apply_sampler(const TokenDistribution& dist, const SamplerConfig& cfg) {
  cfg.validate(dist.size());
  if (cfg.strategy == SampleStrategy::kGreedy) return dist;

  TokenDistribution out = dist;
  const int k = cfg.k == 0 ? dist.size() : cfg.k;
  if (cfg.strategy == SampleStrategy::kTopK || cfg.strategy == SampleStrategy::kTopKThenTopP) {
    out = truncate_top_k(out, k);
  }
  if (cfg.strategy == SampleStrategy::kTopP || cfg.strategy == SampleStrategy::kTopKThenTopP) {
    out = truncate_top_p(out, cfg.p);
  }
  if (cfg.temperature != 1.0) out = apply_temperature(out, cfg.temperature);
  return out;
}

TokenId sample_step(const TokenDistribution& dist, const SamplerConfig& cfg, Rng& rng) {
  if (cfg.strategy == SampleStrategy::kGreedy) return greedy_select(dist);
  return sample(apply_sampler(dist, cfg), rng);
}

}  // namespace entropy_tree
