#pragma once

#include <cstdint>
#include <string>

#include "entropy_tree/common.hpp"
#include "entropy_tree/model.hpp"

namespace entropy_tree {

enum class SampleStrategy { kGreedy, kTopK, kTopP, kTopKThenTopP };

std::string strategy_name(SampleStrategy s);
SampleStrategy strategy_from_name(const std::string& name);

struct SamplerConfig {
  SampleStrategy strategy = SampleStrategy::kTopP;
  int k = 0;  // 0 = full vocabulary
  double p = 1.0;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate(int vocab_size) const;
};

// Shannon entropy in nats of the full next-token distribution, with the
// convention 0 ln 0 = 0. Ranges over [0, ln V].
double token_entropy(const TokenDistribution& dist);

// Argmax token; ties go to the lowest id.
TokenId greedy_select(const TokenDistribution& dist);

// Zeroes mass outside the k most probable tokens and renormalizes the
// survivors. Boundary ties go to the lowest id.
TokenDistribution truncate_top_k(const TokenDistribution& dist, int k);

// Keeps the minimal descending-sorted prefix whose cumulative mass reaches p
// and renormalizes. p = 1 keeps the full support.
TokenDistribution truncate_top_p(const TokenDistribution& dist, double p);

// probs proportional to p_i^(1/T); T = 1 is the identity.
TokenDistribution apply_temperature(const TokenDistribution& dist, double temperature);

// Categorical draw; consumes one uniform from `rng`.
TokenId sample(const TokenDistribution& dist, Rng& rng);

// Truncation pipeline for one sampling step: top-k, then top-p, then
// temperature, per the configured strategy. Greedy passes through unchanged.
TokenDistribution apply_sampler(const TokenDistribution& dist, const SamplerConfig& cfg);

// One token selection under `cfg`: greedy_select for greedy, otherwise a
// seeded draw from the truncated distribution.
TokenId sample_step(const TokenDistribution& dist, const SamplerConfig& cfg, Rng& rng);

}  // namespace entropy_tree
