#pragma once

#include <map>
#include <optional>
#include <regex>
#include <span>
#include <string>

#include "entropy_tree/tree.hpp"

namespace entropy_tree {

// Reserved bucket key for generations with no extractable answer.
inline constexpr const char* kNoAnswerKey = "<no-answer>";

enum class MatchPolicy { kLastMatch, kFirstMatch };
enum class AnswerFallback { kLastNumber, kNone };

std::string policy_name(MatchPolicy p);
MatchPolicy policy_from_name(const std::string& name);
std::string fallback_name(AnswerFallback f);
AnswerFallback fallback_from_name(const std::string& name);

// Answer extraction: a regex with exactly one capture group, a first/last
// match policy and an optional last-number fallback.
class ExtractionRule {
 public:
  ExtractionRule(std::string pattern, MatchPolicy policy, AnswerFallback fallback);

  const std::string& pattern() const { return pattern_; }
  MatchPolicy policy() const { return policy_; }
  AnswerFallback fallback() const { return fallback_; }
  const std::regex& regex() const { return regex_; }

 private:
  std::string pattern_;
  MatchPolicy policy_;
  AnswerFallback fallback_;
  std::regex regex_;
};

// Captures whatever follows an "ANSWER:" marker; last match wins, last
// number in the text as fallback.
ExtractionRule default_extraction_rule();

// Applies the rule to `text`; nullopt means no answer. Results are trimmed
// of surrounding whitespace.
std::optional<std::string> extract_answer(const std::string& text, const ExtractionRule& rule);

// Empirical answer distribution; missing answers count under kNoAnswerKey.
struct AnswerDistribution {
  std::map<std::string, int> counts;
  int total = 0;
};

AnswerDistribution answer_distribution(std::span<const std::optional<std::string>> answers);

// Shannon entropy in nats of the answer distribution.
double predictive_entropy(const AnswerDistribution& d);

// Most frequent non-missing answer; ties go to the earliest first occurrence
// in the list. All-missing input votes nullopt.
std::optional<std::string> majority_vote(std::span<const std::optional<std::string>> answers);

// Mean length-normalized negative log-likelihood over sequences; higher is
// more uncertain.
double ln_predictive_entropy(std::span<const LeafSequence> leaves);

// 1 - mean pairwise normalized LCS over token sequences; 0 iff all sequences
// are token-identical. Needs at least two sequences.
double lexical_similarity_uncertainty(std::span<const LeafSequence> leaves);

}  // namespace entropy_tree
