#include "entropy_tree/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace entropy_tree {

std::string policy_name(MatchPolicy p) {
  switch (p) {
    case MatchPolicy::kLastMatch: return "last_match";
    case MatchPolicy::kFirstMatch: return "first_match";
  }
  throw std::logic_error("bad MatchPolicy");
}

MatchPolicy policy_from_name(const std::string& name) {
  if (name == "last_match") return MatchPolicy::kLastMatch;
  if (name == "first_match") return MatchPolicy::kFirstMatch;
  throw std::invalid_argument("unknown match policy: " + name);
}

std::string fallback_name(AnswerFallback f) {
  switch (f) {
    case AnswerFallback::kLastNumber: return "last_number";
    case AnswerFallback::kNone: return "none";
  }
  throw std::logic_error("bad AnswerFallback");
}

AnswerFallback fallback_from_name(const std::string& name) {
  if (name == "last_number") return AnswerFallback::kLastNumber;
  if (name == "none") return AnswerFallback::kNone;
  throw std::invalid_argument("unknown answer fallback: " + name);
}

ExtractionRule::ExtractionRule(std::string pattern, MatchPolicy policy, AnswerFallback fallback)
    : pattern_(std::move(pattern)), policy_(policy), fallback_(fallback) {
  try {
    regex_ = std::regex(pattern_);
  } catch (const std::regex_error& e) {
    throw std::invalid_argument("invalid answer pattern '" + pattern_ + "': " + e.what());
  }
  if (regex_.mark_count() != 1) {
    throw std::invalid_argument("answer pattern must have exactly one capture group: " + pattern_);
  }
}

ExtractionRule default_extraction_rule() {
  return ExtractionRule(R"(ANSWER:\s*(\S+))", MatchPolicy::kLastMatch, AnswerFallback::kLastNumber);
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

std::optional<std::string> extract_answer(const std::string& text, const ExtractionRule& rule) {
  std::vector<std::string> captures;
  for (std::sregex_iterator it(text.begin(), text.end(), rule.regex()), end; it != end; ++it) {
    std::string value = trim((*it)[1].str());
    if (!value.empty()) captures.push_back(std::move(value));
  }
  if (!captures.empty()) {
    return rule.policy() == MatchPolicy::kFirstMatch ? captures.front() : captures.back();
  }
  if (rule.fallback() == AnswerFallback::kLastNumber) {
    static const std::regex number(R"([-+]?[0-9]+(\.[0-9]+)?)");
    std::optional<std::string> last;
    for (std::sregex_iterator it(text.begin(), text.end(), number), end; it != end; ++it) {
      last = it->str();
    }
    return last;
  }
  return std::nullopt;
}

AnswerDistribution answer_distribution(std::span<const std::optional<std::string>> answers) {
  if (answers.empty()) throw std::invalid_argument("answer list is empty");
  AnswerDistribution d;
  for (const auto& a : answers) {
    ++d.counts[a ? *a : std::string(kNoAnswerKey)];
    ++d.total;
  }
  return d;
}

double predictive_entropy(const AnswerDistribution& d) {
  if (d.total <= 0) throw std::invalid_argument("answer distribution is empty");
  double h = 0.0;
  for (const auto& [answer, count] : d.counts) {
    if (count <= 0) continue;
    const double p = static_cast<double>(count) / d.total;
    h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

std::optional<std::string> majority_vote(std::span<const std::optional<std::string>> answers) {
  if (answers.empty()) throw std::invalid_argument("answer list is empty");
  std::map<std::string, int> counts;
  std::map<std::string, std::size_t> first_seen;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (!answers[i]) continue;  // extraction failures do not vote
    const std::string& a = *answers[i];
    if (++counts[a] == 1) first_seen[a] = i;
  }
  std::optional<std::string> best;
  int best_count = 0;
  std::size_t best_seen = 0;
  for (const auto& [answer, count] : counts) {
    const std::size_t seen = first_seen[answer];
    if (count > best_count || (count == best_count && seen < best_seen)) {
      best = answer;
      best_count = count;
      best_seen = seen;
    }
  }
  return best;
}

double ln_predictive_entropy(std::span<const LeafSequence> leaves) {
  if (leaves.empty()) throw std::invalid_argument("leaf list is empty");
  double sum = 0.0;
  for (const LeafSequence& leaf : leaves) {
    if (leaf.length < 1) throw std::invalid_argument("leaf with length < 1");
    sum += -leaf.cum_logprob / leaf.length;
  }
  return sum / static_cast<double>(leaves.size());
}

namespace {

int lcs_length(const std::vector<TokenId>& u, const std::vector<TokenId>& v) {
  std::vector<int> prev(v.size() + 1, 0), cur(v.size() + 1, 0);
  for (std::size_t i = 1; i <= u.size(); ++i) {
    for (std::size_t j = 1; j <= v.size(); ++j) {
      cur[j] = u[i - 1] == v[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[v.size()];
}

}  // namespace

double lexical_similarity_uncertainty(std::span<const LeafSequence> leaves) {
  if (leaves.size() < 2) throw std::invalid_argument("need at least two leaves");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (std::size_t j = i + 1; j < leaves.size(); ++j) {
      const auto& u = leaves[i].tokens;
      const auto& v = leaves[j].tokens;
      const std::size_t longer = std::max(u.size(), v.size());
      sum += longer == 0 ? 1.0 : lcs_length(u, v) / static_cast<double>(longer);
      ++pairs;
    }
  }
  return 1.0 - sum / static_cast<double>(pairs);
}

}  // namespace entropy_tree
