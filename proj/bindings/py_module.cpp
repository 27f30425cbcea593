#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "entropy_tree/eval.hpp"
#include "entropy_tree/io.hpp"
#include "entropy_tree/tree.hpp"
#include "entropy_tree/uncertainty.hpp"

namespace py = pybind11;
namespace et = entropy_tree;

namespace {

et::BranchConfig make_config(double tau, double delta, int b, int n_tree, int max_tokens,
                             const std::string& strategy, int k, double p, double temperature) {
  et::BranchConfig config;
  config.tau = tau;
  config.delta = delta;
  config.b = b;
  config.n_tree = n_tree;
  config.max_tokens = max_tokens;
  config.sampler.strategy = et::strategy_from_name(strategy);
  config.sampler.k = k;
  config.sampler.p = p;
  config.sampler.temperature = temperature;
  return config;
}

py::dict leaf_to_dict(const et::LeafSequence& leaf) {
  py::dict d;
  d["tokens"] = leaf.tokens;
  d["text"] = leaf.text;
  d["cum_logprob"] = leaf.cum_logprob;
  d["length"] = leaf.length;
  d["branch_positions"] = leaf.branch_positions;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Entropy-gated tree decoding over pluggable token-level backends";

  py::class_<et::ModelBackend, std::shared_ptr<et::ModelBackend>>(m, "Model")
      .def_property_readonly("vocab_size",
                             [](const et::ModelBackend& b) { return b.vocab().size(); })
      .def_property_readonly("tokens",
                             [](const et::ModelBackend& b) { return b.vocab().tokens(); })
      .def_property_readonly("eos_id",
                             [](const et::ModelBackend& b) { return b.vocab().eos_id(); })
      .def("encode",
           [](const et::ModelBackend& b, const std::string& text) { return b.vocab().encode(text); })
      .def("score_next", [](const et::ModelBackend& b, const std::vector<et::TokenId>& prefix) {
        const et::StepOutput out = b.score_next(prefix);
        return py::make_tuple(out.dist.probs, out.importance);
      });

  m.def(
      "load_model",
      [](const std::string& kind, const std::string& path) {
        return std::shared_ptr<et::ModelBackend>(et::load_model(kind, path));
      },
      py::arg("kind"), py::arg("path"), "Load a scripted, ngram or attention model file");

  m.def(
      "token_entropy",
      [](std::vector<double> probs) {
        et::TokenDistribution dist{std::move(probs)};
        dist.validate();
        return et::token_entropy(dist);
      },
      py::arg("probs"), "Shannon entropy in nats of a probability vector");

  m.def("pass_at_k", &et::pass_at_k, py::arg("n"), py::arg("c"), py::arg("k"),
        "Unbiased pass@k estimator 1 - C(n-c,k)/C(n,k)");

  m.def(
      "auroc",
      [](const std::vector<std::pair<double, bool>>& scored) {
        std::vector<et::ScoredOutcome> outcomes;
        outcomes.reserve(scored.size());
        for (const auto& [u, incorrect] : scored) outcomes.push_back({u, incorrect});
        return et::auroc(outcomes);
      },
      py::arg("scored"), "AUROC of (uncertainty, incorrect) pairs, ties at 0.5");

  m.def("percentile", &et::percentile, py::arg("values"), py::arg("q"),
        "Nearest-rank percentile, q in (0,100]");

  m.def(
      "extract_answer",
      [](const std::string& text, const std::string& pattern, const std::string& policy,
         const std::string& fallback) -> std::optional<std::string> {
        const et::ExtractionRule rule(pattern, et::policy_from_name(policy),
                                      et::fallback_from_name(fallback));
        return et::extract_answer(text, rule);
      },
      py::arg("text"), py::arg("pattern") = et::default_extraction_rule().pattern(),
      py::arg("policy") = "last_match", py::arg("fallback") = "last_number",
      "Extract an answer string; None when absent");

  m.def(
      "predictive_entropy",
      [](const std::vector<std::optional<std::string>>& answers) {
        return et::predictive_entropy(et::answer_distribution(answers));
      },
      py::arg("answers"), "Entropy in nats of the empirical answer distribution");

  m.def(
      "majority_vote",
      [](const std::vector<std::optional<std::string>>& answers) {
        return et::majority_vote(answers);
      },
      py::arg("answers"), "Most frequent non-missing answer, ties to first occurrence");

  m.def(
      "decode_leaves",
      [](const std::shared_ptr<et::ModelBackend>& model, const std::string& prompt, double tau,
         double delta, int b, int n_tree, int max_tokens, std::uint64_t seed,
         const std::string& strategy, int k, double p, double temperature, int workers) {
        const auto config =
            make_config(tau, delta, b, n_tree, max_tokens, strategy, k, p, temperature);
        const auto prompt_ids = model->vocab().encode(prompt);
        const et::DecodingTree tree = et::decode_tree(*model, prompt_ids, config, seed, workers);
        py::list out;
        for (const et::LeafSequence& leaf : et::collect_leaves(tree)) {
          out.append(leaf_to_dict(leaf));
        }
        return out;
      },
      py::arg("model"), py::arg("prompt"), py::arg("tau"), py::arg("delta") = 0.0,
      py::arg("b") = 2, py::arg("n_tree") = 20, py::arg("max_tokens") = 256, py::arg("seed") = 0,
      py::arg("strategy") = "top_p", py::arg("k") = 0, py::arg("p") = 1.0,
      py::arg("temperature") = 1.0, py::arg("workers") = 1,
      "Entropy-gated tree decode; returns one dict per leaf");

  m.def(
      "decode_tree_json",
      [](const std::shared_ptr<et::ModelBackend>& model, const std::string& prompt, double tau,
         double delta, int b, int n_tree, int max_tokens, std::uint64_t seed,
         const std::string& strategy, int k, double p, double temperature) {
        const auto config =
            make_config(tau, delta, b, n_tree, max_tokens, strategy, k, p, temperature);
        const auto prompt_ids = model->vocab().encode(prompt);
        return et::tree_to_json(et::decode_tree(*model, prompt_ids, config, seed));
      },
      py::arg("model"), py::arg("prompt"), py::arg("tau"), py::arg("delta") = 0.0,
      py::arg("b") = 2, py::arg("n_tree") = 20, py::arg("max_tokens") = 256, py::arg("seed") = 0,
      py::arg("strategy") = "top_p", py::arg("k") = 0, py::arg("p") = 1.0,
      py::arg("temperature") = 1.0, "Entropy-gated tree decode; returns the tree as JSON");

  m.def(
      "calibrate_thresholds",
      [](const std::shared_ptr<et::ModelBackend>& model, const std::vector<std::string>& prompts,
         double q, std::uint64_t seed, int max_tokens) {
        std::vector<std::vector<et::TokenId>> encoded;
        encoded.reserve(prompts.size());
        for (const std::string& p : prompts) encoded.push_back(model->vocab().encode(p));
        et::SamplerConfig sampler;
        sampler.seed = seed;
        const et::Thresholds t =
            et::calibrate_thresholds(*model, encoded, sampler, q, max_tokens);
        return py::make_tuple(t.tau, t.delta);
      },
      py::arg("model"), py::arg("prompts"), py::arg("q") = 80.0, py::arg("seed") = 0,
      py::arg("max_tokens") = 256, "Percentile thresholds (tau, delta) from pooled statistics");
}
