#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "entropy_tree/eval.hpp"
#include "entropy_tree/model.hpp"

namespace entropy_tree {

// ---------------------------------------------------------------------------
// Model files

// Scripted-model text format: a header declaring `tokens` (ordered list) and
// `eos` (token string), then one record per prefix with fields `prefix`
// (space-joined tokens, empty = root), `probs` (V reals summing to 1 within
// 1e-6) and optional `importance` (default 1.0). A record starting with
// `default` instead of `prefix` sets the fallback for unlisted prefixes.
ScriptedModel load_scripted(const std::filesystem::path& path);
void save_scripted(const ScriptedModel& model, const std::filesystem::path& path);

// N-gram model file: order, alpha, vocabulary and one integer count line per
// (context, token) pair. Context ids use -1 for the reserved BOS pad.
NGramModel load_ngram(const std::filesystem::path& path);
void save_ngram(const NGramModel& model, const std::filesystem::path& path);

// Attention layer file: dimensions, vocabulary, embedding rows and the two
// projection matrices.
ToyAttentionLayer load_attention(const std::filesystem::path& path);
void save_attention(const ToyAttentionLayer& layer, const std::filesystem::path& path);

// Dispatch on kind: "scripted", "ngram" or "attention".
std::unique_ptr<ModelBackend> load_model(const std::string& kind,
                                         const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Datasets and reports

// One JSON object per line with fields id, prompt, answer.
Dataset load_dataset(const std::filesystem::path& path);

// EvalReport round-trip as JSON lines: one meta line, one line per method
// summary, one line per sample record.
std::string report_to_jsonl(const EvalReport& report);
EvalReport report_from_jsonl(const std::string& text);

// CSV renderings. passk.csv: method,k,mean_pass_at_k with k ascending within
// each method, methods in report order. auroc.csv: method,metric,auroc with
// metrics in fixed order (pe, ln_pe, lexsim); undefined metrics are omitted.
std::string passk_csv(const EvalReport& report);
std::string auroc_csv(const EvalReport& report);

// ---------------------------------------------------------------------------
// Config and misc

// Flat `key = value` file; '#' starts a comment. Later keys override earlier.
std::map<std::string, std::string> load_key_values(const std::filesystem::path& path);

// Writes via a temp file plus rename so the target is complete or absent.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

// Shortest round-trip decimal for a double (std::to_chars).
std::string format_double(double value);

}  // namespace entropy_tree
