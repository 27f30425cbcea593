#include "entropy_tree/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace entropy_tree {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(std::move(tok));
  return out;
}

[[noreturn]] void fail_at(const std::filesystem::path& path, int line, const std::string& what) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& s, const std::filesystem::path& path, int line) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) fail_at(path, line, "bad number '" + s + "'");
  return value;
}

long long parse_int(const std::string& s, const std::filesystem::path& path, int line) {
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) fail_at(path, line, "bad integer '" + s + "'");
  return value;
}

// Pulls the next non-blank, non-comment line; returns false at EOF.
struct LineReader {
  std::istringstream in;
  std::filesystem::path path;
  int line_no = 0;

  LineReader(std::string text, std::filesystem::path p) : in(std::move(text)), path(std::move(p)) {}

  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      fields = split_ws(line);
      if (!fields.empty()) return true;
    }
    return false;
  }
};

Vocabulary parse_vocab_header(LineReader& reader) {
  std::vector<std::string> fields;
  if (!reader.next(fields) || fields[0] != "tokens" || fields.size() < 2) {
    fail_at(reader.path, reader.line_no, "expected 'tokens <tok>...' header");
  }
  std::vector<std::string> tokens(fields.begin() + 1, fields.end());
  if (!reader.next(fields) || fields[0] != "eos" || fields.size() != 2) {
    fail_at(reader.path, reader.line_no, "expected 'eos <tok>' header");
  }
  const auto eos_it = std::find(tokens.begin(), tokens.end(), fields[1]);
  if (eos_it == tokens.end()) fail_at(reader.path, reader.line_no, "eos token not in tokens");
  const auto eos_id = static_cast<TokenId>(eos_it - tokens.begin());
  return Vocabulary(std::move(tokens), eos_id);
}

void write_vocab_header(std::string& out, const Vocabulary& vocab) {
  out += "tokens";
  for (const std::string& tok : vocab.tokens()) {
    out += ' ';
    out += tok;
  }
  out += "\neos ";
  out += vocab.token(vocab.eos_id());
  out += '\n';
}

}  // namespace

// ---------------------------------------------------------------------------
// Scripted model files

ScriptedModel load_scripted(const std::filesystem::path& path) {
  LineReader reader(read_file(path), path);
  Vocabulary vocab = parse_vocab_header(reader);
  const int v = vocab.size();

  ScriptedModel::Table table;
  std::optional<ScriptedEntry> fallback;

  std::vector<std::string> fields;
  bool pending = reader.next(fields);
  while (pending) {
    const int record_line = reader.line_no;
    bool is_default = false;
    std::vector<TokenId> prefix;
    if (fields[0] == "default") {
      if (fields.size() != 1) fail_at(path, record_line, "'default' takes no arguments");
      if (fallback) fail_at(path, record_line, "duplicate default record");
      is_default = true;
    } else if (fields[0] == "prefix") {
      for (std::size_t i = 1; i < fields.size(); ++i) {
        const auto id = vocab.find(fields[i]);
        if (!id) fail_at(path, record_line, "unknown token '" + fields[i] + "'");
        prefix.push_back(*id);
      }
      if (table.count(prefix)) fail_at(path, record_line, "duplicate prefix record");
    } else {
      fail_at(path, record_line, "expected 'prefix' or 'default', got '" + fields[0] + "'");
    }

    if (!reader.next(fields) || fields[0] != "probs") {
      fail_at(path, reader.line_no, "expected 'probs' line");
    }
    if (static_cast<int>(fields.size()) != v + 1) {
      fail_at(path, reader.line_no,
              "expected " + std::to_string(v) + " probabilities, got " +
                  std::to_string(fields.size() - 1));
    }
    ScriptedEntry entry;
    entry.dist.probs.reserve(v);
    double sum = 0.0;
    for (int i = 0; i < v; ++i) {
      const double p = parse_double(fields[i + 1], path, reader.line_no);
      if (p < 0.0) fail_at(path, reader.line_no, "negative probability");
      entry.dist.probs.push_back(p);
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) fail_at(path, reader.line_no, "probabilities must sum to 1");
    for (double& p : entry.dist.probs) p /= sum;

    pending = reader.next(fields);
    if (pending && fields[0] == "importance") {
      if (fields.size() != 2) fail_at(path, reader.line_no, "expected 'importance <value>'");
      const double imp = parse_double(fields[1], path, reader.line_no);
      if (imp < 0.0 || imp > 1.0) fail_at(path, reader.line_no, "importance must be in [0,1]");
      entry.importance = imp;
      pending = reader.next(fields);
    }

    if (is_default) {
      fallback = std::move(entry);
    } else {
      table.emplace(std::move(prefix), std::move(entry));
    }
  }

  if (fallback) return ScriptedModel(std::move(vocab), std::move(table), std::move(*fallback));
  return ScriptedModel(std::move(vocab), std::move(table));
}

namespace {

void write_scripted_entry(std::string& out, const ScriptedEntry& entry) {
  out += "probs";
  for (double p : entry.dist.probs) {
    out += ' ';
    out += format_double(p);
  }
  out += '\n';
  if (entry.importance) {
    out += "importance ";
    out += format_double(*entry.importance);
    out += '\n';
  }
}

}  // namespace

void save_scripted(const ScriptedModel& model, const std::filesystem::path& path) {
  std::string out;
  write_vocab_header(out, model.vocab());
  out += "default\n";
  write_scripted_entry(out, model.fallback());
  for (const auto& [prefix, entry] : model.table()) {
    out += "prefix";
    for (TokenId id : prefix) {
      out += ' ';
      out += model.vocab().token(id);
    }
    out += '\n';
    write_scripted_entry(out, entry);
  }
  write_text_atomic(path, out);
}

// ---------------------------------------------------------------------------
// N-gram model files

NGramModel load_ngram(const std::filesystem::path& path) {
  LineReader reader(read_file(path), path);

  std::vector<std::string> fields;
  if (!reader.next(fields) || fields[0] != "order" || fields.size() != 2) {
    fail_at(path, reader.line_no, "expected 'order <n>'");
  }
  const int order = static_cast<int>(parse_int(fields[1], path, reader.line_no));
  if (!reader.next(fields) || fields[0] != "alpha" || fields.size() != 2) {
    fail_at(path, reader.line_no, "expected 'alpha <x>'");
  }
  const double alpha = parse_double(fields[1], path, reader.line_no);
  Vocabulary vocab = parse_vocab_header(reader);

  NGramModel::Counts counts;
  while (reader.next(fields)) {
    if (fields[0] != "count") fail_at(path, reader.line_no, "expected 'count' line");
    if (static_cast<int>(fields.size()) != order + 2) {
      fail_at(path, reader.line_no, "count line needs order-1 context ids, a token id and a count");
    }
    std::vector<TokenId> context;
    for (int i = 0; i < order - 1; ++i) {
      context.push_back(static_cast<TokenId>(parse_int(fields[1 + i], path, reader.line_no)));
    }
    const auto token = static_cast<TokenId>(parse_int(fields[order], path, reader.line_no));
    const long long n = parse_int(fields[order + 1], path, reader.line_no);
    if (counts[context].count(token)) fail_at(path, reader.line_no, "duplicate count entry");
    counts[context][token] = n;
  }
  return NGramModel(std::move(vocab), order, alpha, std::move(counts));
}

void save_ngram(const NGramModel& model, const std::filesystem::path& path) {
  std::string out;
  out += "order " + std::to_string(model.order()) + '\n';
  out += "alpha " + format_double(model.alpha()) + '\n';
  write_vocab_header(out, model.vocab());
  for (const auto& [context, tokens] : model.counts()) {
    for (const auto& [token, n] : tokens) {
      out += "count";
      for (TokenId id : context) out += ' ' + std::to_string(id);
      out += ' ' + std::to_string(token);
      out += ' ' + std::to_string(n);
      out += '\n';
    }
  }
  write_text_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Attention layer files

ToyAttentionLayer load_attention(const std::filesystem::path& path) {
  LineReader reader(read_file(path), path);
  Vocabulary vocab = parse_vocab_header(reader);

  std::vector<std::string> fields;
  if (!reader.next(fields) || fields[0] != "d_model" || fields.size() != 2) {
    fail_at(path, reader.line_no, "expected 'd_model <n>'");
  }
  const int d_model = static_cast<int>(parse_int(fields[1], path, reader.line_no));
  if (!reader.next(fields) || fields[0] != "d_k" || fields.size() != 2) {
    fail_at(path, reader.line_no, "expected 'd_k <n>'");
  }
  const int d_k = static_cast<int>(parse_int(fields[1], path, reader.line_no));

  auto read_rows = [&](const std::string& tag, int rows, int cols) {
    Matrix m;
    m.reserve(rows);
    for (int r = 0; r < rows; ++r) {
      if (!reader.next(fields) || fields[0] != tag) {
        fail_at(path, reader.line_no, "expected '" + tag + "' row " + std::to_string(r));
      }
      if (static_cast<int>(fields.size()) != cols + 1) {
        fail_at(path, reader.line_no, tag + " row needs " + std::to_string(cols) + " values");
      }
      std::vector<double> row;
      row.reserve(cols);
      for (int c = 0; c < cols; ++c) row.push_back(parse_double(fields[c + 1], path, reader.line_no));
      m.push_back(std::move(row));
    }
    return m;
  };

  Matrix embed = read_rows("embed", vocab.size(), d_model);
  Matrix w_q = read_rows("w_q", d_model, d_k);
  Matrix w_k = read_rows("w_k", d_model, d_k);
  if (reader.next(fields)) fail_at(path, reader.line_no, "trailing content");
  return ToyAttentionLayer(std::move(vocab), std::move(embed), std::move(w_q), std::move(w_k));
}

void save_attention(const ToyAttentionLayer& layer, const std::filesystem::path& path) {
  std::string out;
  write_vocab_header(out, layer.vocab());
  out += "d_model " + std::to_string(layer.d_model()) + '\n';
  out += "d_k " + std::to_string(layer.d_k()) + '\n';
  auto write_rows = [&](const std::string& tag, const Matrix& m) {
    for (const auto& row : m) {
      out += tag;
      for (double x : row) {
        out += ' ';
        out += format_double(x);
      }
      out += '\n';
    }
  };
  write_rows("embed", layer.embed());
  write_rows("w_q", layer.w_q());
  write_rows("w_k", layer.w_k());
  write_text_atomic(path, out);
}

std::unique_ptr<ModelBackend> load_model(const std::string& kind,
                                         const std::filesystem::path& path) {
  if (kind == "scripted") return std::make_unique<ScriptedModel>(load_scripted(path));
  if (kind == "ngram") return std::make_unique<NGramModel>(load_ngram(path));
  if (kind == "attention") return std::make_unique<ToyAttentionLayer>(load_attention(path));
  throw std::invalid_argument("unknown model kind: " + kind +
                              " (expected scripted, ngram or attention)");
}

// ---------------------------------------------------------------------------
// Datasets

Dataset load_dataset(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  Dataset dataset;
  std::string line;
  int line_no = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail_at(path, line_no, std::string("bad JSON: ") + e.what());
    }
    try {
      ProblemRecord p;
      p.id = j.at("id").get<std::string>();
      p.prompt = j.at("prompt").get<std::string>();
      p.gold = j.at("answer").get<std::string>();
      if (const auto [it, inserted] = seen.emplace(p.id, line_no); !inserted) {
        fail_at(path, line_no, "duplicate problem id '" + p.id + "' (first at line " +
                                   std::to_string(it->second) + ")");
      }
      dataset.problems.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      fail_at(path, line_no, std::string("bad record: ") + e.what());
    }
  }
  return dataset;
}

// ---------------------------------------------------------------------------
// Report serialization

namespace {

nlohmann::json nullable_json(double x) {
  if (std::isnan(x)) return nullptr;
  return x;
}

nlohmann::json record_to_json(const SampleRecord& r) {
  nlohmann::json j;
  j["type"] = "record";
  j["problem_id"] = r.problem_id;
  j["method"] = method_name(r.method);
  j["n"] = r.n;
  j["c"] = r.c;
  j["uncertainty"] = r.uncertainty;
  j["voted_correct"] = r.voted_correct;
  j["voted"] = r.voted;
  j["gold"] = r.gold;
  // Every known metric name appears; reserved or unavailable ones are null.
  nlohmann::json metrics;
  for (const char* key : {kMetricPe, kMetricLnPe, kMetricLexsim, kMetricSemanticEntropy,
                          kMetricPTrue}) {
    const auto it = r.metrics.find(key);
    metrics[key] = it == r.metrics.end() ? nlohmann::json(nullptr) : nlohmann::json(it->second);
  }
  j["metrics"] = std::move(metrics);
  j["branch_count"] = r.branch_count;
  j["tokens_generated"] = r.tokens_generated;
  j["mean_branch_depth"] = nullable_json(r.mean_branch_depth);
  return j;
}

SampleRecord record_from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.problem_id = j.at("problem_id").get<std::string>();
  r.method = method_from_name(j.at("method").get<std::string>());
  r.n = j.at("n").get<int>();
  r.c = j.at("c").get<int>();
  r.uncertainty = j.at("uncertainty").get<double>();
  r.voted_correct = j.at("voted_correct").get<bool>();
  r.voted = j.at("voted").get<std::string>();
  r.gold = j.at("gold").get<std::string>();
  for (const auto& [key, value] : j.at("metrics").items()) {
    if (!value.is_null()) r.metrics[key] = value.get<double>();
  }
  r.branch_count = j.at("branch_count").get<int>();
  r.tokens_generated = j.at("tokens_generated").get<int>();
  if (!j.at("mean_branch_depth").is_null()) {
    r.mean_branch_depth = j.at("mean_branch_depth").get<double>();
  }
  return r;
}

nlohmann::json method_to_json(const MethodSummary& m) {
  nlohmann::json j;
  j["type"] = "method";
  j["method"] = method_name(m.method);
  j["budget"] = m.budget;
  j["mean_pass_at_k"] = m.mean_pass_at_k;
  j["auroc"] = m.auroc;
  j["vote_accuracy"] = m.vote_accuracy;
  j["params"] = m.params;
  return j;
}

MethodSummary method_from_json(const nlohmann::json& j) {
  MethodSummary m;
  m.method = method_from_name(j.at("method").get<std::string>());
  m.budget = j.at("budget").get<int>();
  m.mean_pass_at_k = j.at("mean_pass_at_k").get<std::vector<double>>();
  m.auroc = j.at("auroc").get<std::map<std::string, double>>();
  m.vote_accuracy = j.at("vote_accuracy").get<double>();
  m.params = j.at("params").get<std::map<std::string, std::string>>();
  return m;
}

}  // namespace

std::string report_to_jsonl(const EvalReport& report) {
  std::string out;
  nlohmann::json meta;
  meta["type"] = "meta";
  meta["master_seed"] = report.master_seed;
  meta["config"] = report.config_snapshot;
  out += meta.dump();
  out += '\n';
  for (const MethodSummary& m : report.methods) {
    out += method_to_json(m).dump();
    out += '\n';
  }
  for (const SampleRecord& r : report.records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

EvalReport report_from_jsonl(const std::string& text) {
  EvalReport report;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool saw_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "meta") {
        if (saw_meta) throw std::runtime_error("duplicate meta line");
        saw_meta = true;
        report.master_seed = j.at("master_seed").get<std::uint64_t>();
        report.config_snapshot = j.at("config").get<std::map<std::string, std::string>>();
      } else if (type == "method") {
        report.methods.push_back(method_from_json(j));
      } else if (type == "record") {
        report.records.push_back(record_from_json(j));
      } else {
        throw std::runtime_error("unknown line type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("report line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!saw_meta) throw std::runtime_error("report has no meta line");
  return report;
}

// ---------------------------------------------------------------------------
// CSV renderings

namespace {

std::string csv_value(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

}  // namespace

std::string passk_csv(const EvalReport& report) {
  std::string out = "method,k,mean_pass_at_k\n";
  for (const MethodSummary& m : report.methods) {
    for (std::size_t k = 1; k <= m.mean_pass_at_k.size(); ++k) {
      out += method_name(m.method) + ',' + std::to_string(k) + ',' +
             csv_value(m.mean_pass_at_k[k - 1]) + '\n';
    }
  }
  return out;
}

std::string auroc_csv(const EvalReport& report) {
  std::string out = "method,metric,auroc\n";
  for (const MethodSummary& m : report.methods) {
    for (const char* metric : {kMetricPe, kMetricLnPe, kMetricLexsim}) {
      const auto it = m.auroc.find(metric);
      if (it == m.auroc.end()) continue;
      out += method_name(m.method) + ',' + metric + ',' + csv_value(it->second) + '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config files and helpers

std::map<std::string, std::string> load_key_values(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return std::string();
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) fail_at(path, line_no, "expected 'key = value'");
    const std::string key = trim(trimmed.substr(0, eq));
    const std::string value = trim(trimmed.substr(eq + 1));
    if (key.empty()) fail_at(path, line_no, "empty key");
    out[key] = value;
  }
  return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto parent = path.parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw std::logic_error("format_double failed");
  return std::string(buf, ptr);
}

}  // namespace entropy_tree
