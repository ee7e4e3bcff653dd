#ifndef STA_PROBE_BACKEND_HPP
#define STA_PROBE_BACKEND_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sta_probe/common.hpp"
#include "sta_probe/norms.hpp"
#include "sta_probe/prompt.hpp"

namespace sta {

struct MaskQuery {
  const Prompt& prompt;
  const CandidateVocab& candidates;
};

struct ScoredEntry {
  std::string token;
  double prob = 0.0;                // renormalized over the scored candidates
  std::optional<double> raw_prob;   // full-vocabulary mass, when the backend has it

  friend bool operator==(const ScoredEntry&, const ScoredEntry&) = default;
};

struct ScoredCandidates {
  std::vector<ScoredEntry> entries;  // probability descending, ties by token
  std::string backend_id;
  std::string prompt_fingerprint;
  std::vector<std::string> unscorable;  // candidates the backend could not score as one unit

  const ScoredEntry* find(const std::string& token) const {
    for (const auto& e : entries)
      if (e.token == token) return &e;
    return nullptr;
  }

  friend bool operator==(const ScoredCandidates&, const ScoredCandidates&) = default;
};

inline bool entry_before(const ScoredEntry& a, const ScoredEntry& b) {
  if (a.prob != b.prob) return a.prob > b.prob;
  return a.token < b.token;
}

struct WeightedToken {
  std::string token;
  double weight = 0.0;
  std::optional<double> raw_prob;
};

/// Normalizes non-negative weights into probabilities and sorts. All-zero
/// weights yield the uniform distribution.
inline std::vector<ScoredEntry> normalize_and_rank(std::vector<WeightedToken> weights) {
  double total = 0.0;
  for (const auto& w : weights) total += w.weight;
  std::vector<ScoredEntry> entries;
  entries.reserve(weights.size());
  const double n = static_cast<double>(weights.size());
  for (auto& w : weights) {
    double p = total > 0.0 ? w.weight / total : 1.0 / n;
    entries.push_back({std::move(w.token), p, w.raw_prob});
  }
  std::sort(entries.begin(), entries.end(), entry_before);
  return entries;
}

/// Checks the ScoredCandidates contract against the query's candidates.
/// Returns an empty string when valid, otherwise the first violation.
inline std::string check_scored(const ScoredCandidates& s, const CandidateVocab& candidates) {
  std::unordered_set<std::string> seen;
  double total = 0.0;
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    const auto& e = s.entries[i];
    if (!(e.prob >= 0.0 && e.prob <= 1.0)) return "probability out of [0,1] for '" + e.token + "'";
    if (e.raw_prob && !(*e.raw_prob >= 0.0 && *e.raw_prob <= 1.0)) return "raw_prob out of [0,1] for '" + e.token + "'";
    if (!candidates.contains(e.token)) return "token '" + e.token + "' is not a candidate";
    if (!seen.insert(e.token).second) return "token '" + e.token + "' scored twice";
    if (i > 0 && entry_before(e, s.entries[i - 1])) return "entries not sorted at '" + e.token + "'";
    total += e.prob;
  }
  for (const auto& u : s.unscorable) {
    if (!candidates.contains(u)) return "unscorable token '" + u + "' is not a candidate";
    if (!seen.insert(u).second) return "token '" + u + "' both scored and unscorable";
  }
  if (seen.size() != candidates.size()) return "scored + unscorable tokens do not cover the candidates";
  if (s.entries.empty()) return "no candidate could be scored";
  if (std::abs(total - 1.0) > 1e-6) return "probabilities sum to " + std::to_string(total);
  return {};
}

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  /// Must be safe to call concurrently.
  virtual ScoredCandidates score(const MaskQuery& q) const = 0;
};

inline int rank_of(const ScoredCandidates& s, const std::string& target) {
  for (std::size_t i = 0; i < s.entries.size(); ++i)
    if (s.entries[i].token == target) return static_cast<int>(i) + 1;
  throw Error(Errc::TargetAbsent, "target '" + target + "' not among scored candidates");
}

inline void require_scorable_query(const MaskQuery& q) {
  if (q.candidates.empty()) throw Error(Errc::EmptyVocab, "query has no candidates");
  validate_prompt_text(q.prompt.text);
}

// ---------------------------------------------------------------------------
// Fixture backend: echoes score tables.

class FixtureBackend : public Backend {
 public:
  enum class Missing { Zero, Hash };

  using Table = std::map<std::string, double>;

  static constexpr double kHashCeiling = 1e-3;

  FixtureBackend() = default;
  FixtureBackend(Table table, Missing missing = Missing::Zero, std::string id = "fixture")
      : default_table_(std::move(table)), missing_(missing), id_(std::move(id)) {
    check_table(default_table_);
  }

  /// Scores for one exact prompt text take precedence over the default table.
  void set_prompt_table(const std::string& text, Table table) {
    check_table(table);
    prompt_tables_[text] = std::move(table);
  }

  /// Schema: {"backend_id": str, "missing": "zero"|"hash", "table": {tok: w},
  /// "prompts": {text: {tok: w}}}. Weights are non-negative.
  static FixtureBackend from_json(const Json& j) {
    FixtureBackend b;
    b.id_ = j.value("backend_id", "fixture");
    std::string missing = j.value("missing", "zero");
    if (missing == "hash")
      b.missing_ = Missing::Hash;
    else if (missing != "zero")
      throw Error(Errc::InvalidConfig, "fixture 'missing' must be 'zero' or 'hash'");
    if (j.contains("table")) b.default_table_ = j["table"].get<Table>();
    check_table(b.default_table_);
    if (j.contains("prompts"))
      for (const auto& [text, table] : j["prompts"].items()) b.set_prompt_table(text, table.get<Table>());
    return b;
  }

  static FixtureBackend load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::FileNotFound, "cannot open fixture table '" + path + "'");
    try {
      return from_json(Json::parse(in));
    } catch (const Json::exception& e) {
      throw Error(Errc::InvalidConfig, "fixture table '" + path + "': " + e.what());
    }
  }

  std::string id() const override { return id_; }

  ScoredCandidates score(const MaskQuery& q) const override {
    require_scorable_query(q);
    const Table* prompt_table = nullptr;
    if (auto it = prompt_tables_.find(q.prompt.text); it != prompt_tables_.end()) prompt_table = &it->second;
    std::vector<WeightedToken> weights;
    weights.reserve(q.candidates.size());
    for (const auto& tok : q.candidates.tokens()) weights.push_back({tok, weight(q.prompt.text, tok, prompt_table), {}});
    return {normalize_and_rank(std::move(weights)), id_, q.prompt.fingerprint(), {}};
  }

 private:
  static void check_table(const Table& t) {
    for (const auto& [tok, w] : t)
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error(Errc::InvalidConfig, "fixture weight for '" + tok + "' must be >= 0");
  }

  double weight(const std::string& text, const std::string& tok, const Table* prompt_table) const {
    if (prompt_table)
      if (auto it = prompt_table->find(tok); it != prompt_table->end()) return it->second;
    if (auto it = default_table_.find(tok); it != default_table_.end()) return it->second;
    if (missing_ == Missing::Zero) return 0.0;
    // deterministic pseudo-score in (0, kHashCeiling], a function of
    // (prompt, token) only, kept below listed weights
    std::uint64_t h = Fnv1a{}.update(text).update("\x1f").update(tok).digest();
    return (static_cast<double>(splitmix64(h) >> 11) + 1.0) * 0x1.0p-53 * kHashCeiling;
  }

  Table default_table_;
  std::map<std::string, Table> prompt_tables_;
  Missing missing_ = Missing::Zero;
  std::string id_ = "fixture";
};

// ---------------------------------------------------------------------------
// Norms-overlap oracle: a candidate concept scores |prompt properties ∩ its
// norms| + epsilon, every other candidate scores epsilon.

/// Recovers property phrases from a retrieval prompt's text.
inline std::vector<std::string> parse_retrieval_properties(std::string_view text) {
  const std::string head = "A " + std::string(kMask) + " ";
  if (text.substr(0, head.size()) != head || text.empty() || text.back() != '.') return {};
  std::string body(text.substr(head.size(), text.size() - head.size() - 1));
  std::vector<std::string> out;
  auto take_last = [&](const std::string& sep) {
    auto pos = body.rfind(sep);
    if (pos == std::string::npos) return false;
    std::string last = body.substr(pos + sep.size());
    body.resize(pos);
    for (auto& p : split(body, ',')) out.emplace_back(trim(p));
    out.push_back(last);
    return true;
  };
  if (!take_last(", and ") && !take_last(" and ")) out.push_back(body);
  return out;
}

class OracleBackend : public Backend {
 public:
  OracleBackend(const NormsDataset& d, double epsilon) : epsilon_(epsilon) {
    if (!(epsilon > 0.0)) throw Error(Errc::InvalidConfig, "oracle epsilon must be > 0");
    for (const auto& [name, list] : d.norms) {
      auto& set = phrases_[name];
      for (const auto& n : list) set.insert(n.phrase);
    }
    for (const auto& [name, _] : d.concepts) phrases_.try_emplace(name);
  }

  std::string id() const override { return "oracle"; }

  /// Unnormalized score of one candidate.
  double raw_score(const std::vector<std::string>& props, const std::string& candidate) const {
    auto it = phrases_.find(candidate);
    if (it == phrases_.end()) return epsilon_;
    std::size_t overlap = 0;
    std::unordered_set<std::string> counted;
    for (const auto& p : props)
      if (it->second.count(p) && counted.insert(p).second) ++overlap;
    return static_cast<double>(overlap) + epsilon_;
  }

  ScoredCandidates score(const MaskQuery& q) const override {
    require_scorable_query(q);
    const auto props =
        q.prompt.meta.properties.empty() ? parse_retrieval_properties(q.prompt.text) : q.prompt.meta.properties;
    std::vector<WeightedToken> weights;
    weights.reserve(q.candidates.size());
    for (const auto& tok : q.candidates.tokens()) weights.push_back({tok, raw_score(props, tok), {}});
    return {normalize_and_rank(std::move(weights)), id(), q.prompt.fingerprint(), {}};
  }

 private:
  double epsilon_;
  std::unordered_map<std::string, std::unordered_set<std::string>> phrases_;
};

}  // namespace sta

#endif  // STA_PROBE_BACKEND_HPP
