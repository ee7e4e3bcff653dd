#ifndef STA_PROBE_TRIAL_HPP
#define STA_PROBE_TRIAL_HPP

// TrialRecord: one prompt x backend evaluation, the unit of persistence.
// Aggregations over records (per-k curves, per-relation summaries) live here
// so that in-memory and persisted results go through the same code.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sta_probe/backend.hpp"
#include "sta_probe/metrics.hpp"
#include "sta_probe/prompt.hpp"

namespace sta {

struct TrialRecord {
  std::string id;
  PromptMeta meta;
  std::string prompt_text;
  std::optional<std::string> target;
  std::string backend_id;
  std::string condition;  // "vocab" / "sens" for elicitation, empty otherwise
  std::optional<int> rank;
  std::optional<double> prob;
  std::optional<double> raw_prob;
  std::vector<std::pair<std::string, double>> top_n;
  std::int64_t timestamp = 0;
  std::vector<std::uint64_t> seeds;  // lineage, outermost first
  std::optional<std::string> skip_reason;
  std::size_t candidate_count = 0;
  std::vector<GoldCompletion> gold;  // relevant completions actually ranked
  std::optional<double> average_precision;
  std::optional<double> spearman_rho;

  bool skipped() const { return skip_reason.has_value(); }

  /// Target probability as reported: full-vocabulary mass when the backend
  /// supplied it, renormalized candidate probability otherwise.
  std::optional<double> reported_prob() const { return raw_prob ? raw_prob : prob; }

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

inline Json to_json(const TrialRecord& r) {
  auto opt = [](const auto& v) { return v ? Json(*v) : Json(nullptr); };
  Json j;
  j["id"] = r.id;
  j["meta"] = meta_to_json(r.meta);
  j["prompt"] = r.prompt_text;
  j["target"] = opt(r.target);
  j["backend_id"] = r.backend_id;
  j["condition"] = r.condition;
  j["rank"] = opt(r.rank);
  j["prob"] = opt(r.prob);
  j["raw_prob"] = opt(r.raw_prob);
  Json top = Json::array();
  for (const auto& [tok, p] : r.top_n) top.push_back(Json::array({tok, p}));
  j["top_n"] = std::move(top);
  j["timestamp"] = r.timestamp;
  j["seeds"] = r.seeds;
  j["skip_reason"] = opt(r.skip_reason);
  j["candidate_count"] = r.candidate_count;
  Json gold = Json::array();
  for (const auto& g : r.gold) gold.push_back({{"token", g.token}, {"pf", g.pf}});
  j["gold"] = std::move(gold);
  j["average_precision"] = opt(r.average_precision);
  j["spearman_rho"] = opt(r.spearman_rho);
  return j;
}

inline TrialRecord trial_from_json(const Json& j) {
  auto opt_d = [&](const char* k) -> std::optional<double> {
    return j.contains(k) && !j[k].is_null() ? std::optional<double>(j[k].get<double>()) : std::nullopt;
  };
  TrialRecord r;
  r.id = j.at("id").get<std::string>();
  r.meta = meta_from_json(j.at("meta"));
  r.prompt_text = j.at("prompt").get<std::string>();
  if (!j["target"].is_null()) r.target = j["target"].get<std::string>();
  r.backend_id = j.at("backend_id").get<std::string>();
  r.condition = j.value("condition", "");
  if (j.contains("rank") && !j["rank"].is_null()) r.rank = j["rank"].get<int>();
  r.prob = opt_d("prob");
  r.raw_prob = opt_d("raw_prob");
  for (const auto& e : j.at("top_n")) r.top_n.emplace_back(e.at(0).get<std::string>(), e.at(1).get<double>());
  r.timestamp = j.value("timestamp", std::int64_t{0});
  r.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  if (j.contains("skip_reason") && !j["skip_reason"].is_null()) r.skip_reason = j["skip_reason"].get<std::string>();
  r.candidate_count = j.value("candidate_count", std::size_t{0});
  if (j.contains("gold"))
    for (const auto& g : j["gold"]) r.gold.push_back({g.at("token").get<std::string>(), g.at("pf").get<int>()});
  r.average_precision = opt_d("average_precision");
  r.spearman_rho = opt_d("spearman_rho");
  return r;
}

inline void write_trials(const std::string& path, const std::vector<TrialRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::FileNotFound, "cannot write '" + path + "'");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<TrialRecord> read_trials(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::FileNotFound, "cannot open trials file '" + path + "'");
  std::vector<TrialRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(trial_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw Error(Errc::MalformedRow, std::string("bad trial record: ") + e.what(), lineno);
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Aggregation

struct KPoint {
  double mrr = 0.0;
  double mean_prob = 0.0;
  std::size_t concepts = 0;  // cohort size at this k
  std::size_t trials = 0;
};

namespace detail {
struct ConceptAcc {
  double rr = 0.0;
  double prob = 0.0;
  std::size_t n = 0;
};
}  // namespace detail

/// Per-k means over concepts. Each concept's trials at a given k are first
/// averaged (one trial normally; 25 for the random baseline), then concepts
/// are averaged. Skipped trials are excluded.
inline std::map<int, KPoint> aggregate_by_k(const std::vector<TrialRecord>& records) {
  std::map<int, std::map<std::string, detail::ConceptAcc>> acc;
  for (const auto& r : records) {
    if (r.meta.family != PromptFamily::Retrieval)
      throw Error(Errc::MixedFamily, "record '" + r.id + "' is not a retrieval trial");
    if (r.skipped() || !r.rank) continue;
    auto& a = acc[r.meta.k][r.meta.concept_name];
    a.rr += reciprocal_rank(*r.rank);
    a.prob += r.reported_prob().value_or(0.0);
    ++a.n;
  }
  std::map<int, KPoint> out;
  for (const auto& [k, by_concept] : acc) {
    KPoint pt;
    for (const auto& [_, a] : by_concept) {
      pt.mrr += a.rr / static_cast<double>(a.n);
      pt.mean_prob += a.prob / static_cast<double>(a.n);
      pt.trials += a.n;
    }
    pt.concepts = by_concept.size();
    pt.mrr /= static_cast<double>(pt.concepts);
    pt.mean_prob /= static_cast<double>(pt.concepts);
    out[k] = pt;
  }
  return out;
}

/// aggregate_by_k applied per series label.
inline std::map<std::string, std::map<int, KPoint>> aggregate_by_series(const std::vector<TrialRecord>& records) {
  std::map<std::string, std::vector<TrialRecord>> groups;
  for (const auto& r : records) groups[r.meta.series].push_back(r);
  std::map<std::string, std::map<int, KPoint>> out;
  for (const auto& [series, recs] : groups) out[series] = aggregate_by_k(recs);
  return out;
}

struct ElicitationKey {
  RelationKind relation;
  bool prefix;
  auto operator<=>(const ElicitationKey&) const = default;
};

struct ElicitationSummary {
  MetricReport report;
  std::size_t prompts = 0;        // concepts with a non-empty gold set
  std::size_t skipped_vocab = 0;  // prompts whose gold fell outside the vocab
  std::size_t skipped_sens = 0;
};

/// Per (relation, prefix) summary of elicitation records: mAP over the full
/// candidate vocab, mAP over the sensible vocab, and mean rho over the cases
/// where rho is defined.
inline std::map<ElicitationKey, ElicitationSummary> aggregate_elicitation(const std::vector<TrialRecord>& records) {
  struct Acc {
    double ap_vocab = 0, ap_sens = 0, rho = 0;
    std::size_t n_vocab = 0, n_sens = 0, n_rho = 0, rho_skipped = 0, skip_vocab = 0, skip_sens = 0;
    std::set<std::string> concepts;
  };
  std::map<ElicitationKey, Acc> acc;
  for (const auto& r : records) {
    if (r.meta.family != PromptFamily::Elicitation)
      throw Error(Errc::MixedFamily, "record '" + r.id + "' is not an elicitation trial");
    if (!r.meta.relation) throw Error(Errc::MalformedRow, "elicitation record '" + r.id + "' has no relation");
    auto& a = acc[{*r.meta.relation, r.meta.prefix_used}];
    a.concepts.insert(r.meta.concept_name);
    const bool vocab = r.condition == "vocab";
    if (r.skipped() || !r.average_precision) {
      ++(vocab ? a.skip_vocab : a.skip_sens);
      continue;
    }
    if (vocab) {
      a.ap_vocab += *r.average_precision;
      ++a.n_vocab;
      if (r.spearman_rho) {
        a.rho += *r.spearman_rho;
        ++a.n_rho;
      } else {
        ++a.rho_skipped;
      }
    } else {
      a.ap_sens += *r.average_precision;
      ++a.n_sens;
    }
  }
  std::map<ElicitationKey, ElicitationSummary> out;
  for (const auto& [key, a] : acc) {
    ElicitationSummary s;
    s.prompts = a.concepts.size();
    s.skipped_vocab = a.skip_vocab;
    s.skipped_sens = a.skip_sens;
    if (a.n_vocab) s.report.map_vocab = a.ap_vocab / static_cast<double>(a.n_vocab);
    if (a.n_sens) s.report.map_sens = a.ap_sens / static_cast<double>(a.n_sens);
    if (a.n_rho) s.report.spearman_rho = a.rho / static_cast<double>(a.n_rho);
    s.report.n = a.n_vocab;
    s.report.rho_defined = a.n_rho;
    s.report.rho_skipped = a.rho_skipped;
    out[key] = s;
  }
  return out;
}

}  // namespace sta

#endif  // STA_PROBE_TRIAL_HPP
