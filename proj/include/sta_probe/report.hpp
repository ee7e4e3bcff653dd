#ifndef STA_PROBE_REPORT_HPP
#define STA_PROBE_REPORT_HPP

// CSV tables and plot data derived from trial records. Rendering figures is
// left to whatever tool reads the CSVs.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sta_probe/runner.hpp"
#include "sta_probe/trial.hpp"

namespace sta {

inline std::string per_k_csv(const std::map<int, KPoint>& points) {
  std::ostringstream out;
  out << "k,mrr,mean_prob\n";
  for (const auto& [k, pt] : points) out << k << ',' << fmt_double(pt.mrr) << ',' << fmt_double(pt.mean_prob) << '\n';
  return out.str();
}

inline std::string series_csv(const std::map<std::string, std::map<int, KPoint>>& curves) {
  std::ostringstream out;
  out << "series,k,mrr,mean_prob,concepts,trials\n";
  for (const auto& [series, points] : curves)
    for (const auto& [k, pt] : points)
      out << series << ',' << k << ',' << fmt_double(pt.mrr) << ',' << fmt_double(pt.mean_prob) << ',' << pt.concepts
          << ',' << pt.trials << '\n';
  return out.str();
}

namespace detail {
inline std::string opt_cell(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }
}  // namespace detail

/// One row per (relation, prefix), laid out like a relation x metric table.
inline std::string elicitation_csv(const std::map<ElicitationKey, ElicitationSummary>& table) {
  std::ostringstream out;
  out << "relation,prefix,prompts,map_vocab,map_sens,spearman_rho,rho_defined,rho_skipped,skipped_vocab,skipped_sens\n";
  for (const auto& [key, s] : table)
    out << to_string(key.relation) << ',' << (key.prefix ? "true" : "false") << ',' << s.prompts << ','
        << detail::opt_cell(s.report.map_vocab) << ',' << detail::opt_cell(s.report.map_sens) << ','
        << detail::opt_cell(s.report.spearman_rho) << ',' << s.report.rho_defined << ',' << s.report.rho_skipped << ','
        << s.skipped_vocab << ',' << s.skipped_sens << '\n';
  return out.str();
}

inline std::string context_ablation_csv(const std::vector<ContextAblationRow>& rows) {
  std::ostringstream out;
  out << "relation,map_vocab_prefix,map_vocab_no_prefix,delta_map_vocab,map_sens_prefix,map_sens_no_prefix,"
         "delta_map_sens\n";
  for (const auto& r : rows)
    out << to_string(r.relation) << ',' << detail::opt_cell(r.with_prefix.report.map_vocab) << ','
        << detail::opt_cell(r.without_prefix.report.map_vocab) << ',' << detail::opt_cell(r.delta_map_vocab) << ','
        << detail::opt_cell(r.with_prefix.report.map_sens) << ',' << detail::opt_cell(r.without_prefix.report.map_sens)
        << ',' << detail::opt_cell(r.delta_map_sens) << '\n';
  return out.str();
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Qualitative excerpt: the top-n predictions of selected trials, one row per
/// record, each traceable by record id.
inline std::string excerpt_csv(const std::vector<TrialRecord>& records, const std::set<int>& ks = {1, 5, 10}) {
  std::ostringstream out;
  out << "id,concept,k,prompt,target,rank,top_n\n";
  for (const auto& r : records) {
    if (r.meta.family == PromptFamily::Retrieval && !ks.count(r.meta.k)) continue;
    if (r.meta.family == PromptFamily::Elicitation && r.condition != "vocab") continue;
    std::string top;
    for (const auto& [tok, p] : r.top_n) {
      if (!top.empty()) top += "; ";
      top += tok + " [" + fmt_double(p, 3) + "]";
    }
    out << csv_quote(r.id) << ',' << r.meta.concept_name << ',' << r.meta.k << ',' << csv_quote(r.prompt_text) << ','
        << r.target.value_or("") << ',' << (r.rank ? std::to_string(*r.rank) : std::string()) << ',' << csv_quote(top)
        << '\n';
  }
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::FileNotFound, "cannot write '" + path.string() + "'");
  out << text;
}

/// Writes `curve_mrr.csv` and `curve_prob.csv` (columns series,k,<metric>)
/// for the retrieval records. Returns the files written.
inline std::vector<std::filesystem::path> emit_plot_data(const std::vector<TrialRecord>& records,
                                                         const std::filesystem::path& dir) {
  std::vector<TrialRecord> retrieval;
  for (const auto& r : records)
    if (r.meta.family == PromptFamily::Retrieval) retrieval.push_back(r);
  if (retrieval.empty()) throw Error(Errc::EmptyInput, "no retrieval records to plot");
  auto curves = aggregate_by_series(retrieval);
  std::ostringstream mrr, prob;
  mrr << "series,k,mrr\n";
  prob << "series,k,mean_prob\n";
  for (const auto& [series, points] : curves)
    for (const auto& [k, pt] : points) {
      mrr << series << ',' << k << ',' << fmt_double(pt.mrr) << '\n';
      prob << series << ',' << k << ',' << fmt_double(pt.mean_prob) << '\n';
    }
  std::filesystem::create_directories(dir);
  write_text(dir / "curve_mrr.csv", mrr.str());
  write_text(dir / "curve_prob.csv", prob.str());
  return {dir / "curve_mrr.csv", dir / "curve_prob.csv"};
}

/// Everything `report` derives from a trial directory.
struct ReportBundle {
  std::map<std::string, std::map<int, KPoint>> curves;
  std::map<ElicitationKey, ElicitationSummary> relations;
  std::string excerpts;
};

inline ReportBundle build_report(const std::vector<TrialRecord>& records) {
  std::vector<TrialRecord> retrieval, elicitation;
  for (const auto& r : records) {
    if (r.meta.family == PromptFamily::Retrieval)
      retrieval.push_back(r);
    else if (r.meta.family == PromptFamily::Elicitation)
      elicitation.push_back(r);
  }
  ReportBundle b;
  if (!retrieval.empty()) b.curves = aggregate_by_series(retrieval);
  if (!elicitation.empty()) b.relations = aggregate_elicitation(elicitation);
  b.excerpts = excerpt_csv(records);
  return b;
}

/// Per-k table for a single-series run, the series table otherwise.
inline std::string curve_table(const ReportBundle& b) {
  if (b.curves.size() == 1) return per_k_csv(b.curves.begin()->second);
  return series_csv(b.curves);
}

}  // namespace sta

#endif  // STA_PROBE_REPORT_HPP
