#ifndef STA_PROBE_METRICS_HPP
#define STA_PROBE_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sta_probe/common.hpp"
#include "sta_probe/prompt.hpp"

namespace sta {

inline double reciprocal_rank(int rank) {
  if (rank < 1) throw Error(Errc::EmptyInput, "rank must be >= 1, got " + std::to_string(rank));
  return 1.0 / static_cast<double>(rank);
}

inline double mean_reciprocal_rank(const std::vector<int>& ranks) {
  if (ranks.empty()) throw Error(Errc::EmptyInput, "mean reciprocal rank of no ranks");
  double sum = 0.0;
  for (int r : ranks) sum += reciprocal_rank(r);
  return sum / static_cast<double>(ranks.size());
}

/// Sum over positions j of precision@j times the recall gained at j.
/// `ranking` lists tokens best first; every relevant token must appear in it.
inline double average_precision(const std::vector<std::string>& ranking, const std::unordered_set<std::string>& relevant) {
  if (relevant.empty()) throw Error(Errc::EmptyInput, "average precision needs at least one relevant token");
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t j = 0; j < ranking.size() && hits < relevant.size(); ++j) {
    if (relevant.count(ranking[j])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(j + 1);
    }
  }
  if (hits != relevant.size()) {
    for (const auto& r : relevant)
      if (std::find(ranking.begin(), ranking.end(), r) == ranking.end())
        throw Error(Errc::RelevantNotInRanking, "relevant token '" + r + "' is not ranked");
  }
  return sum / static_cast<double>(relevant.size());
}

struct ApCase {
  std::vector<std::string> ranking;
  std::unordered_set<std::string> relevant;
};

inline double mean_average_precision(const std::vector<ApCase>& cases) {
  if (cases.empty()) throw Error(Errc::EmptyInput, "mean average precision of no cases");
  double sum = 0.0;
  for (const auto& c : cases) sum += average_precision(c.ranking, c.relevant);
  return sum / static_cast<double>(cases.size());
}

/// 1-based ranks (ascending values get lower ranks); ties share the mean of
/// the positions they span.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    double mean = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = mean;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(Errc::ZeroVariance, "correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman rho between human PF and model probability over the gold tokens.
inline double spearman_pf_correlation(const std::vector<GoldCompletion>& gold,
                                      const std::unordered_map<std::string, double>& probs) {
  if (gold.size() < 2) throw Error(Errc::TooFewPoints, "need at least 2 gold completions, got " + std::to_string(gold.size()));
  std::vector<double> pf, p;
  for (const auto& g : gold) {
    auto it = probs.find(g.token);
    if (it == probs.end()) throw Error(Errc::MissingProbability, "no probability for gold token '" + g.token + "'");
    pf.push_back(static_cast<double>(g.pf));
    p.push_back(it->second);
  }
  return pearson(average_ranks(pf), average_ranks(p));
}

/// Summary over a set of trials. Fields that do not apply to the run are
/// absent.
struct MetricReport {
  std::optional<double> mrr;
  std::optional<double> mean_target_prob;
  std::optional<double> map_vocab;
  std::optional<double> map_sens;
  std::optional<double> spearman_rho;
  std::size_t n = 0;
  std::size_t rho_defined = 0;
  std::size_t rho_skipped = 0;

  /// Empty when every bound holds, otherwise the first violation.
  std::string check_bounds() const {
    auto in = [](const std::optional<double>& v, double lo, double hi, bool open_lo) {
      return !v || ((open_lo ? *v > lo : *v >= lo) && *v <= hi);
    };
    if (!in(mrr, 0.0, 1.0, true)) return "mrr out of (0,1]";
    if (!in(mean_target_prob, 0.0, 1.0, false)) return "mean_target_prob out of [0,1]";
    if (!in(map_vocab, 0.0, 1.0, false)) return "map_vocab out of [0,1]";
    if (!in(map_sens, 0.0, 1.0, false)) return "map_sens out of [0,1]";
    if (!in(spearman_rho, -1.0, 1.0, false)) return "spearman_rho out of [-1,1]";
    if (n < 1) return "n < 1";
    return {};
  }
};

inline Json to_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json j;
  j["mrr"] = opt(r.mrr);
  j["mean_target_prob"] = opt(r.mean_target_prob);
  j["map_vocab"] = opt(r.map_vocab);
  j["map_sens"] = opt(r.map_sens);
  j["spearman_rho"] = opt(r.spearman_rho);
  j["n"] = r.n;
  j["rho_defined"] = r.rho_defined;
  j["rho_skipped"] = r.rho_skipped;
  return j;
}

inline constexpr const char* kMetricCsvHeader = "mrr,mean_target_prob,map_vocab,map_sens,spearman_rho,n";

inline std::string to_csv_row(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
  return opt(r.mrr) + "," + opt(r.mean_target_prob) + "," + opt(r.map_vocab) + "," + opt(r.map_sens) + "," +
         opt(r.spearman_rho) + "," + std::to_string(r.n);
}

}  // namespace sta

#endif  // STA_PROBE_METRICS_HPP
