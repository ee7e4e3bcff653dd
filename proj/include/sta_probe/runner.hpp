#ifndef STA_PROBE_RUNNER_HPP
#define STA_PROBE_RUNNER_HPP

// Experiment orchestration: concept retrieval, category probes, selection /
// ordering ablation with a random baseline, property elicitation, context
// ablation and ad-hoc prompts.
//
// Prompts are evaluated by a bounded pool of workers. Every job writes into
// its own pre-assigned slot, so output order (and bytes) never depends on the
// worker count.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sta_probe/backend.hpp"
#include "sta_probe/metrics.hpp"
#include "sta_probe/norms.hpp"
#include "sta_probe/prompt.hpp"
#include "sta_probe/trial.hpp"

namespace sta {

struct RunOptions {
  std::size_t k_max = 10;
  Selection selection = Selection::top();
  Ordering order = Ordering::decreasing();
  std::uint64_t seed = 1;
  std::size_t top_n = 5;
  std::size_t workers = 1;
  std::int64_t timestamp = 0;
};

struct RunContext {
  const NormsDataset& dataset;
  const CandidateVocab& vocab;
  const Backend& backend;
  RunOptions options;
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
/// exception thrown by any job is rethrown after all workers stop.
template <typename T>
std::vector<T> parallel_map(std::size_t n, std::size_t workers, const std::function<T(std::size_t)>& fn) {
  std::vector<std::optional<T>> slots(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::string k_label(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "k%02d", k);
  return buf;
}

inline TrialRecord base_record(const Prompt& p, const ScoredCandidates& s, const RunContext& ctx,
                               std::size_t candidate_count) {
  TrialRecord r;
  r.meta = p.meta;
  r.prompt_text = p.text;
  r.target = p.target;
  r.backend_id = s.backend_id;
  r.timestamp = ctx.options.timestamp;
  r.candidate_count = candidate_count;
  for (std::size_t i = 0; i < s.entries.size() && i < ctx.options.top_n; ++i)
    r.top_n.emplace_back(s.entries[i].token, s.entries[i].prob);
  return r;
}

/// Scores a retrieval prompt against the context's vocab and records the
/// target's rank and probability, or why it could not be ranked.
inline TrialRecord score_retrieval(const RunContext& ctx, const Prompt& p, std::string id,
                                   std::vector<std::uint64_t> seeds) {
  ScoredCandidates s = ctx.backend.score({p, ctx.vocab});
  TrialRecord r = base_record(p, s, ctx, ctx.vocab.size());
  r.id = std::move(id);
  r.seeds = std::move(seeds);
  const std::string& target = *p.target;
  if (const ScoredEntry* e = s.find(target)) {
    r.rank = rank_of(s, target);
    r.prob = e->prob;
    r.raw_prob = e->raw_prob;
  } else if (std::find(s.unscorable.begin(), s.unscorable.end(), target) != s.unscorable.end()) {
    r.skip_reason = "target_unscorable";
  } else {
    r.skip_reason = "target_absent";
  }
  return r;
}

struct Eligibility {
  std::vector<std::string> concepts;
  std::vector<DroppedConcept> dropped;       // vocab / vowel-sound filter
  std::vector<std::string> too_few_norms;    // fewer than k_max norms
};

/// Concepts usable as retrieval targets: in the vocab, consonant-initial,
/// and (when `min_norms` > 0) with at least `min_norms` norms.
inline Eligibility eligible_concepts(const NormsDataset& d, const CandidateVocab& v, std::size_t min_norms) {
  Eligibility e;
  FilterResult f = filter_concepts(d, v, /*drop_vowel_sound=*/true);
  e.dropped = std::move(f.dropped);
  for (const auto& [name, _] : f.dataset.concepts) {
    if (d.norms_of(name).size() < min_norms)
      e.too_few_norms.push_back(name);
    else
      e.concepts.push_back(name);
  }
  return e;
}

struct RetrievalJob {
  Prompt prompt;
  std::string id;
  std::vector<std::uint64_t> seeds;
};

inline std::vector<TrialRecord> run_jobs(const RunContext& ctx, const std::vector<RetrievalJob>& jobs) {
  return parallel_map<TrialRecord>(jobs.size(), ctx.options.workers, [&](std::size_t i) {
    return score_retrieval(ctx, jobs[i].prompt, jobs[i].id, jobs[i].seeds);
  });
}

inline void append_series(std::vector<RetrievalJob>& jobs, std::vector<Prompt> series, const std::string& label,
                          const std::string& suffix, const std::vector<std::uint64_t>& seeds) {
  for (auto& p : series) {
    p.meta.series = label;
    std::string id = label + "/" + p.meta.concept_name + "/" + k_label(p.meta.k) + suffix;
    jobs.push_back({std::move(p), std::move(id), seeds});
  }
}

/// One record per eligible concept and k = 1..k_max, in concept then k order.
inline std::vector<TrialRecord> run_concept_retrieval(const RunContext& ctx, const std::string& series = "all") {
  const auto& o = ctx.options;
  if (o.k_max < 1) throw Error(Errc::InvalidConfig, "k_max must be >= 1");
  Eligibility e = eligible_concepts(ctx.dataset, ctx.vocab, o.k_max);
  if (e.concepts.empty()) throw Error(Errc::NoEligibleConcepts, "no concept passes the vocab, vowel and norm-count filters");
  std::vector<RetrievalJob> jobs;
  for (const auto& name : e.concepts)
    append_series(jobs, build_retrieval_series(ctx.dataset, name, o.selection, o.order, o.k_max), series, "", {o.seed});
  return run_jobs(ctx, jobs);
}

inline constexpr FeatureCategory kProbeCategories[] = {FeatureCategory::VisualPerceptual, FeatureCategory::Functional,
                                                       FeatureCategory::Encyclopaedic};

/// Retrieval series built only from one category's properties. A concept
/// with fewer than k_max such properties contributes up to what it has.
inline std::vector<TrialRecord> run_category_probe(const RunContext& ctx, FeatureCategory category) {
  if (std::find(std::begin(kProbeCategories), std::end(kProbeCategories), category) == std::end(kProbeCategories))
    throw Error(Errc::UnsupportedCategory, std::string("category '") + to_string(category) +
                                               "' is not probed; use visual_perceptual, functional or encyclopaedic");
  const auto& o = ctx.options;
  if (o.k_max < 1) throw Error(Errc::InvalidConfig, "k_max must be >= 1");
  Eligibility e = eligible_concepts(ctx.dataset, ctx.vocab, 0);
  std::vector<RetrievalJob> jobs;
  const std::string label = to_string(category);
  for (const auto& name : e.concepts) {
    std::vector<PropertyNorm> pool;
    for (const auto& n : ctx.dataset.norms_of(name))
      if (n.category == category) pool.push_back(n);
    if (pool.empty()) continue;
    auto props = select_from(pool, std::min(o.k_max, pool.size()), o.selection, o.order);
    auto series = build_retrieval_series(ctx.dataset.concept_of(name), props);
    for (auto& p : series) {
      p.meta.category_filter = category;
      p.meta.selection = o.selection.label();
      p.meta.order = o.order.label();
    }
    append_series(jobs, std::move(series), label, "", {o.seed});
  }
  if (jobs.empty()) throw Error(Errc::NoEligibleConcepts, "no eligible concept has " + label + " properties");
  return run_jobs(ctx, jobs);
}

inline constexpr std::size_t kBaselineSets = 5;
inline constexpr std::size_t kBaselinePermutations = 5;
inline constexpr const char* kBaselineSeries = "random_baseline";

/// Four {top,bottom} x {decreasing,increasing} runs plus a random baseline of
/// 5 random property sets x 5 permutations per concept. Keyed by series.
inline std::map<std::string, std::vector<TrialRecord>> run_selection_ablation(const RunContext& ctx) {
  const auto& o = ctx.options;
  if (o.k_max < 1) throw Error(Errc::InvalidConfig, "k_max must be >= 1");
  Eligibility e = eligible_concepts(ctx.dataset, ctx.vocab, o.k_max);
  if (e.concepts.empty()) throw Error(Errc::NoEligibleConcepts, "no concept passes the vocab, vowel and norm-count filters");

  const std::pair<Selection, Ordering> strategies[] = {
      {Selection::top(), Ordering::decreasing()},
      {Selection::top(), Ordering::increasing()},
      {Selection::bottom(), Ordering::decreasing()},
      {Selection::bottom(), Ordering::increasing()},
  };
  std::vector<RetrievalJob> jobs;
  for (const auto& [sel, ord] : strategies) {
    const std::string label = sel.label() + "-" + ord.label();
    for (const auto& name : e.concepts)
      append_series(jobs, build_retrieval_series(ctx.dataset, name, sel, ord, o.k_max), label, "", {o.seed});
  }
  for (const auto& name : e.concepts) {
    for (std::size_t s = 0; s < kBaselineSets; ++s) {
      const std::uint64_t set_seed = derive_seed(o.seed, "baseline/" + name + "/set" + std::to_string(s));
      for (std::size_t t = 0; t < kBaselinePermutations; ++t) {
        const std::uint64_t perm_seed = derive_seed(set_seed, "perm" + std::to_string(t));
        auto series = build_retrieval_series(ctx.dataset, name, Selection::random(set_seed),
                                             Ordering::shuffled(perm_seed), o.k_max);
        append_series(jobs, std::move(series), kBaselineSeries,
                      "/s" + std::to_string(s) + "p" + std::to_string(t), {o.seed, set_seed, perm_seed});
      }
    }
  }
  std::map<std::string, std::vector<TrialRecord>> grouped;
  for (auto& r : run_jobs(ctx, jobs)) grouped[r.meta.series].push_back(std::move(r));
  return grouped;
}

// ---------------------------------------------------------------------------
// Elicitation

struct ElicitationRun {
  std::vector<TrialRecord> records;  // per concept: "vocab" then "sens"
  ElicitationSummary summary;
  RelationKind relation = RelationKind::Is;
  bool prefix = true;
};

namespace detail {

inline TrialRecord elicitation_record(const RunContext& ctx, const Prompt& p, const CandidateVocab& candidates,
                                      const std::vector<GoldCompletion>& relevant, const std::string& condition) {
  TrialRecord r;
  const std::string id = std::string(to_string(*p.meta.relation)) + "/" + (p.meta.prefix_used ? "prefix" : "noprefix") +
                         "/" + condition + "/" + p.meta.concept_name;
  if (relevant.empty() || candidates.empty()) {
    r.meta = p.meta;
    r.prompt_text = p.text;
    r.timestamp = ctx.options.timestamp;
    r.candidate_count = candidates.size();
    r.id = id;
    r.condition = condition;
    r.backend_id = ctx.backend.id();
    r.seeds = {ctx.options.seed};
    r.skip_reason = "gold_not_in_vocab";
    return r;
  }
  ScoredCandidates s = ctx.backend.score({p, candidates});
  r = base_record(p, s, ctx, candidates.size());
  r.id = id;
  r.condition = condition;
  r.seeds = {ctx.options.seed};
  std::vector<std::string> ranking;
  ranking.reserve(s.entries.size());
  for (const auto& e : s.entries) ranking.push_back(e.token);
  std::unordered_set<std::string> relevant_set;
  for (const auto& g : relevant)
    if (s.find(g.token)) {
      relevant_set.insert(g.token);
      r.gold.push_back(g);
    }
  if (relevant_set.empty()) {
    r.skip_reason = "gold_unscorable";
    return r;
  }
  r.average_precision = average_precision(ranking, relevant_set);
  if (condition == "vocab" && r.gold.size() >= 2) {
    std::unordered_map<std::string, double> probs;
    for (const auto& g : r.gold) probs[g.token] = s.find(g.token)->raw_prob.value_or(s.find(g.token)->prob);
    try {
      r.spearman_rho = spearman_pf_correlation(r.gold, probs);
    } catch (const Error& e) {
      if (e.code() != Errc::ZeroVariance && e.code() != Errc::TooFewPoints) throw;
    }
  }
  return r;
}

}  // namespace detail

/// Scores each concept's elicitation prompt over (a) the full candidate
/// vocab and (b) the sensible vocab restricted to the candidate vocab. Gold
/// tokens outside the candidate vocab cannot be ranked and are dropped from
/// both conditions, so (b) ranks a subset of (a) with the same relevant set.
inline ElicitationRun run_elicitation(const RunContext& ctx, RelationKind relation, bool with_prefix) {
  if (relation == RelationKind::Other)
    throw Error(Errc::UnsupportedRelation, "elicitation needs one of is, is_a, has, has_a, made_of");
  struct Job {
    Prompt prompt;
    std::vector<GoldCompletion> relevant;
  };
  std::vector<Job> jobs;
  for (const auto& [name, c] : ctx.dataset.concepts) {
    auto gold = gold_completions(ctx.dataset, name, relation);
    if (gold.empty()) continue;
    Prompt p = build_elicitation_prompt(c, relation, with_prefix);
    p.gold = gold;
    p.meta.series = to_string(relation);
    std::vector<GoldCompletion> relevant;
    for (const auto& g : gold)
      if (ctx.vocab.contains(g.token)) relevant.push_back(g);
    jobs.push_back({std::move(p), std::move(relevant)});
  }
  if (jobs.empty())
    throw Error(Errc::NoGoldCompletions, std::string("no concept has a single-word '") + to_string(relation) + "' completion");

  const CandidateVocab sens = intersect_vocab(sensible_vocab(ctx.dataset, relation), ctx.vocab);
  auto pairs = parallel_map<std::pair<TrialRecord, TrialRecord>>(jobs.size(), ctx.options.workers, [&](std::size_t i) {
    const Job& j = jobs[i];
    return std::make_pair(detail::elicitation_record(ctx, j.prompt, ctx.vocab, j.relevant, "vocab"),
                          detail::elicitation_record(ctx, j.prompt, sens, j.relevant, "sens"));
  });
  ElicitationRun run;
  run.relation = relation;
  run.prefix = with_prefix;
  for (auto& [v, s] : pairs) {
    run.records.push_back(std::move(v));
    run.records.push_back(std::move(s));
  }
  auto agg = aggregate_elicitation(run.records);
  run.summary = agg.at({relation, with_prefix});
  return run;
}

struct ContextAblationRow {
  RelationKind relation;
  ElicitationSummary with_prefix;
  ElicitationSummary without_prefix;
  // without - with: negative when dropping the prefix hurts
  std::optional<double> delta_map_vocab;
  std::optional<double> delta_map_sens;
};

struct ContextAblation {
  std::vector<ContextAblationRow> rows;
  std::vector<TrialRecord> records;
};

inline ContextAblation run_context_ablation(const RunContext& ctx, const std::vector<RelationKind>& relations) {
  ContextAblation out;
  auto delta = [](const std::optional<double>& without, const std::optional<double>& with) -> std::optional<double> {
    if (without && with) return *without - *with;
    return std::nullopt;
  };
  for (RelationKind rel : relations) {
    ElicitationRun with = run_elicitation(ctx, rel, true);
    ElicitationRun without = run_elicitation(ctx, rel, false);
    ContextAblationRow row{rel, with.summary, without.summary, {}, {}};
    row.delta_map_vocab = delta(without.summary.report.map_vocab, with.summary.report.map_vocab);
    row.delta_map_sens = delta(without.summary.report.map_sens, with.summary.report.map_sens);
    out.rows.push_back(row);
    for (auto& r : with.records) out.records.push_back(std::move(r));
    for (auto& r : without.records) out.records.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ad-hoc prompts

/// Top-n excerpt of the backend's ranking for an arbitrary one-mask prompt.
inline ScoredCandidates run_custom_prompt(const std::string& text, const CandidateVocab& candidates,
                                          const Backend& backend, std::size_t top_n) {
  validate_prompt_text(text);
  Prompt p;
  p.text = text;
  p.meta.family = PromptFamily::Custom;
  ScoredCandidates s = backend.score({p, candidates});
  if (s.entries.size() > top_n) s.entries.resize(top_n);
  return s;
}

}  // namespace sta

#endif  // STA_PROBE_RUNNER_HPP
