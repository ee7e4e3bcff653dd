#ifndef STA_PROBE_CLI_HPP
#define STA_PROBE_CLI_HPP

// Command-line surface. Exit codes: 0 ok, 2 usage, 3 data validation,
// 4 backend failure. Diagnostics go to the error stream.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sta_probe/backend.hpp"
#include "sta_probe/norms.hpp"
#include "sta_probe/remote_backend.hpp"
#include "sta_probe/report.hpp"
#include "sta_probe/runner.hpp"
#include "sta_probe/trial.hpp"

namespace sta::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitBackend = 4;
inline constexpr const char* kVersion = "1.0.0";

struct Options {
  std::string norms;
  std::vector<std::string> vocab;
  std::string backend = "oracle";
  std::string endpoint;
  std::string model_id;
  std::string fixture_table;
  double epsilon = 1e-3;
  std::size_t k_max = 10;
  std::vector<std::string> relations;
  std::string category;
  std::string selection = "top_pf";
  std::string order = "decreasing_pf";
  std::uint64_t seed = 1;
  bool no_prefix = false;
  std::string out;
  std::size_t top_n = 5;
  std::size_t workers = 1;
  int max_retries = 3;
  int max_in_flight = 4;
  std::string text;
  std::string prompts_file;
  std::string report_dir;
};

/// Usage errors detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline int exit_code_for(const Error& e) {
  switch (error_domain(e.code())) {
    case ErrorDomain::Usage: return kExitUsage;
    case ErrorDomain::Data: return kExitData;
    case ErrorDomain::Backend: return kExitBackend;
  }
  return kExitData;
}

inline std::int64_t run_timestamp() {
  // Fixed unless SOURCE_DATE_EPOCH is set, so reruns are byte-identical.
  if (const char* s = std::getenv("SOURCE_DATE_EPOCH")) return std::strtoll(s, nullptr, 10);
  return 0;
}

inline std::filesystem::path cache_dir() {
  if (const char* s = std::getenv("STA_PROBE_CACHE_DIR"); s && *s) return s;
  return ".sta_probe_cache";
}

/// Loaded inputs shared by the experiment subcommands.
struct Session {
  Options opt;
  NormsDataset dataset;
  CandidateVocab vocab;
  std::unique_ptr<Backend> backend;
  std::vector<std::string> warnings;

  RunContext context() const {
    RunOptions ro;
    ro.k_max = opt.k_max;
    ro.seed = opt.seed;
    auto sel = parse_selection(opt.selection, opt.seed);
    auto ord = parse_ordering(opt.order, derive_seed(opt.seed, "order"));
    if (!sel) throw UsageError("--selection must be top_pf, bottom_pf or random");
    if (!ord) throw UsageError("--order must be decreasing_pf, increasing_pf or shuffled");
    ro.selection = *sel;
    ro.order = *ord;
    ro.top_n = opt.top_n;
    ro.workers = opt.workers;
    ro.timestamp = run_timestamp();
    return {dataset, vocab, *backend, ro};
  }
};

inline CandidateVocab load_vocabs(const std::vector<std::string>& paths, std::vector<std::string>& warnings) {
  CandidateVocab v = load_vocab(paths.front());
  for (std::size_t i = 1; i < paths.size(); ++i) v = intersect_vocab(v, load_vocab(paths[i]), &warnings);
  return v;
}

inline std::unique_ptr<Backend> make_backend(const Options& opt, const NormsDataset& d) {
  if (opt.backend == "oracle") return std::make_unique<OracleBackend>(d, opt.epsilon);
  if (opt.backend == "fixture") {
    if (opt.fixture_table.empty())
      return std::make_unique<FixtureBackend>(FixtureBackend::Table{}, FixtureBackend::Missing::Hash);
    return std::make_unique<FixtureBackend>(FixtureBackend::load(opt.fixture_table));
  }
  if (opt.backend == "remote") {
    if (opt.endpoint.empty() || opt.model_id.empty())
      throw UsageError("--backend remote needs --endpoint and --model-id");
    RemoteOptions ro;
    ro.max_retries = opt.max_retries;
    ro.max_in_flight = opt.max_in_flight;
    ro.cache_dir = cache_dir();
    return std::make_unique<RemoteBackend>(opt.endpoint, opt.model_id, ro);
  }
  throw UsageError("--backend must be fixture, oracle or remote");
}

inline Session open_session(const Options& opt, bool need_vocab, std::ostream& err) {
  if (opt.norms.empty()) throw UsageError("--norms is required");
  if (need_vocab && opt.vocab.empty()) throw UsageError("--vocab is required");
  if (opt.k_max < 1) throw UsageError("--k-max must be >= 1");
  if (opt.workers < 1) throw UsageError("--workers must be >= 1");
  Session s;
  s.opt = opt;
  s.dataset = load_norms(opt.norms, &s.warnings);
  if (!opt.vocab.empty()) s.vocab = load_vocabs(opt.vocab, s.warnings);
  for (const auto& w : s.warnings) err << "warning: " << w << '\n';
  s.backend = make_backend(opt, s.dataset);
  return s;
}

inline std::vector<RelationKind> parse_relations(const std::vector<std::string>& names) {
  std::vector<RelationKind> out;
  if (names.empty()) return {std::begin(kElicitationRelations), std::end(kElicitationRelations)};
  for (const auto& n : names) {
    auto r = parse_relation(n);
    if (!r || *r == RelationKind::Other) throw UsageError("--relation must be is, is_a, has, has_a or made_of");
    out.push_back(*r);
  }
  return out;
}

inline Json manifest(const Session& s, const std::string& command, const std::vector<TrialRecord>& records) {
  const Options& o = s.opt;
  Json m;
  m["tool"] = "sta_probe";
  m["version"] = kVersion;
  m["command"] = command;
  Json cfg;
  cfg["norms"] = o.norms;
  cfg["vocab"] = o.vocab;
  cfg["backend"] = o.backend;
  cfg["endpoint"] = o.endpoint;
  cfg["model_id"] = o.model_id;
  cfg["fixture_table"] = o.fixture_table;
  cfg["epsilon"] = o.epsilon;
  cfg["k_max"] = o.k_max;
  cfg["relations"] = o.relations;
  cfg["category"] = o.category;
  cfg["selection"] = o.selection;
  cfg["order"] = o.order;
  cfg["prefix"] = !o.no_prefix;
  cfg["top_n"] = o.top_n;
  m["config"] = cfg;
  m["seeds"] = {{"master", o.seed}};
  m["timestamp"] = run_timestamp();
  m["dataset"] = {{"source", s.dataset.source_id},
                  {"fingerprint", s.dataset.fingerprint},
                  {"concepts", s.dataset.concepts.size()},
                  {"norms", s.dataset.norm_count()}};
  m["vocab"] = {{"size", s.vocab.size()}, {"fingerprint", s.vocab.fingerprint()}};
  m["backend_id"] = s.backend->id();
  std::size_t skipped = 0;
  Json cohorts = Json::object();
  std::map<std::string, std::map<int, std::set<std::string>>> cohort_sets;
  for (const auto& r : records) {
    if (r.skipped()) ++skipped;
    if (r.meta.family == PromptFamily::Retrieval && !r.skipped())
      cohort_sets[r.meta.series][r.meta.k].insert(r.meta.concept_name);
  }
  for (const auto& [series, by_k] : cohort_sets) {
    Json row = Json::object();
    for (const auto& [k, names] : by_k) row[std::to_string(k)] = names.size();
    cohorts[series] = row;
  }
  m["cohorts"] = cohorts;
  m["records"] = records.size();
  m["skipped"] = skipped;
  return m;
}

inline std::filesystem::path require_out(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  std::filesystem::create_directories(o.out);
  return o.out;
}

inline void write_run(const Session& s, const std::string& command, const std::vector<TrialRecord>& records,
                      const std::string& aggregates, Json extra = nullptr) {
  auto dir = require_out(s.opt);
  write_trials((dir / "trials.jsonl").string(), records);
  write_text(dir / "aggregates.csv", aggregates);
  Json m = manifest(s, command, records);
  if (!extra.is_null()) m["summary"] = std::move(extra);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  bool any_retrieval = false;
  for (const auto& r : records) any_retrieval |= r.meta.family == PromptFamily::Retrieval;
  if (any_retrieval) emit_plot_data(records, dir);
}

inline int cmd_ingest(const Options& opt, std::ostream& out, std::ostream& err) {
  Session s = open_session([&] {
    Options o = opt;
    o.backend = "fixture";  // ingest never needs a model
    return o;
  }(), false, err);
  out << "source\t" << s.dataset.source_id << '\n';
  out << "fingerprint\t" << s.dataset.fingerprint << '\n';
  out << "concepts\t" << s.dataset.concepts.size() << '\n';
  out << "norms\t" << s.dataset.norm_count() << '\n';
  out << "rejected_rows\t" << s.warnings.size() << '\n';
  for (RelationKind r : kElicitationRelations) {
    std::size_t prompts = 0;
    for (const auto& [name, _] : s.dataset.concepts) prompts += gold_completions(s.dataset, name, r).empty() ? 0 : 1;
    out << "elicitation_prompts_" << to_string(r) << '\t' << prompts << '\n';
  }
  if (!opt.vocab.empty()) {
    out << "vocab_size\t" << s.vocab.size() << '\n';
    out << "vocab_fingerprint\t" << s.vocab.fingerprint() << '\n';
    Eligibility e = eligible_concepts(s.dataset, s.vocab, opt.k_max);
    std::size_t not_in_vocab = 0, vowel = 0;
    for (const auto& d : e.dropped) ++(d.reason == DropReason::NotInVocab ? not_in_vocab : vowel);
    out << "dropped_not_in_vocab\t" << not_in_vocab << '\n';
    out << "dropped_vowel_sound\t" << vowel << '\n';
    out << "dropped_too_few_norms\t" << e.too_few_norms.size() << '\n';
    out << "retrieval_concepts\t" << e.concepts.size() << '\n';
    out << "retrieval_prompts\t" << e.concepts.size() * opt.k_max << '\n';
  }
  return kExitOk;
}

inline int cmd_retrieve(const Options& opt, std::ostream& out, std::ostream& err) {
  Session s = open_session(opt, true, err);
  RunContext ctx = s.context();
  auto records = run_concept_retrieval(ctx);
  std::string table = per_k_csv(aggregate_by_k(records));
  write_run(s, "retrieve", records, table);
  out << table;
  return kExitOk;
}

inline int cmd_categories(const Options& opt, std::ostream& out, std::ostream& err) {
  Session s = open_session(opt, true, err);
  RunContext ctx = s.context();
  std::vector<TrialRecord> records;
  auto append = [&](std::vector<TrialRecord> rs) {
    for (auto& r : rs) records.push_back(std::move(r));
  };
  if (!opt.category.empty()) {
    auto c = parse_category(opt.category);
    if (!c) throw UsageError("unknown --category '" + opt.category + "'");
    append(run_category_probe(ctx, *c));
  } else {
    for (FeatureCategory c : kProbeCategories) append(run_category_probe(ctx, c));
    append(run_concept_retrieval(ctx, "all"));
  }
  std::string table = series_csv(aggregate_by_series(records));
  write_run(s, "categories", records, table);
  out << table;
  return kExitOk;
}

inline int cmd_ablate_selection(const Options& opt, std::ostream& out, std::ostream& err) {
  Session s = open_session(opt, true, err);
  RunContext ctx = s.context();
  std::vector<TrialRecord> records;
  for (auto& [_, rs] : run_selection_ablation(ctx))
    for (auto& r : rs) records.push_back(std::move(r));
  std::string table = series_csv(aggregate_by_series(records));
  write_run(s, "ablate-selection", records, table);
  out << table;
  return kExitOk;
}

inline int cmd_elicit(const Options& opt, std::ostream& out, std::ostream& err) {
  Session s = open_session(opt, true, err);
  RunContext ctx = s.context();
  std::vector<TrialRecord> records;
  for (RelationKind r : parse_relations(opt.relations)) {
    ElicitationRun run = run_elicitation(ctx, r, !opt.no_prefix);
    for (auto& rec : run.records) records.push_back(std::move(rec));
  }
  std::string table = elicitation_csv(aggregate_elicitation(records));
  write_run(s, "elicit", records, table);
  out << table;
  return kExitOk;
}

inline int cmd_ablate_context(const Options& opt, std::ostream& out, std::ostream& err) {
  Session s = open_session(opt, true, err);
  RunContext ctx = s.context();
  ContextAblation ab = run_context_ablation(ctx, parse_relations(opt.relations));
  std::string table = context_ablation_csv(ab.rows);
  write_run(s, "ablate-context", ab.records, table);
  out << table;
  return kExitOk;
}

inline Json scored_to_json(const std::string& id, const std::string& text, const ScoredCandidates& s) {
  Json j;
  j["id"] = id;
  j["prompt"] = text;
  j["backend_id"] = s.backend_id;
  Json top = Json::array();
  for (const auto& e : s.entries) {
    Json row;
    row["token"] = e.token;
    row["prob"] = e.prob;
    row["raw_prob"] = e.raw_prob ? Json(*e.raw_prob) : Json(nullptr);
    top.push_back(row);
  }
  j["top_n"] = top;
  j["unscorable"] = s.unscorable;
  return j;
}

inline int cmd_prompt(const Options& opt, std::ostream& out, std::ostream& err) {
  if (opt.text.empty() == opt.prompts_file.empty()) throw UsageError("give exactly one of --text or --prompts");
  if (opt.backend == "oracle" && opt.norms.empty()) throw UsageError("--backend oracle needs --norms");
  Options o = opt;
  NormsDataset empty;
  std::unique_ptr<Backend> backend;
  std::vector<std::string> warnings;
  if (!o.norms.empty()) empty = load_norms(o.norms, &warnings);
  backend = make_backend(o, empty);
  std::optional<CandidateVocab> shared;
  if (!o.vocab.empty()) shared = load_vocabs(o.vocab, warnings);
  for (const auto& w : warnings) err << "warning: " << w << '\n';

  struct Item {
    std::string id, text;
    std::optional<CandidateVocab> candidates;
  };
  std::vector<Item> items;
  if (!o.text.empty()) {
    items.push_back({"prompt", o.text, std::nullopt});
  } else {
    std::ifstream in(o.prompts_file);
    if (!in) throw Error(Errc::FileNotFound, "cannot open prompts file '" + o.prompts_file + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      Json j;
      try {
        j = Json::parse(line);
      } catch (const Json::exception& e) {
        throw Error(Errc::MalformedRow, std::string("bad prompt line: ") + e.what(), lineno);
      }
      Item it{j.value("id", "line" + std::to_string(lineno)), j.value("text", ""), std::nullopt};
      if (j.contains("candidates")) it.candidates = CandidateVocab::from_tokens(j["candidates"].get<std::vector<std::string>>());
      items.push_back(std::move(it));
    }
  }
  std::vector<Json> results;
  for (const auto& it : items) {
    const CandidateVocab* cands = it.candidates ? &*it.candidates : (shared ? &*shared : nullptr);
    if (!cands) throw UsageError("prompt '" + it.id + "' has no candidates; pass --vocab");
    ScoredCandidates s = run_custom_prompt(it.text, *cands, *backend, o.top_n);
    out << it.id << '\t' << it.text << '\n';
    for (const auto& e : s.entries)
      out << "  " << e.token << " [" << fmt_double(e.raw_prob.value_or(e.prob), 3) << "]\n";
    results.push_back(scored_to_json(it.id, it.text, s));
  }
  if (!o.out.empty()) {
    auto dir = require_out(o);
    std::string body;
    for (const auto& r : results) body += r.dump() + "\n";
    write_text(dir / "custom.jsonl", body);
  }
  return kExitOk;
}

inline int cmd_report(const Options& opt, std::ostream& out, std::ostream&) {
  const std::filesystem::path dir = opt.report_dir;
  auto records = read_trials((dir / "trials.jsonl").string());
  if (records.empty()) throw Error(Errc::EmptyInput, "no trial records in '" + dir.string() + "'");
  ReportBundle b = build_report(records);
  if (!b.curves.empty()) out << curve_table(b);
  if (!b.relations.empty()) out << elicitation_csv(b.relations);
  if (!opt.out.empty()) {
    std::filesystem::path target = opt.out;
    if (std::filesystem::exists(target) && std::filesystem::equivalent(target, dir))
      throw UsageError("report --out must differ from the trial directory");
    std::filesystem::create_directories(target);
    if (!b.curves.empty()) {
      write_text(target / "per_k.csv", curve_table(b));
      emit_plot_data(records, target);
    }
    if (!b.relations.empty()) write_text(target / "relations.csv", elicitation_csv(b.relations));
    write_text(target / "excerpts.csv", b.excerpts);
  }
  return kExitOk;
}

inline void add_common(CLI::App* sub, Options& o, bool experiment) {
  sub->add_option("--norms", o.norms, "Feature-norm TSV file");
  sub->add_option("--vocab", o.vocab, "Candidate vocabulary file (repeatable; files are intersected)");
  sub->add_option("--k-max", o.k_max, "Largest number of conjoined properties")->capture_default_str();
  if (!experiment) return;
  sub->add_option("--backend", o.backend, "fixture | oracle | remote")->capture_default_str();
  sub->add_option("--endpoint", o.endpoint, "Scoring service URL (remote backend)");
  sub->add_option("--model-id", o.model_id, "Model the scoring service must host (remote backend)");
  sub->add_option("--fixture-table", o.fixture_table, "Score table JSON for the fixture backend");
  sub->add_option("--epsilon", o.epsilon, "Smoothing constant of the oracle backend")->capture_default_str();
  sub->add_option("--seed", o.seed, "Master seed for every random draw")->capture_default_str();
  sub->add_option("--out", o.out, "Output directory");
  sub->add_option("--top-n", o.top_n, "Predictions kept per trial")->capture_default_str();
  sub->add_option("--workers", o.workers, "Concurrent prompt evaluations")->capture_default_str();
  sub->add_option("--max-retries", o.max_retries, "Remote retries per request")->capture_default_str();
  sub->add_option("--max-in-flight", o.max_in_flight, "Remote requests in flight")->capture_default_str();
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Probe masked language models for stereotypic tacit assumptions using feature-norm cloze prompts.\n"
               "Environment: STA_PROBE_CACHE_DIR overrides the remote-response cache location."};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "Validate norms and vocabularies and print statistics");
  add_common(ingest, o, false);

  auto* retrieve = app.add_subcommand("retrieve", "Concept retrieval from growing property conjunctions");
  add_common(retrieve, o, true);
  retrieve->add_option("--selection", o.selection, "top_pf | bottom_pf | random")->capture_default_str();
  retrieve->add_option("--order", o.order, "decreasing_pf | increasing_pf | shuffled")->capture_default_str();

  auto* categories = app.add_subcommand("categories", "Retrieval from single-category property sets");
  add_common(categories, o, true);
  categories->add_option("--category", o.category, "visual_perceptual | functional | encyclopaedic (default: all three)");

  auto* ablate_sel = app.add_subcommand("ablate-selection", "Top/bottom PF x increasing/decreasing order vs random baseline");
  add_common(ablate_sel, o, true);

  auto* elicit = app.add_subcommand("elicit", "Property elicitation: mAP over vocab and sensible vocab, Spearman rho");
  add_common(elicit, o, true);
  elicit->add_option("--relation", o.relations, "is | is_a | has | has_a | made_of (repeatable; default all)");
  elicit->add_flag("--no-prefix", o.no_prefix, "Drop the 'Everyone knows that' prefix");

  auto* ablate_ctx = app.add_subcommand("ablate-context", "Elicitation with vs without the context prefix");
  add_common(ablate_ctx, o, true);
  ablate_ctx->add_option("--relation", o.relations, "Relations to ablate (repeatable; default all)");

  auto* prompt = app.add_subcommand("prompt", "Score an ad-hoc one-mask prompt");
  add_common(prompt, o, true);
  prompt->add_option("--text", o.text, "Prompt text containing {MASK}");
  prompt->add_option("--prompts", o.prompts_file, "JSONL file of {id, text, candidates}");

  auto* report = app.add_subcommand("report", "Aggregate a trial directory into tables and plot CSVs");
  report->add_option("dir", o.report_dir, "Run directory holding trials.jsonl")->required();
  report->add_option("--out", o.out, "Write tables here (never into the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*ingest) return cmd_ingest(o, out, err);
    if (*retrieve) return cmd_retrieve(o, out, err);
    if (*categories) return cmd_categories(o, out, err);
    if (*ablate_sel) return cmd_ablate_selection(o, out, err);
    if (*elicit) return cmd_elicit(o, out, err);
    if (*ablate_ctx) return cmd_ablate_context(o, out, err);
    if (*prompt) return cmd_prompt(o, out, err);
    if (*report) return cmd_report(o, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace sta::cli

#endif  // STA_PROBE_CLI_HPP
