#ifndef STA_PROBE_NORMS_HPP
#define STA_PROBE_NORMS_HPP

// Feature-norm datasets and candidate vocabularies: loading, validation,
// vocabulary intersection, concept filtering, and property selection.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sta_probe/common.hpp"

namespace sta {

enum class Article { A, An };

inline const char* to_string(Article a) { return a == Article::A ? "a" : "an"; }

struct Concept {
  std::string name;
  Article article = Article::A;
  bool vowel_sound = false;

  friend bool operator==(const Concept&, const Concept&) = default;
};

enum class FeatureCategory { VisualPerceptual, OtherPerceptual, Functional, Encyclopaedic, Taxonomic };

inline const char* to_string(FeatureCategory c) {
  switch (c) {
    case FeatureCategory::VisualPerceptual: return "visual_perceptual";
    case FeatureCategory::OtherPerceptual: return "other_perceptual";
    case FeatureCategory::Functional: return "functional";
    case FeatureCategory::Encyclopaedic: return "encyclopaedic";
    case FeatureCategory::Taxonomic: return "taxonomic";
  }
  return "?";
}

/// Maps canonical labels and the raw CSLB / McRae feature-type tags onto
/// the five groups. Matching ignores case and treats ' ' and '-' as '_'.
inline std::optional<FeatureCategory> parse_category(std::string_view raw) {
  std::string key;
  for (char c : trim(raw)) {
    if (c == ' ' || c == '-') c = '_';
    key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  static const std::unordered_map<std::string, FeatureCategory> table = {
      {"visual_perceptual", FeatureCategory::VisualPerceptual},
      {"visual", FeatureCategory::VisualPerceptual},
      {"visual_form_and_surface", FeatureCategory::VisualPerceptual},
      {"visual_colour", FeatureCategory::VisualPerceptual},
      {"visual_color", FeatureCategory::VisualPerceptual},
      {"visual_motion", FeatureCategory::VisualPerceptual},
      {"other_perceptual", FeatureCategory::OtherPerceptual},
      {"sound", FeatureCategory::OtherPerceptual},
      {"smell", FeatureCategory::OtherPerceptual},
      {"taste", FeatureCategory::OtherPerceptual},
      {"tactile", FeatureCategory::OtherPerceptual},
      {"functional", FeatureCategory::Functional},
      {"function", FeatureCategory::Functional},
      {"encyclopaedic", FeatureCategory::Encyclopaedic},
      {"encyclopedic", FeatureCategory::Encyclopaedic},
      {"taxonomic", FeatureCategory::Taxonomic},
  };
  auto it = table.find(key);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

enum class RelationKind { Is, IsA, Has, HasA, MadeOf, Other };

inline const char* to_string(RelationKind r) {
  switch (r) {
    case RelationKind::Is: return "is";
    case RelationKind::IsA: return "is_a";
    case RelationKind::Has: return "has";
    case RelationKind::HasA: return "has_a";
    case RelationKind::MadeOf: return "made_of";
    case RelationKind::Other: return "other";
  }
  return "?";
}

inline std::optional<RelationKind> parse_relation(std::string_view raw) {
  std::string key;
  for (char c : trim(raw)) key += (c == ' ') ? '_' : c;
  if (key == "is") return RelationKind::Is;
  if (key == "is_a") return RelationKind::IsA;
  if (key == "has") return RelationKind::Has;
  if (key == "has_a") return RelationKind::HasA;
  if (key == "made_of") return RelationKind::MadeOf;
  if (key == "other") return RelationKind::Other;
  return std::nullopt;
}

inline constexpr RelationKind kElicitationRelations[] = {RelationKind::Is, RelationKind::IsA, RelationKind::Has,
                                                         RelationKind::HasA, RelationKind::MadeOf};

struct PropertyNorm {
  std::string concept_name;
  std::string phrase;
  RelationKind relation = RelationKind::Other;
  std::optional<std::string> completion_head;  // absent for multi-word completions
  FeatureCategory category = FeatureCategory::Encyclopaedic;
  int pf = 1;
  std::size_t order = 0;  // row ordinal within the dataset

  friend bool operator==(const PropertyNorm&, const PropertyNorm&) = default;
};

struct NormsDataset {
  std::map<std::string, Concept> concepts;
  std::map<std::string, std::vector<PropertyNorm>> norms;
  std::string source_id;
  std::string fingerprint;

  std::size_t norm_count() const {
    std::size_t n = 0;
    for (const auto& [_, list] : norms) n += list.size();
    return n;
  }

  const Concept& concept_of(const std::string& name) const {
    auto it = concepts.find(name);
    if (it == concepts.end()) throw Error(Errc::UnknownConcept, "no concept named '" + name + "'");
    return it->second;
  }

  const std::vector<PropertyNorm>& norms_of(const std::string& name) const {
    static const std::vector<PropertyNorm> empty;
    if (!concepts.count(name)) throw Error(Errc::UnknownConcept, "no concept named '" + name + "'");
    auto it = norms.find(name);
    return it == norms.end() ? empty : it->second;
  }

  bool same_content(const NormsDataset& o) const { return concepts == o.concepts && norms == o.norms; }
};

inline constexpr const char* kNormsColumns[] = {"concept",         "article",  "phrase", "relation",
                                                "completion_head", "category", "pf"};

/// First-letter heuristic; the article column overrides it per row.
inline bool starts_with_vowel_letter(std::string_view name) {
  if (name.empty()) return false;
  char c = static_cast<char>(std::tolower(static_cast<unsigned char>(name.front())));
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

/// Parses a norms TSV stream. Rows whose concept name is not a single token
/// are skipped and reported through `warnings`; every other violation aborts.
inline NormsDataset parse_norms(std::istream& in, std::string source_id, std::vector<std::string>* warnings = nullptr) {
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  NormsDataset d;
  d.source_id = std::move(source_id);
  d.fingerprint = fingerprint(content);

  std::istringstream lines(content);
  std::string line;
  std::size_t lineno = 0;
  std::unordered_map<std::string, std::size_t> col;
  bool have_header = false;
  std::size_t ordinal = 0;
  std::unordered_set<std::string> seen;
  std::unordered_map<std::string, std::size_t> article_line;

  while (std::getline(lines, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      auto fields = split(line, '\t');
      for (std::size_t i = 0; i < fields.size(); ++i) col[std::string(trim(fields[i]))] = i;
      for (const char* name : kNormsColumns)
        if (!col.count(name)) throw Error(Errc::MissingColumn, std::string("header lacks column '") + name + "'", lineno);
      have_header = true;
      continue;
    }
    if (trim(line).empty() || line.front() == '#') continue;

    auto fields = split(line, '\t');
    auto field = [&](const char* name) -> std::string {
      std::size_t i = col.at(name);
      if (i >= fields.size())
        throw Error(Errc::MissingColumn, std::string("row has no value for column '") + name + "'", lineno);
      return std::string(trim(fields[i]));
    };

    std::string name = field("concept");
    if (name.empty()) throw Error(Errc::MalformedRow, "empty concept name", lineno);
    if (has_whitespace(name)) {
      if (warnings)
        warnings->push_back("line " + std::to_string(lineno) + ": rejected multi-token concept '" + name + "'");
      continue;
    }

    std::string article_raw = field("article");
    Article article;
    if (article_raw.empty())
      article = starts_with_vowel_letter(name) ? Article::An : Article::A;
    else if (article_raw == "a")
      article = Article::A;
    else if (article_raw == "an")
      article = Article::An;
    else
      throw Error(Errc::BadArticle, "article must be 'a', 'an' or empty, got '" + article_raw + "'", lineno);

    PropertyNorm norm;
    norm.concept_name = name;
    norm.phrase = field("phrase");
    if (norm.phrase.empty() || !std::islower(static_cast<unsigned char>(norm.phrase.front())))
      throw Error(Errc::InvalidPhrase, "phrase must start with a lowercase verb: '" + norm.phrase + "'", lineno);
    if (norm.phrase.find("  ") != std::string::npos)
      throw Error(Errc::InvalidPhrase, "phrase contains repeated spaces: '" + norm.phrase + "'", lineno);

    std::string rel = field("relation");
    auto relation = parse_relation(rel);
    if (!relation) throw Error(Errc::UnknownRelation, "unknown relation '" + rel + "'", lineno);
    norm.relation = *relation;

    std::string head = field("completion_head");
    if (!head.empty()) {
      if (has_whitespace(head)) throw Error(Errc::MalformedRow, "completion_head must be one token: '" + head + "'", lineno);
      norm.completion_head = head;
    }

    std::string cat = field("category");
    auto category = parse_category(cat);
    if (!category) throw Error(Errc::UnknownCategory, "unknown category '" + cat + "'", lineno);
    norm.category = *category;

    std::string pf_raw = field("pf");
    long long pf = 0;
    auto [end, ec] = std::from_chars(pf_raw.data(), pf_raw.data() + pf_raw.size(), pf);
    if (ec != std::errc() || end != pf_raw.data() + pf_raw.size() || pf_raw.empty())
      throw Error(Errc::MalformedRow, "pf is not an integer: '" + pf_raw + "'", lineno);
    if (pf < 1) throw Error(Errc::NonPositivePF, "pf must be >= 1, got " + pf_raw, lineno);
    if (pf > 1'000'000'000) throw Error(Errc::MalformedRow, "pf out of range: " + pf_raw, lineno);
    norm.pf = static_cast<int>(pf);

    std::string key = name + '\t' + norm.phrase;
    if (!seen.insert(key).second)
      throw Error(Errc::DuplicateNorm, "duplicate norm '" + norm.phrase + "' for concept '" + name + "'", lineno);

    auto [it, inserted] = d.concepts.try_emplace(name, Concept{name, article, article == Article::An});
    if (inserted) {
      article_line[name] = lineno;
    } else if (it->second.article != article) {
      throw Error(Errc::InconsistentArticle,
                  "concept '" + name + "' has article '" + to_string(article) + "' but line " +
                      std::to_string(article_line[name]) + " says '" + to_string(it->second.article) + "'",
                  lineno);
    }

    norm.order = ordinal++;
    d.norms[name].push_back(std::move(norm));
  }
  if (!have_header) throw Error(Errc::MissingColumn, "file has no header row", 1);
  return d;
}

inline NormsDataset load_norms(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::FileNotFound, "cannot open norms file '" + path + "'");
  return parse_norms(in, path, warnings);
}

/// Canonical TSV form: explicit articles, canonical labels, dataset row order.
inline void write_norms(const NormsDataset& d, std::ostream& out) {
  for (std::size_t i = 0; i < std::size(kNormsColumns); ++i) out << (i ? "\t" : "") << kNormsColumns[i];
  out << '\n';
  std::vector<const PropertyNorm*> rows;
  for (const auto& [_, list] : d.norms)
    for (const auto& n : list) rows.push_back(&n);
  std::sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) { return a->order < b->order; });
  for (const PropertyNorm* n : rows) {
    const Concept& c = d.concepts.at(n->concept_name);
    out << c.name << '\t' << to_string(c.article) << '\t' << n->phrase << '\t' << to_string(n->relation) << '\t'
        << n->completion_head.value_or("") << '\t' << to_string(n->category) << '\t' << n->pf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Candidate vocabularies

class CandidateVocab {
 public:
  CandidateVocab() { refresh_fingerprint(); }

  /// Deduplicates preserving first occurrence. Does not validate tokens.
  static CandidateVocab from_tokens(const std::vector<std::string>& tokens) {
    CandidateVocab v;
    for (const auto& t : tokens)
      if (v.index_.emplace(t, v.tokens_.size()).second) v.tokens_.push_back(t);
    v.refresh_fingerprint();
    return v;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  bool contains(const std::string& t) const { return index_.count(t) != 0; }
  const std::string& fingerprint() const { return fingerprint_; }

  friend bool operator==(const CandidateVocab& a, const CandidateVocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void refresh_fingerprint() {
    Fnv1a h;
    for (const auto& t : tokens_) h.update(t).update("\n");
    h.update(std::to_string(tokens_.size()));
    fingerprint_ = h.hex();
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string fingerprint_;
};

inline CandidateVocab parse_vocab(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (has_whitespace(line)) throw Error(Errc::WhitespaceToken, "token contains whitespace: '" + line + "'", lineno);
    tokens.push_back(line);
  }
  if (tokens.empty()) throw Error(Errc::EmptyVocab, "vocabulary has no tokens");
  return CandidateVocab::from_tokens(tokens);
}

inline CandidateVocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::FileNotFound, "cannot open vocab file '" + path + "'");
  return parse_vocab(in);
}

/// Tokens present in both, in `a`'s order. An empty result is legal but
/// reported through `warnings`.
inline CandidateVocab intersect_vocab(const CandidateVocab& a, const CandidateVocab& b,
                                      std::vector<std::string>* warnings = nullptr) {
  std::vector<std::string> kept;
  for (const auto& t : a.tokens())
    if (b.contains(t)) kept.push_back(t);
  if (kept.empty() && warnings) warnings->push_back("vocabulary intersection is empty");
  return CandidateVocab::from_tokens(kept);
}

// ---------------------------------------------------------------------------
// Concept filtering

enum class DropReason { NotInVocab, VowelSound };

inline const char* to_string(DropReason r) { return r == DropReason::NotInVocab ? "not_in_vocab" : "vowel_sound"; }

struct DroppedConcept {
  std::string name;
  DropReason reason;
  friend bool operator==(const DroppedConcept&, const DroppedConcept&) = default;
};

struct FilterResult {
  NormsDataset dataset;
  std::vector<DroppedConcept> dropped;
};

inline FilterResult filter_concepts(const NormsDataset& d, const CandidateVocab& v, bool drop_vowel_sound) {
  FilterResult r;
  r.dataset.source_id = d.source_id;
  r.dataset.fingerprint = d.fingerprint;
  for (const auto& [name, c] : d.concepts) {
    if (!v.contains(name)) {
      r.dropped.push_back({name, DropReason::NotInVocab});
      continue;
    }
    if (drop_vowel_sound && c.vowel_sound) {
      r.dropped.push_back({name, DropReason::VowelSound});
      continue;
    }
    r.dataset.concepts.emplace(name, c);
    if (auto it = d.norms.find(name); it != d.norms.end()) r.dataset.norms.emplace(name, it->second);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Property selection

struct Selection {
  enum Kind { TopPf, BottomPf, Random } kind = TopPf;
  std::uint64_t seed = 0;

  static Selection top() { return {TopPf, 0}; }
  static Selection bottom() { return {BottomPf, 0}; }
  static Selection random(std::uint64_t seed) { return {Random, seed}; }

  std::string label() const {
    switch (kind) {
      case TopPf: return "top_pf";
      case BottomPf: return "bottom_pf";
      case Random: return "random(" + std::to_string(seed) + ")";
    }
    return "?";
  }
};

struct Ordering {
  enum Kind { DecreasingPf, IncreasingPf, Shuffled } kind = DecreasingPf;
  std::uint64_t seed = 0;

  static Ordering decreasing() { return {DecreasingPf, 0}; }
  static Ordering increasing() { return {IncreasingPf, 0}; }
  static Ordering shuffled(std::uint64_t seed) { return {Shuffled, seed}; }

  std::string label() const {
    switch (kind) {
      case DecreasingPf: return "decreasing_pf";
      case IncreasingPf: return "increasing_pf";
      case Shuffled: return "shuffled(" + std::to_string(seed) + ")";
    }
    return "?";
  }
};

inline std::optional<Selection> parse_selection(std::string_view s, std::uint64_t seed) {
  if (s == "top_pf" || s == "top") return Selection::top();
  if (s == "bottom_pf" || s == "bottom") return Selection::bottom();
  if (s == "random") return Selection::random(seed);
  return std::nullopt;
}

inline std::optional<Ordering> parse_ordering(std::string_view s, std::uint64_t seed) {
  if (s == "decreasing_pf" || s == "decreasing") return Ordering::decreasing();
  if (s == "increasing_pf" || s == "increasing") return Ordering::increasing();
  if (s == "shuffled") return Ordering::shuffled(seed);
  return std::nullopt;
}

/// Highest PF first; ties by dataset row order, then phrase.
inline bool pf_before(const PropertyNorm& a, const PropertyNorm& b) {
  if (a.pf != b.pf) return a.pf > b.pf;
  if (a.order != b.order) return a.order < b.order;
  return a.phrase < b.phrase;
}

inline std::vector<PropertyNorm> sorted_by_pf(std::vector<PropertyNorm> norms) {
  std::sort(norms.begin(), norms.end(), pf_before);
  return norms;
}

/// Chooses `n` properties from `pool` and arranges them.
inline std::vector<PropertyNorm> select_from(const std::vector<PropertyNorm>& pool, std::size_t n, Selection selection,
                                             Ordering order) {
  if (pool.size() < n)
    throw Error(Errc::InsufficientProperties,
                "need " + std::to_string(n) + " properties, " + std::to_string(pool.size()) + " available");
  std::vector<PropertyNorm> ranked = sorted_by_pf(pool);
  std::vector<PropertyNorm> chosen;
  switch (selection.kind) {
    case Selection::TopPf:
      chosen.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    case Selection::BottomPf:
      chosen.assign(ranked.end() - static_cast<std::ptrdiff_t>(n), ranked.end());
      break;
    case Selection::Random: {
      Rng rng(selection.seed);
      std::vector<std::size_t> idx(ranked.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      // partial Fisher-Yates
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, idx.size() - i));
        std::swap(idx[i], idx[j]);
      }
      for (std::size_t i = 0; i < n; ++i) chosen.push_back(ranked[idx[i]]);
      break;
    }
  }
  std::sort(chosen.begin(), chosen.end(), pf_before);
  if (order.kind == Ordering::IncreasingPf) {
    std::reverse(chosen.begin(), chosen.end());
  } else if (order.kind == Ordering::Shuffled) {
    Rng rng(order.seed);
    portable_shuffle(chosen, rng);
  }
  return chosen;
}

inline std::vector<PropertyNorm> select_properties(const NormsDataset& d, const std::string& concept_name,
                                                   std::size_t n, Selection selection, Ordering order) {
  const auto& pool = d.norms_of(concept_name);
  try {
    return select_from(pool, n, selection, order);
  } catch (const Error& e) {
    throw Error(e.code(), "concept '" + concept_name + "': need " + std::to_string(n) + " properties, " +
                              std::to_string(pool.size()) + " available");
  }
}

}  // namespace sta

#endif  // STA_PROBE_NORMS_HPP
