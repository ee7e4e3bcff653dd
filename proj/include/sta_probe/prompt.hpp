#ifndef STA_PROBE_PROMPT_HPP
#define STA_PROBE_PROMPT_HPP

// Compiles feature norms into single-mask cloze prompts: concept retrieval
// ("A {MASK} has fur, is big, and has claws.") and property elicitation
// ("Everyone knows that a bear has {MASK}.").

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sta_probe/common.hpp"
#include "sta_probe/norms.hpp"

namespace sta {

using Json = nlohmann::ordered_json;

enum class PromptFamily { Retrieval, Elicitation, Custom };

inline const char* to_string(PromptFamily f) {
  switch (f) {
    case PromptFamily::Retrieval: return "retrieval";
    case PromptFamily::Elicitation: return "elicitation";
    case PromptFamily::Custom: return "custom";
  }
  return "?";
}

inline std::optional<PromptFamily> parse_family(std::string_view s) {
  if (s == "retrieval") return PromptFamily::Retrieval;
  if (s == "elicitation") return PromptFamily::Elicitation;
  if (s == "custom") return PromptFamily::Custom;
  return std::nullopt;
}

struct PromptMeta {
  PromptFamily family = PromptFamily::Custom;
  std::string concept_name;
  int k = 0;
  std::optional<RelationKind> relation;
  std::optional<FeatureCategory> category_filter;
  std::string selection;
  std::string order;
  bool prefix_used = false;
  std::vector<std::string> properties;  // property phrases in prompt order (retrieval)
  std::string series;                   // curve label: "all", a category, or a strategy

  friend bool operator==(const PromptMeta&, const PromptMeta&) = default;
};

struct GoldCompletion {
  std::string token;
  int pf = 0;
  friend bool operator==(const GoldCompletion&, const GoldCompletion&) = default;
};

struct Prompt {
  std::string text;
  std::optional<std::string> target;
  std::vector<GoldCompletion> gold;
  PromptMeta meta;

  std::string fingerprint() const { return sta::fingerprint(text); }

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

/// Throws MalformedPrompt unless `text` has exactly one mask, ends with a
/// period and has no doubled spaces.
inline void validate_prompt_text(std::string_view text) {
  std::size_t masks = count_occurrences(text, kMask);
  if (masks != 1)
    throw Error(Errc::MalformedPrompt, "expected exactly one " + std::string(kMask) + ", found " + std::to_string(masks) +
                                           " in \"" + std::string(text) + "\"");
  if (text.empty() || text.back() != '.')
    throw Error(Errc::MalformedPrompt, "prompt must end with '.': \"" + std::string(text) + "\"");
  if (text.find("  ") != std::string_view::npos)
    throw Error(Errc::MalformedPrompt, "prompt contains double spaces: \"" + std::string(text) + "\"");
}

inline void validate_prompt(const Prompt& p) {
  validate_prompt_text(p.text);
  if (p.meta.family == PromptFamily::Retrieval && (!p.target || p.meta.k < 1))
    throw Error(Errc::MalformedPrompt, "retrieval prompt needs a target and k >= 1");
}

/// Joins phrases as an English list with a serial comma: "p1", "p1 and p2",
/// "p1, p2, and p3".
inline std::string conjoin(const std::vector<std::string>& phrases) {
  std::string out;
  const std::size_t n = phrases.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      if (n == 2)
        out += " and ";
      else if (i + 1 == n)
        out += ", and ";
      else
        out += ", ";
    }
    out += phrases[i];
  }
  return out;
}

inline Prompt build_retrieval_prompt(const Concept& concept_info, const std::vector<PropertyNorm>& props) {
  if (props.empty()) throw Error(Errc::EmptyPropertyList, "concept '" + concept_info.name + "' given no properties");
  if (concept_info.article != Article::A)
    throw Error(Errc::ArticleMismatch, "retrieval prompts take 'a' concepts only, '" + concept_info.name + "' takes 'an'");
  std::vector<std::string> phrases;
  phrases.reserve(props.size());
  for (const auto& p : props) {
    if (p.concept_name != concept_info.name)
      throw Error(Errc::MixedConcept, "property '" + p.phrase + "' belongs to '" + p.concept_name + "', not '" +
                                          concept_info.name + "'");
    phrases.push_back(p.phrase);
  }
  Prompt prompt;
  prompt.text = "A " + std::string(kMask) + " " + conjoin(phrases) + ".";
  prompt.target = concept_info.name;
  prompt.meta.family = PromptFamily::Retrieval;
  prompt.meta.concept_name = concept_info.name;
  prompt.meta.k = static_cast<int>(props.size());
  prompt.meta.properties = std::move(phrases);
  prompt.meta.series = "all";
  validate_prompt(prompt);
  return prompt;
}

/// One prompt per k = 1..props.size(), each extending the previous.
inline std::vector<Prompt> build_retrieval_series(const Concept& concept_info, const std::vector<PropertyNorm>& props) {
  std::vector<Prompt> series;
  for (std::size_t k = 1; k <= props.size(); ++k)
    series.push_back(build_retrieval_prompt(concept_info, {props.begin(), props.begin() + static_cast<std::ptrdiff_t>(k)}));
  return series;
}

inline std::vector<Prompt> build_retrieval_series(const NormsDataset& d, const std::string& concept_name,
                                                  Selection selection, Ordering order, std::size_t k_max = 10) {
  auto props = select_properties(d, concept_name, k_max, selection, order);
  auto series = build_retrieval_series(d.concept_of(concept_name), props);
  for (auto& p : series) {
    p.meta.selection = selection.label();
    p.meta.order = order.label();
  }
  return series;
}

inline std::string relation_surface(RelationKind r) {
  switch (r) {
    case RelationKind::Is: return "is";
    case RelationKind::IsA: return "is a";
    case RelationKind::Has: return "has";
    case RelationKind::HasA: return "has a";
    case RelationKind::MadeOf: return "is made of";
    case RelationKind::Other: break;
  }
  throw Error(Errc::UnsupportedRelation, std::string("relation '") + to_string(r) + "' has no prompt form");
}

inline constexpr std::string_view kContextPrefix = "Everyone knows that ";

inline Prompt build_elicitation_prompt(const Concept& concept_info, RelationKind relation, bool with_prefix) {
  std::string surface = relation_surface(relation);
  std::string article = to_string(concept_info.article);
  if (!with_prefix) article[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(article[0])));
  Prompt prompt;
  prompt.text = (with_prefix ? std::string(kContextPrefix) : std::string()) + article + " " + concept_info.name + " " +
                surface + " " + std::string(kMask) + ".";
  prompt.meta.family = PromptFamily::Elicitation;
  prompt.meta.concept_name = concept_info.name;
  prompt.meta.relation = relation;
  prompt.meta.prefix_used = with_prefix;
  validate_prompt(prompt);
  return prompt;
}

/// Single-word human completions for (concept, relation), highest PF first.
/// A head produced by several norms keeps its largest PF.
inline std::vector<GoldCompletion> gold_completions(const NormsDataset& d, const std::string& concept_name,
                                                    RelationKind relation) {
  std::vector<GoldCompletion> gold;
  for (const auto& n : d.norms_of(concept_name)) {
    if (n.relation != relation || !n.completion_head) continue;
    auto it = std::find_if(gold.begin(), gold.end(), [&](const auto& g) { return g.token == *n.completion_head; });
    if (it == gold.end())
      gold.push_back({*n.completion_head, n.pf});
    else
      it->pf = std::max(it->pf, n.pf);
  }
  std::stable_sort(gold.begin(), gold.end(), [](const auto& a, const auto& b) {
    if (a.pf != b.pf) return a.pf > b.pf;
    return a.token < b.token;
  });
  return gold;
}

/// Union of every concept's gold heads for `relation`, in concept order then
/// PF order.
inline CandidateVocab sensible_vocab(const NormsDataset& d, RelationKind relation) {
  std::vector<std::string> tokens;
  for (const auto& [name, _] : d.concepts)
    for (const auto& g : gold_completions(d, name, relation)) tokens.push_back(g.token);
  return CandidateVocab::from_tokens(tokens);
}

// ---------------------------------------------------------------------------
// JSON Lines export

inline Json meta_to_json(const PromptMeta& m) {
  Json j;
  j["family"] = to_string(m.family);
  j["concept"] = m.concept_name;
  j["k"] = m.k;
  j["relation"] = m.relation ? Json(to_string(*m.relation)) : Json(nullptr);
  j["category_filter"] = m.category_filter ? Json(to_string(*m.category_filter)) : Json(nullptr);
  j["selection"] = m.selection;
  j["order"] = m.order;
  j["prefix_used"] = m.prefix_used;
  j["properties"] = m.properties;
  j["series"] = m.series;
  return j;
}

inline PromptMeta meta_from_json(const Json& j) {
  PromptMeta m;
  auto family = parse_family(j.at("family").get<std::string>());
  if (!family) throw Error(Errc::MalformedPrompt, "unknown prompt family");
  m.family = *family;
  m.concept_name = j.value("concept", "");
  m.k = j.value("k", 0);
  if (j.contains("relation") && !j["relation"].is_null()) {
    auto r = parse_relation(j["relation"].get<std::string>());
    if (!r) throw Error(Errc::UnknownRelation, "unknown relation in prompt meta");
    m.relation = *r;
  }
  if (j.contains("category_filter") && !j["category_filter"].is_null()) {
    auto c = parse_category(j["category_filter"].get<std::string>());
    if (!c) throw Error(Errc::UnknownCategory, "unknown category in prompt meta");
    m.category_filter = *c;
  }
  m.selection = j.value("selection", "");
  m.order = j.value("order", "");
  m.prefix_used = j.value("prefix_used", false);
  m.properties = j.value("properties", std::vector<std::string>{});
  m.series = j.value("series", "");
  return m;
}

inline Json prompt_to_json(const Prompt& p) {
  Json j;
  j["text"] = p.text;
  j["target"] = p.target ? Json(*p.target) : Json(nullptr);
  Json gold = Json::array();
  for (const auto& g : p.gold) gold.push_back({{"token", g.token}, {"pf", g.pf}});
  j["gold"] = std::move(gold);
  j["meta"] = meta_to_json(p.meta);
  return j;
}

inline Prompt prompt_from_json(const Json& j) {
  Prompt p;
  p.text = j.at("text").get<std::string>();
  if (j.contains("target") && !j["target"].is_null()) p.target = j["target"].get<std::string>();
  if (j.contains("gold"))
    for (const auto& g : j["gold"]) p.gold.push_back({g.at("token").get<std::string>(), g.at("pf").get<int>()});
  if (j.contains("meta")) p.meta = meta_from_json(j["meta"]);
  validate_prompt(p);
  return p;
}

}  // namespace sta

#endif  // STA_PROBE_PROMPT_HPP
