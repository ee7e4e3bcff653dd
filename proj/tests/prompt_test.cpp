#include <gtest/gtest.h>

#include <set>

#include "sta_probe/prompt.hpp"
#include "test_support.hpp"

namespace sta {
namespace {

const NormsDataset& fixture_norms() {
  static const NormsDataset d = load_norms(test::fixture("norms.tsv"));
  return d;
}

PropertyNorm norm_of(const std::string& concept_name, const std::string& phrase) {
  for (const auto& n : fixture_norms().norms_of(concept_name))
    if (n.phrase == phrase) return n;
  throw std::runtime_error("no norm " + phrase);
}

TEST(RetrievalPrompt, FurBigClaws) {
  auto p = build_retrieval_prompt(fixture_norms().concept_of("bear"),
                                  {norm_of("bear", "has fur"), norm_of("bear", "is big"), norm_of("bear", "has claws")});
  EXPECT_EQ(p.text, "A {MASK} has fur, is big, and has claws.");
  EXPECT_EQ(p.target, "bear");
  EXPECT_EQ(p.meta.k, 3);
  EXPECT_EQ(p.meta.family, PromptFamily::Retrieval);
  EXPECT_EQ(p.meta.properties, (std::vector<std::string>{"has fur", "is big", "has claws"}));
}

TEST(RetrievalPrompt, ShortLists) {
  const auto& bear = fixture_norms().concept_of("bear");
  EXPECT_EQ(build_retrieval_prompt(bear, {norm_of("bear", "has fur")}).text, "A {MASK} has fur.");
  EXPECT_EQ(build_retrieval_prompt(bear, {norm_of("bear", "has fur"), norm_of("bear", "is big")}).text,
            "A {MASK} has fur and is big.");
}

TEST(RetrievalPrompt, Errors) {
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::InvalidConfig;
  };
  const auto& d = fixture_norms();
  EXPECT_EQ(code([&] { build_retrieval_prompt(d.concept_of("bear"), {}); }), Errc::EmptyPropertyList);
  EXPECT_EQ(code([&] { build_retrieval_prompt(d.concept_of("owl"), {d.norms_of("owl")[0]}); }), Errc::ArticleMismatch);
  EXPECT_EQ(code([&] { build_retrieval_prompt(d.concept_of("bear"), {norm_of("wolf", "has fur")}); }),
            Errc::MixedConcept);
}

TEST(RetrievalPrompt, ExactlyOneMaskAndTrailingPeriod) {
  const auto& d = fixture_norms();
  for (const auto& [name, c] : d.concepts) {
    if (c.article != Article::A) continue;
    for (const auto& p : build_retrieval_series(c, d.norms_of(name))) {
      EXPECT_EQ(count_occurrences(p.text, kMask), 1u);
      EXPECT_EQ(p.text.back(), '.');
      EXPECT_EQ(p.text.find("  "), std::string::npos);
    }
  }
}

TEST(RetrievalSeries, EachPromptExtendsThePrevious) {
  auto series = build_retrieval_series(fixture_norms(), "cat", Selection::top(), Ordering::decreasing());
  ASSERT_EQ(series.size(), 10u);
  for (std::size_t i = 0; i < series.size(); ++i) {
    EXPECT_EQ(series[i].meta.k, static_cast<int>(i + 1));
    EXPECT_EQ(series[i].meta.selection, "top_pf");
    EXPECT_EQ(series[i].meta.order, "decreasing_pf");
    if (i > 0) {
      const auto& prev = series[i - 1].meta.properties;
      const auto& cur = series[i].meta.properties;
      EXPECT_TRUE(std::equal(prev.begin(), prev.end(), cur.begin()));
    }
  }
}

TEST(RetrievalSeries, TopPfIsNonIncreasingAgainstRawFile) {
  std::map<std::string, int> pf;
  for (const auto& row : test::raw_rows(test::fixture("norms.tsv")))
    if (row.concept_name == "tiger") pf[row.phrase] = row.pf;
  auto series = build_retrieval_series(fixture_norms(), "tiger", Selection::top(), Ordering::decreasing());
  const auto& props = series.back().meta.properties;
  ASSERT_EQ(props.size(), 10u);
  for (std::size_t i = 1; i < props.size(); ++i) EXPECT_GE(pf.at(props[i - 1]), pf.at(props[i]));
  // the ten chosen are the ten largest
  std::vector<int> all;
  for (const auto& [_, v] : pf) all.push_back(v);
  std::sort(all.rbegin(), all.rend());
  EXPECT_EQ(pf.at(props.back()), all[9]);
}

TEST(ElicitationPrompt, Forms) {
  const auto& d = fixture_norms();
  EXPECT_EQ(build_elicitation_prompt(d.concept_of("ladder"), RelationKind::MadeOf, true).text,
            "Everyone knows that a ladder is made of {MASK}.");
  EXPECT_EQ(build_elicitation_prompt(d.concept_of("ladder"), RelationKind::MadeOf, false).text,
            "A ladder is made of {MASK}.");
  EXPECT_EQ(build_elicitation_prompt(d.concept_of("bear"), RelationKind::Has, true).text,
            "Everyone knows that a bear has {MASK}.");
  EXPECT_EQ(build_elicitation_prompt(d.concept_of("anchor"), RelationKind::IsA, true).text,
            "Everyone knows that an anchor is a {MASK}.");
  EXPECT_EQ(build_elicitation_prompt(d.concept_of("owl"), RelationKind::HasA, false).text, "An owl has a {MASK}.");
  EXPECT_EQ(build_elicitation_prompt(d.concept_of("cat"), RelationKind::Is, false).text, "A cat is {MASK}.");
  try {
    build_elicitation_prompt(d.concept_of("cat"), RelationKind::Other, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnsupportedRelation);
  }
}

TEST(ElicitationPrompt, PrefixAblationIsPrefixPlusLowercasedFirstLetter) {
  const auto& d = fixture_norms();
  for (const auto& [name, c] : d.concepts)
    for (auto rel : kElicitationRelations) {
      std::string with = build_elicitation_prompt(c, rel, true).text;
      std::string without = build_elicitation_prompt(c, rel, false).text;
      without[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(without[0])));
      EXPECT_EQ(with, std::string(kContextPrefix) + without);
    }
}

TEST(GoldCompletions, BearHas) {
  auto gold = gold_completions(fixture_norms(), "bear", RelationKind::Has);
  std::vector<GoldCompletion> expected{{"fur", 27}, {"claws", 15}, {"teeth", 11}, {"cubs", 7}, {"paws", 7}};
  EXPECT_EQ(gold, expected);
}

TEST(GoldCompletions, LadderMadeOf) {
  auto gold = gold_completions(fixture_norms(), "ladder", RelationKind::MadeOf);
  std::vector<GoldCompletion> expected{{"metal", 25}, {"wood", 20}, {"plastic", 4}, {"aluminum", 2}, {"rope", 2}};
  EXPECT_EQ(gold, expected);
}

TEST(GoldCompletions, MultiWordPhrasesContributeNothing) {
  // "is found in forests" has relation is but no single-word head
  for (const auto& g : gold_completions(fixture_norms(), "bear", RelationKind::Is)) {
    EXPECT_FALSE(has_whitespace(g.token));
    EXPECT_NE(g.token, "found");
  }
  auto is_gold = gold_completions(fixture_norms(), "bear", RelationKind::Is);
  EXPECT_EQ(is_gold.size(), 3u);
}

TEST(GoldCompletions, DuplicateHeadsKeepLargestPf) {
  std::istringstream in(
      "concept\tarticle\tphrase\trelation\tcompletion_head\tcategory\tpf\n"
      "boat\ta\tis made of wood\tmade_of\twood\tvisual_perceptual\t4\n"
      "boat\ta\tis made from wood\tmade_of\twood\tvisual_perceptual\t9\n");
  auto d = parse_norms(in, "inline");
  EXPECT_EQ(gold_completions(d, "boat", RelationKind::MadeOf), (std::vector<GoldCompletion>{{"wood", 9}}));
}

TEST(SensibleVocab, EqualsUnionOfHeadsFromRawFile) {
  const std::map<RelationKind, std::string> raw_names{{RelationKind::Is, "is"},
                                                      {RelationKind::IsA, "is_a"},
                                                      {RelationKind::Has, "has"},
                                                      {RelationKind::HasA, "has_a"},
                                                      {RelationKind::MadeOf, "made_of"}};
  auto rows = test::raw_rows(test::fixture("norms.tsv"));
  for (const auto& [rel, raw] : raw_names) {
    std::set<std::string> expected;
    for (const auto& r : rows)
      if (r.relation == raw && !r.head.empty() && r.concept_name.find(' ') == std::string::npos) expected.insert(r.head);
    auto v = sensible_vocab(fixture_norms(), rel);
    EXPECT_EQ(std::set<std::string>(v.tokens().begin(), v.tokens().end()), expected) << raw;
  }
}

TEST(PromptJson, RoundTrip) {
  const auto& d = fixture_norms();
  std::vector<Prompt> prompts = build_retrieval_series(d, "bus", Selection::random(3), Ordering::shuffled(4));
  auto e = build_elicitation_prompt(d.concept_of("bear"), RelationKind::Has, true);
  e.gold = gold_completions(d, "bear", RelationKind::Has);
  prompts.push_back(e);
  for (const auto& p : prompts) {
    std::string line = prompt_to_json(p).dump();
    EXPECT_EQ(line.find('\n'), std::string::npos);
    EXPECT_EQ(prompt_from_json(Json::parse(line)), p);
  }
}

TEST(PromptJson, RejectsMalformedText) {
  EXPECT_THROW(prompt_from_json(Json::parse(R"({"text": "no mask here."})")), Error);
  EXPECT_THROW(prompt_from_json(Json::parse(R"({"text": "{MASK} and {MASK}."})")), Error);
  EXPECT_THROW(prompt_from_json(Json::parse(R"({"text": "A {MASK} barks"})")), Error);
}

}  // namespace
}  // namespace sta
