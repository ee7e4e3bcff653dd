#include <gtest/gtest.h>

#include <random>

#include "sta_probe/backend.hpp"
#include "test_support.hpp"

namespace sta {
namespace {

Prompt custom(const std::string& text) {
  Prompt p;
  p.text = text;
  return p;
}

const NormsDataset& fixture_norms() {
  static const NormsDataset d = load_norms(test::fixture("norms.tsv"));
  return d;
}

TEST(FixtureBackend, EchoesNormalizedTable) {
  FixtureBackend b({{"bear", 0.5}, {"wolf", 0.3}, {"cat", 0.2}});
  auto prompt = custom("A {MASK} has fur.");
  auto vocab = CandidateVocab::from_tokens({"cat", "wolf", "bear"});
  auto s = b.score({prompt, vocab});
  ASSERT_EQ(s.entries.size(), 3u);
  EXPECT_EQ(s.entries[0].token, "bear");
  EXPECT_DOUBLE_EQ(s.entries[0].prob, 0.5);
  EXPECT_EQ(s.entries[2].token, "cat");
  EXPECT_EQ(s.backend_id, "fixture");
  EXPECT_EQ(s.prompt_fingerprint, prompt.fingerprint());
  EXPECT_EQ(check_scored(s, vocab), "");
}

TEST(FixtureBackend, AllZeroIsUniform) {
  FixtureBackend b(FixtureBackend::Table{});
  auto prompt = custom("A {MASK} has fur.");
  auto vocab = CandidateVocab::from_tokens({"c", "a", "b", "d"});
  auto s = b.score({prompt, vocab});
  for (const auto& e : s.entries) EXPECT_DOUBLE_EQ(e.prob, 0.25);
  EXPECT_EQ(s.entries[0].token, "a");
  EXPECT_EQ(s.entries[3].token, "d");
}

TEST(FixtureBackend, ScalingWeightsChangesNothing) {
  std::mt19937_64 rng(8);
  auto prompt = custom("A {MASK} is red.");
  for (int t = 0; t < 50; ++t) {
    FixtureBackend::Table table, scaled;
    std::vector<std::string> toks;
    for (int i = 0; i < 12; ++i) {
      std::string tok = "t" + std::to_string(i);
      double w = static_cast<double>(1 + rng() % 100);
      table[tok] = w;
      scaled[tok] = w * 8.0;
      toks.push_back(tok);
    }
    auto vocab = CandidateVocab::from_tokens(toks);
    auto a = FixtureBackend(table).score({prompt, vocab});
    auto b = FixtureBackend(scaled).score({prompt, vocab});
    ASSERT_EQ(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
      EXPECT_EQ(a.entries[i].token, b.entries[i].token);
      EXPECT_NEAR(a.entries[i].prob, b.entries[i].prob, 1e-15);
    }
  }
}

TEST(FixtureBackend, PromptTablesAndHashFallback) {
  auto b = FixtureBackend::load(test::fixture("fixture_scores.json"));
  auto vocab = CandidateVocab::from_tokens({"bear", "wolf", "cat", "tiger"});
  auto prompt = custom("A {MASK} has fur, is big, and has claws.");
  auto s = b.score({prompt, vocab});
  EXPECT_EQ(s.entries[0].token, "bear");
  EXPECT_EQ(check_scored(s, vocab), "");
  // unknown prompt: deterministic positive pseudo-scores
  auto other = custom("A {MASK} is loud.");
  auto s1 = b.score({other, vocab});
  auto s2 = b.score({other, vocab});
  EXPECT_EQ(s1, s2);
  for (const auto& e : s1.entries) EXPECT_GT(e.prob, 0.0);
}

TEST(FixtureBackend, RejectsBadInput) {
  EXPECT_THROW(FixtureBackend({{"x", -1.0}}), Error);
  EXPECT_THROW(FixtureBackend::from_json(Json::parse(R"({"missing": "sometimes"})")), Error);
  FixtureBackend b(FixtureBackend::Table{});
  auto bad = custom("no mask.");
  auto vocab = CandidateVocab::from_tokens({"x"});
  EXPECT_THROW(b.score({bad, vocab}), Error);
}

TEST(RankOf, Cases) {
  ScoredCandidates s;
  s.entries = normalize_and_rank({{"bee", 0.3, {}}, {"ant", 0.3, {}}, {"cow", 0.4, {}}});
  EXPECT_EQ(rank_of(s, "cow"), 1);
  // equal probability: lexicographic order decides
  EXPECT_EQ(rank_of(s, "ant"), 2);
  EXPECT_EQ(rank_of(s, "bee"), 3);
  try {
    rank_of(s, "yak");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::TargetAbsent);
  }
}

TEST(CheckScored, DetectsBreaches) {
  auto vocab = CandidateVocab::from_tokens({"a", "b"});
  ScoredCandidates s;
  s.entries = {{"a", 0.6, {}}, {"b", 0.4, {}}};
  EXPECT_EQ(check_scored(s, vocab), "");
  s.entries = {{"b", 0.4, {}}, {"a", 0.6, {}}};
  EXPECT_NE(check_scored(s, vocab), "");
  s.entries = {{"a", 0.6, {}}, {"c", 0.4, {}}};
  EXPECT_NE(check_scored(s, vocab), "");
  s.entries = {{"a", 0.6, {}}, {"b", 0.3, {}}};
  EXPECT_NE(check_scored(s, vocab), "");
  s.entries = {{"a", 1.0, {}}};
  s.unscorable = {"b"};
  EXPECT_EQ(check_scored(s, vocab), "");
}

std::size_t brute_overlap(const std::vector<std::string>& props, const std::string& candidate) {
  std::size_t n = 0;
  for (const auto& row : test::raw_rows(test::fixture("norms.tsv")))
    if (row.concept_name == candidate && std::find(props.begin(), props.end(), row.phrase) != props.end()) ++n;
  return n;
}

TEST(OracleBackend, ScoresMatchOverlapCount) {
  OracleBackend oracle(fixture_norms(), 1e-3);
  std::vector<std::string> props{"has fur", "has claws", "is big", "has four legs"};
  for (const char* c : {"bear", "wolf", "cat", "tiger", "ladder", "owl", "Mercedes"})
    EXPECT_DOUBLE_EQ(oracle.raw_score(props, c), static_cast<double>(brute_overlap(props, c)) + 1e-3) << c;
}

TEST(OracleBackend, TargetRanksFirstAtFullLength) {
  const auto& d = fixture_norms();
  OracleBackend oracle(d, 1e-3);
  auto vocab = load_vocab(test::fixture("vocab.txt"));
  for (const auto& name : {"bear", "bus", "cake", "cat", "helicopter", "ladder", "tiger", "wolf"}) {
    auto series = build_retrieval_series(d, name, Selection::top(), Ordering::decreasing());
    auto s = oracle.score({series.back(), vocab});
    EXPECT_EQ(rank_of(s, name), 1) << name;
    EXPECT_EQ(check_scored(s, vocab), "");
  }
}

TEST(OracleBackend, TiedConceptsGetEqualProbability) {
  // bear and wolf both have "has fur"
  OracleBackend oracle(fixture_norms(), 1e-3);
  Prompt p = build_retrieval_prompt(fixture_norms().concept_of("bear"), {fixture_norms().norms_of("bear")[0]});
  auto vocab = CandidateVocab::from_tokens({"wolf", "bear", "bus"});
  auto s = oracle.score({p, vocab});
  EXPECT_DOUBLE_EQ(s.find("bear")->prob, s.find("wolf")->prob);
  EXPECT_EQ(s.entries[0].token, "bear");
  EXPECT_GT(s.find("bear")->prob, s.find("bus")->prob);
}

TEST(OracleBackend, NoOverlapIsUniform) {
  OracleBackend oracle(fixture_norms(), 0.5);
  Prompt p = custom("A {MASK} sings opera.");
  auto vocab = CandidateVocab::from_tokens({"bear", "ladder", "Mercedes"});
  for (const auto& e : oracle.score({p, vocab}).entries) EXPECT_NEAR(e.prob, 1.0 / 3.0, 1e-15);
}

TEST(OracleBackend, MoreOverlapNeverLowersTargetProbabilityRank) {
  const auto& d = fixture_norms();
  OracleBackend oracle(d, 1e-3);
  auto vocab = load_vocab(test::fixture("vocab.txt"));
  for (const auto& name : {"bear", "cat", "ladder"}) {
    auto series = build_retrieval_series(d, name, Selection::top(), Ordering::decreasing());
    int prev = std::numeric_limits<int>::max();
    for (const auto& p : series) {
      int r = rank_of(oracle.score({p, vocab}), name);
      EXPECT_LE(r, prev) << p.text;
      prev = r;
    }
  }
}

TEST(OracleBackend, FallsBackToParsingText) {
  EXPECT_EQ(parse_retrieval_properties("A {MASK} has fur, is big, and has claws."),
            (std::vector<std::string>{"has fur", "is big", "has claws"}));
  EXPECT_EQ(parse_retrieval_properties("A {MASK} has fur and is big."), (std::vector<std::string>{"has fur", "is big"}));
  EXPECT_EQ(parse_retrieval_properties("A {MASK} has fur."), (std::vector<std::string>{"has fur"}));
  OracleBackend oracle(fixture_norms(), 1e-3);
  Prompt p = custom("A {MASK} has fur, is big, and has claws.");
  auto vocab = CandidateVocab::from_tokens({"bear", "cat", "ladder"});
  EXPECT_EQ(oracle.score({p, vocab}).entries[0].token, "bear");
}

TEST(OracleBackend, RejectsNonPositiveEpsilon) { EXPECT_THROW(OracleBackend(fixture_norms(), 0.0), Error); }

}  // namespace
}  // namespace sta
