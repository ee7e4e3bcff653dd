#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "fake_service.hpp"
#include "sta_probe/remote_backend.hpp"
#include "test_support.hpp"

namespace sta {
namespace {

RemoteOptions fast_options(const std::string& cache_dir = "") {
  RemoteOptions o;
  o.max_retries = 2;
  o.backoff_ms = 1;
  o.backoff_cap_ms = 5;
  o.timeout_s = 5;
  o.cache_dir = cache_dir;
  return o;
}

Prompt custom(const std::string& text) {
  Prompt p;
  p.text = text;
  return p;
}

TEST(RemoteBackend, InfoAndScore) {
  test::FakeService svc("bert-base-uncased");
  RemoteBackend b(svc.endpoint(), "bert-base-uncased", fast_options());
  EXPECT_EQ(b.info().mask_token, "[MASK]");
  EXPECT_EQ(b.id(), "remote:bert-base-uncased");
  auto prompt = custom("A {MASK} has fur.");
  auto vocab = CandidateVocab::from_tokens({"bear", "cat", "teddy-bear"});
  auto s = b.score({prompt, vocab});
  ASSERT_EQ(s.entries.size(), 2u);
  EXPECT_EQ(s.entries[0].token, "bear");
  EXPECT_NEAR(s.entries[0].prob, 5.0 / 9.0, 1e-12);
  ASSERT_TRUE(s.entries[0].raw_prob);
  EXPECT_NEAR(*s.entries[0].raw_prob, 5.0 / 90.0, 1e-12);
  EXPECT_EQ(s.unscorable, (std::vector<std::string>{"teddy-bear"}));
  EXPECT_EQ(check_scored(s, vocab), "");
}

TEST(RemoteBackend, EndpointWithPathPrefix) {
  EXPECT_EQ(split_endpoint("http://h:8000/mlm/"), (std::pair<std::string, std::string>{"http://h:8000", "/mlm"}));
  EXPECT_EQ(split_endpoint("http://h:8000"), (std::pair<std::string, std::string>{"http://h:8000", ""}));
  EXPECT_THROW(split_endpoint("h:8000"), Error);
}

TEST(RemoteBackend, CacheHitMakesNoNetworkCall) {
  test::FakeService svc("m1");
  test::ScratchDir dir("cache");
  auto prompt = custom("A {MASK} has fur.");
  auto vocab = CandidateVocab::from_tokens({"bear", "cat"});
  ScoredCandidates first;
  {
    RemoteBackend b(svc.endpoint(), "m1", fast_options(dir.str()));
    first = b.score({prompt, vocab});
    EXPECT_TRUE(std::filesystem::exists(b.cache_path({prompt, vocab})));
    EXPECT_EQ(b.cache_path({prompt, vocab}).parent_path().filename(), "m1");
  }
  const int calls = svc.score_calls.load();
  RemoteBackend again(svc.endpoint(), "m1", fast_options(dir.str()));
  const std::size_t before = again.network_calls();
  auto second = again.score({prompt, vocab});
  EXPECT_EQ(again.network_calls(), before);
  EXPECT_EQ(svc.score_calls.load(), calls);
  EXPECT_EQ(first, second);

  // a different candidate list is a different key
  auto other = CandidateVocab::from_tokens({"bear", "cat", "dog"});
  again.score({prompt, other});
  EXPECT_EQ(svc.score_calls.load(), calls + 1);
}

TEST(RemoteBackend, CacheFileRecordsKey) {
  test::FakeService svc("m1");
  test::ScratchDir dir("cachekey");
  RemoteBackend b(svc.endpoint(), "m1", fast_options(dir.str()));
  auto prompt = custom("A {MASK} is red.");
  auto vocab = CandidateVocab::from_tokens({"apple", "cherry"});
  b.score({prompt, vocab});
  Json entry = Json::parse(test::slurp(b.cache_path({prompt, vocab})));
  EXPECT_EQ(entry["model_id"], "m1");
  EXPECT_EQ(entry["prompt"], prompt.text);
  EXPECT_EQ(entry["vocab_fingerprint"], vocab.fingerprint());
  EXPECT_TRUE(entry["response"].contains("scores"));
  EXPECT_EQ(b.cache_path({prompt, vocab}).filename().string(),
            prompt.fingerprint() + "-" + vocab.fingerprint() + ".json");
}

TEST(RemoteBackend, BadProbabilityMassIsProtocolViolation) {
  test::FakeService svc("m1");
  svc.override_body = [](const Json&) {
    return Json{{"scores", {{{"token", "bear"}, {"logprob", std::log(0.5)}}, {{"token", "cat"}, {"logprob", std::log(0.3)}}}}};
  };
  RemoteBackend b(svc.endpoint(), "m1", fast_options());
  auto prompt = custom("A {MASK} has fur.");
  auto vocab = CandidateVocab::from_tokens({"bear", "cat"});
  try {
    b.score({prompt, vocab});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ProtocolViolation);
  }
}

TEST(RemoteBackend, ForeignTokensAreProtocolViolation) {
  test::FakeService svc("m1");
  svc.override_body = [](const Json&) { return Json{{"scores", {{{"token", "zebra"}, {"logprob", 0.0}}}}}; };
  RemoteBackend b(svc.endpoint(), "m1", fast_options());
  auto prompt = custom("A {MASK} has fur.");
  auto vocab = CandidateVocab::from_tokens({"bear"});
  EXPECT_THROW(b.score({prompt, vocab}), Error);
}

TEST(RemoteBackend, ModelMismatch) {
  test::FakeService svc("roberta-base");
  try {
    RemoteBackend b(svc.endpoint(), "bert-base-uncased", fast_options());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ModelMismatch);
  }
}

TEST(RemoteBackend, RetriesTransientFailures) {
  test::FakeService svc("m1");
  svc.fail_first = 2;
  RemoteBackend b(svc.endpoint(), "m1", fast_options());
  auto prompt = custom("A {MASK} has fur.");
  auto vocab = CandidateVocab::from_tokens({"bear", "cat"});
  EXPECT_EQ(b.score({prompt, vocab}).entries.size(), 2u);
  EXPECT_EQ(svc.score_calls.load(), 3);
}

TEST(RemoteBackend, GivesUpAfterRetryCap) {
  test::FakeService svc("m1");
  svc.fail_first = 100;
  RemoteBackend b(svc.endpoint(), "m1", fast_options());
  auto prompt = custom("A {MASK} has fur.");
  auto vocab = CandidateVocab::from_tokens({"bear"});
  try {
    b.score({prompt, vocab});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BackendUnavailable);
  }
  EXPECT_EQ(svc.score_calls.load(), 3);
}

TEST(RemoteBackend, UnreachableEndpoint) {
  // nothing listens on port 1
  try {
    RemoteBackend b("http://127.0.0.1:1", "m1", fast_options());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BackendUnavailable);
    EXPECT_EQ(error_domain(e.code()), ErrorDomain::Backend);
  }
}

TEST(RemoteBackend, AllUnscorableIsCandidateNotScorable) {
  test::FakeService svc("m1");
  RemoteBackend b(svc.endpoint(), "m1", fast_options());
  auto prompt = custom("A {MASK} has fur.");
  auto vocab = CandidateVocab::from_tokens({"teddy-bear", "polar-bear"});
  try {
    b.score({prompt, vocab});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CandidateNotScorable);
  }
}

TEST(RemoteBackend, ConcurrentCallsSameKey) {
  test::FakeService svc("m1");
  test::ScratchDir dir("concurrent");
  RemoteOptions o = fast_options(dir.str());
  o.max_in_flight = 2;
  RemoteBackend b(svc.endpoint(), "m1", o);
  auto prompt = custom("A {MASK} has fur.");
  auto vocab = CandidateVocab::from_tokens({"bear", "cat", "wolf"});
  std::vector<ScoredCandidates> out(8);
  {
    std::vector<std::jthread> threads;
    for (std::size_t i = 0; i < out.size(); ++i) threads.emplace_back([&, i] { out[i] = b.score({prompt, vocab}); });
  }
  for (const auto& s : out) EXPECT_EQ(s, out[0]);
  EXPECT_TRUE(Json::accept(test::slurp(b.cache_path({prompt, vocab}))));
}

}  // namespace
}  // namespace sta
