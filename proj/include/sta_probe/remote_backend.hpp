#ifndef STA_PROBE_REMOTE_BACKEND_HPP
#define STA_PROBE_REMOTE_BACKEND_HPP

// Client for the HTTP+JSON scoring service.
//
//   GET  /v1/info  -> {"model_id", "mask_token", "vocab_fingerprint"}
//   POST /v1/score    {"prompt": "...{MASK}...", "candidates": [tok...]}
//                  -> {"scores": [{"token", "logprob", "raw_prob"}], "unscorable": [tok...]}
//
// `logprob` is renormalized over the scorable candidates; `raw_prob` is the
// full-vocabulary softmax mass at the mask position.
//
// Responses are cached on disk as
//   <cache_dir>/<model_id>/<prompt_fingerprint>-<vocab_fingerprint>.json
// holding {"model_id", "prompt", "vocab_fingerprint", "response"}.

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>

#include <httplib.h>
#include <json.hpp>

#include "sta_probe/backend.hpp"

namespace sta {

struct RemoteOptions {
  int max_retries = 3;            // attempts after the first
  int backoff_ms = 100;           // first retry delay; doubles per attempt
  int backoff_cap_ms = 2000;
  int max_in_flight = 4;
  int timeout_s = 120;
  std::filesystem::path cache_dir;  // empty disables caching
};

struct ServiceInfo {
  std::string model_id;
  std::string mask_token;
  std::string vocab_fingerprint;
};

/// Splits "http://host:port/base" into the client origin and a path prefix.
inline std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) throw Error(Errc::InvalidConfig, "endpoint needs a scheme: '" + endpoint + "'");
  auto path_start = endpoint.find('/', scheme_end + 3);
  std::string origin = endpoint.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : endpoint.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {origin, prefix};
}

inline std::string sanitize_path_component(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return out.empty() ? "_" : out;
}

/// Converts a /v1/score response body into ScoredCandidates, enforcing the
/// contract. Throws ProtocolViolation on any breach.
inline ScoredCandidates scored_from_response(const Json& body, const MaskQuery& q, const std::string& backend_id) {
  auto violation = [](const std::string& what) { return Error(Errc::ProtocolViolation, what); };
  if (!body.is_object() || !body.contains("scores") || !body["scores"].is_array())
    throw violation("response lacks a 'scores' array");
  std::vector<WeightedToken> weights;
  double total = 0.0;
  for (const auto& s : body["scores"]) {
    if (!s.is_object() || !s.contains("token") || !s["token"].is_string() || !s.contains("logprob") ||
        !s["logprob"].is_number())
      throw violation("malformed score entry");
    WeightedToken w;
    w.token = s["token"].get<std::string>();
    double lp = s["logprob"].get<double>();
    if (!(lp <= 1e-9)) throw violation("logprob > 0 for '" + w.token + "'");
    w.weight = std::exp(std::min(lp, 0.0));
    if (s.contains("raw_prob") && !s["raw_prob"].is_null()) {
      if (!s["raw_prob"].is_number()) throw violation("raw_prob is not a number");
      w.raw_prob = s["raw_prob"].get<double>();
    }
    total += w.weight;
    weights.push_back(std::move(w));
  }
  if (std::abs(total - 1.0) > 1e-6) throw violation("probabilities sum to " + std::to_string(total) + ", expected 1");
  ScoredCandidates out;
  out.backend_id = backend_id;
  out.prompt_fingerprint = q.prompt.fingerprint();
  if (body.contains("unscorable")) {
    if (!body["unscorable"].is_array()) throw violation("'unscorable' is not an array");
    for (const auto& u : body["unscorable"]) {
      if (!u.is_string()) throw violation("'unscorable' holds a non-string");
      out.unscorable.push_back(u.get<std::string>());
    }
  }
  // exp(logprob) already sums to one within tolerance; keep the service's values.
  for (auto& w : weights) out.entries.push_back({std::move(w.token), w.weight, w.raw_prob});
  std::sort(out.entries.begin(), out.entries.end(), entry_before);
  if (auto problem = check_scored(out, q.candidates); !problem.empty()) throw violation(problem);
  return out;
}

class RemoteBackend : public Backend {
 public:
  RemoteBackend(const std::string& endpoint, std::string model_id, RemoteOptions options = {})
      : model_id_(std::move(model_id)),
        options_(std::move(options)),
        in_flight_(std::max(1, options_.max_in_flight)) {
    std::tie(origin_, prefix_) = split_endpoint(endpoint);
    info_ = fetch_info();
    if (info_.model_id != model_id_)
      throw Error(Errc::ModelMismatch, "service hosts '" + info_.model_id + "', expected '" + model_id_ + "'");
  }

  std::string id() const override { return "remote:" + model_id_; }
  const ServiceInfo& info() const { return info_; }
  std::size_t network_calls() const { return network_calls_.load(); }

  std::filesystem::path cache_path(const MaskQuery& q) const {
    return options_.cache_dir / sanitize_path_component(model_id_) /
           (q.prompt.fingerprint() + "-" + q.candidates.fingerprint() + ".json");
  }

  ScoredCandidates score(const MaskQuery& q) const override {
    require_scorable_query(q);
    const bool caching = !options_.cache_dir.empty();
    std::filesystem::path path;
    if (caching) {
      path = cache_path(q);
      if (auto cached = read_cache(path, q)) return scored_from_response(*cached, q, id());
    }
    Json body = post_score(q);
    ScoredCandidates result = scored_from_response(body, q, id());
    if (caching) write_cache(path, q, body);
    return result;
  }

 private:
  httplib::Client make_client() const {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(options_.timeout_s, 0);
    cli.set_read_timeout(options_.timeout_s, 0);
    cli.set_write_timeout(options_.timeout_s, 0);
    return cli;
  }

  void backoff(int attempt) const {
    long long delay = static_cast<long long>(options_.backoff_ms) << std::min(attempt, 20);
    delay = std::min<long long>(delay, options_.backoff_cap_ms);
    std::this_thread::sleep_for(std::chrono::milliseconds(delay));
  }

  /// Runs `request` with retries on transport failures and 5xx responses.
  template <typename Request>
  httplib::Result with_retries(const std::string& what, Request request) const {
    std::string last_error;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
      if (attempt > 0) backoff(attempt - 1);
      ++network_calls_;
      httplib::Result res = request();
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      return res;
    }
    throw Error(Errc::BackendUnavailable, what + " failed after " + std::to_string(options_.max_retries + 1) +
                                              " attempts: " + last_error);
  }

  static Json parse_body(const std::string& body) {
    try {
      return Json::parse(body);
    } catch (const Json::exception& e) {
      throw Error(Errc::ProtocolViolation, std::string("response is not JSON: ") + e.what());
    }
  }

  ServiceInfo fetch_info() const {
    auto res = with_retries("GET /v1/info", [&] { return make_client().Get(prefix_ + "/v1/info"); });
    if (res->status != 200) throw Error(Errc::ProtocolViolation, "/v1/info returned HTTP " + std::to_string(res->status));
    Json j = parse_body(res->body);
    if (!j.is_object() || !j.contains("model_id") || !j["model_id"].is_string())
      throw Error(Errc::ProtocolViolation, "/v1/info lacks model_id");
    return {j["model_id"].get<std::string>(), j.value("mask_token", ""), j.value("vocab_fingerprint", "")};
  }

  Json post_score(const MaskQuery& q) const {
    Json req;
    req["prompt"] = q.prompt.text;
    req["candidates"] = q.candidates.tokens();
    const std::string payload = req.dump();
    in_flight_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{in_flight_};
    auto res = with_retries("POST /v1/score", [&] {
      return make_client().Post(prefix_ + "/v1/score", payload, "application/json");
    });
    if (res->status == 422)
      throw Error(Errc::CandidateNotScorable, "no candidate is a single token for this model");
    if (res->status != 200)
      throw Error(Errc::ProtocolViolation, "/v1/score returned HTTP " + std::to_string(res->status) + ": " + res->body);
    return parse_body(res->body);
  }

  std::optional<Json> read_cache(const std::filesystem::path& path, const MaskQuery& q) const {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    Json entry;
    try {
      entry = Json::parse(in);
    } catch (const Json::exception&) {
      return std::nullopt;  // torn or foreign file: refetch
    }
    if (entry.value("model_id", "") != model_id_ || entry.value("prompt", "") != q.prompt.text ||
        entry.value("vocab_fingerprint", "") != q.candidates.fingerprint() || !entry.contains("response"))
      return std::nullopt;
    return entry["response"];
  }

  void write_cache(const std::filesystem::path& path, const MaskQuery& q, const Json& response) const {
    std::mutex& m = lock_for(path.string());
    std::lock_guard lock(m);
    std::filesystem::create_directories(path.parent_path());
    Json entry;
    entry["model_id"] = model_id_;
    entry["prompt"] = q.prompt.text;
    entry["vocab_fingerprint"] = q.candidates.fingerprint();
    entry["response"] = response;
    std::ostringstream tid;
    tid << std::this_thread::get_id();
    auto tmp = path;
    tmp += ".tmp" + tid.str();
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << entry.dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  std::mutex& lock_for(const std::string& key) const {
    std::lock_guard lock(locks_mutex_);
    auto& slot = key_locks_[key];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
  }

  std::string model_id_;
  RemoteOptions options_;
  std::string origin_;
  std::string prefix_;
  ServiceInfo info_;
  mutable std::counting_semaphore<> in_flight_;
  mutable std::atomic<std::size_t> network_calls_{0};
  mutable std::mutex locks_mutex_;
  mutable std::map<std::string, std::unique_ptr<std::mutex>> key_locks_;
};

}  // namespace sta

#endif  // STA_PROBE_REMOTE_BACKEND_HPP
