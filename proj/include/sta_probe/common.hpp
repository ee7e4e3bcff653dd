#ifndef STA_PROBE_COMMON_HPP
#define STA_PROBE_COMMON_HPP

#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sta {

/// Placeholder for the single masked position in every prompt.
inline constexpr std::string_view kMask = "{MASK}";

enum class Errc {
  // ingestion
  FileNotFound,
  MissingColumn,
  MalformedRow,
  DuplicateNorm,
  NonPositivePF,
  UnknownCategory,
  UnknownRelation,
  BadArticle,
  InconsistentArticle,
  InvalidPhrase,
  EmptyVocab,
  WhitespaceToken,
  UnknownConcept,
  InsufficientProperties,
  // prompts
  EmptyPropertyList,
  MixedConcept,
  ArticleMismatch,
  UnsupportedRelation,
  MalformedPrompt,
  // backends
  TargetAbsent,
  CandidateNotScorable,
  BackendUnavailable,
  ProtocolViolation,
  ModelMismatch,
  // metrics
  EmptyInput,
  RelevantNotInRanking,
  TooFewPoints,
  MissingProbability,
  ZeroVariance,
  MixedFamily,
  // runner
  NoEligibleConcepts,
  UnsupportedCategory,
  NoGoldCompletions,
  InvalidConfig,
};

inline const char* errc_name(Errc e) {
  switch (e) {
    case Errc::FileNotFound: return "FileNotFound";
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::DuplicateNorm: return "DuplicateNorm";
    case Errc::NonPositivePF: return "NonPositivePF";
    case Errc::UnknownCategory: return "UnknownCategory";
    case Errc::UnknownRelation: return "UnknownRelation";
    case Errc::BadArticle: return "BadArticle";
    case Errc::InconsistentArticle: return "InconsistentArticle";
    case Errc::InvalidPhrase: return "InvalidPhrase";
    case Errc::EmptyVocab: return "EmptyVocab";
    case Errc::WhitespaceToken: return "WhitespaceToken";
    case Errc::UnknownConcept: return "UnknownConcept";
    case Errc::InsufficientProperties: return "InsufficientProperties";
    case Errc::EmptyPropertyList: return "EmptyPropertyList";
    case Errc::MixedConcept: return "MixedConcept";
    case Errc::ArticleMismatch: return "ArticleMismatch";
    case Errc::UnsupportedRelation: return "UnsupportedRelation";
    case Errc::MalformedPrompt: return "MalformedPrompt";
    case Errc::TargetAbsent: return "TargetAbsent";
    case Errc::CandidateNotScorable: return "CandidateNotScorable";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::ProtocolViolation: return "ProtocolViolation";
    case Errc::ModelMismatch: return "ModelMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::RelevantNotInRanking: return "RelevantNotInRanking";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::MissingProbability: return "MissingProbability";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::MixedFamily: return "MixedFamily";
    case Errc::NoEligibleConcepts: return "NoEligibleConcepts";
    case Errc::UnsupportedCategory: return "UnsupportedCategory";
    case Errc::NoGoldCompletions: return "NoGoldCompletions";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

/// Every failure raised by the library. `line` is set for file-level
/// validation errors (1-based line in the offending file).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::optional<std::size_t> line = std::nullopt)
      : std::runtime_error(format(code, what, line)), code_(code), line_(line) {}

  Errc code() const noexcept { return code_; }
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  static std::string format(Errc code, const std::string& what, std::optional<std::size_t> line) {
    std::string s = errc_name(code);
    if (line) s += " at line " + std::to_string(*line);
    s += ": " + what;
    return s;
  }

  Errc code_;
  std::optional<std::size_t> line_;
};

/// Which subsystem an error belongs to; drives the CLI exit-code taxonomy.
enum class ErrorDomain { Usage, Data, Backend };

inline ErrorDomain error_domain(Errc e) {
  switch (e) {
    case Errc::BackendUnavailable:
    case Errc::ProtocolViolation:
    case Errc::ModelMismatch:
      return ErrorDomain::Backend;
    case Errc::InvalidConfig:
    case Errc::UnsupportedCategory:
    case Errc::UnsupportedRelation:
      return ErrorDomain::Usage;
    default:
      return ErrorDomain::Data;
  }
}

// 64-bit FNV-1a. Stable across platforms, used for content fingerprints.
class Fnv1a {
 public:
  Fnv1a& update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const { return to_hex(state_); }

  static std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string fingerprint(std::string_view bytes) { return Fnv1a{}.update(bytes).hex(); }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and a label path; used so that
/// random draws do not depend on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
  return splitmix64(parent ^ Fnv1a{}.update(label).digest());
}

// std::uniform_int_distribution and std::shuffle are implementation-defined;
// these helpers only rely on the engine's raw output, which the standard pins.
using Rng = std::mt19937_64;

inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - (Rng::max() % n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

template <typename T>
void portable_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

inline bool has_whitespace(std::string_view s) {
  for (char c : s)
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') return true;
  return false;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size()))
    ++n;
  return n;
}

/// Fixed-precision decimal rendering for CSV output.
inline std::string fmt_double(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace sta

#endif  // STA_PROBE_COMMON_HPP
