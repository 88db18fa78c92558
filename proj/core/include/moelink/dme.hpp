// Copyright 2026 The moelink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MOELINK_DME_HPP_
#define MOELINK_DME_HPP_

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "moelink/data.hpp"

// Description-aware mention enhancement: look up same-name knowledge-base
// entries, let a language model pick the one that fits the context, and
// append its description to the mention context.
namespace moelink::dme {

struct DescriptionCandidate {
  std::string qid;
  std::string description;  // may be empty

  bool operator==(const DescriptionCandidate&) const = default;
};

class KbClient {
 public:
  virtual ~KbClient() = default;
  // Entries whose label equals `label`, in KB order. Transport failures
  // throw RetrievalError.
  virtual std::vector<DescriptionCandidate> Lookup(
      const std::string& label) const = 0;
};

// Offline KB backed by a newline-delimited {"label","qid","description"}
// file. Never fails on lookup.
class FixtureKb : public KbClient {
 public:
  FixtureKb() = default;
  void Add(const std::string& label, DescriptionCandidate candidate);
  static FixtureKb Load(const std::string& path);

  std::vector<DescriptionCandidate> Lookup(
      const std::string& label) const override;
  std::size_t size() const { return count_; }

 private:
  std::map<std::string, std::vector<DescriptionCandidate>> by_label_;
  std::size_t count_ = 0;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual const std::string& backend_id() const = 0;
  // Throws TransportError on retryable failures.
  virtual std::string Complete(const std::string& prompt) = 0;
};

// Deterministic stand-in for a language model. By default the reply is a
// pure function of (prompt, seed): it counts the numbered candidate lines
// and answers with one of them. A scripted reply overrides that.
class MockBackend : public LlmBackend {
 public:
  explicit MockBackend(std::uint64_t seed = 0);

  const std::string& backend_id() const override { return id_; }
  std::string Complete(const std::string& prompt) override;

  void SetScriptedReply(std::optional<std::string> reply);
  // The next n calls throw TransportError.
  void FailNextCalls(int n) { pending_failures_ = n; }
  int calls() const { return calls_; }

 private:
  std::uint64_t seed_;
  std::string id_;
  std::optional<std::string> scripted_;
  std::mutex mu_;
  std::atomic<int> calls_{0};
  std::atomic<int> pending_failures_{0};
};

// OpenAI-compatible chat-completions endpoint over plain HTTP, e.g. a
// locally hosted model server.
class HttpBackend : public LlmBackend {
 public:
  HttpBackend(std::string endpoint, std::string model, std::uint64_t seed,
              std::chrono::seconds timeout = std::chrono::seconds(60));

  const std::string& backend_id() const override { return id_; }
  std::string Complete(const std::string& prompt) override;

 private:
  std::string host_;
  std::string path_;
  std::string model_;
  std::uint64_t seed_;
  std::chrono::seconds timeout_;
  std::string id_;
};

struct CandidateSelection {
  int chosen_index = 0;
  DescriptionCandidate chosen;
  std::string backend_id;
  bool fallback_used = false;

  bool operator==(const CandidateSelection&) const = default;
};

// Stable hex digest of a context string (fnv1a64).
std::string ContextHash(const std::string& context);

struct CacheKey {
  std::string mention_word;
  std::string context_hash;
  std::string backend_id;

  auto operator<=>(const CacheKey&) const = default;
};

// Thread-safe selection cache. Concurrent requests for the same key are
// coalesced so each distinct key is computed once.
class EnhancementCache {
 public:
  using Compute = std::function<CandidateSelection()>;

  std::optional<CandidateSelection> Get(const CacheKey& key) const;
  void Put(const CacheKey& key, const CandidateSelection& value);
  // Returns the cached value or runs `compute` exactly once per key.
  // Exceptions from `compute` propagate and leave the key uncached.
  CandidateSelection GetOrCompute(const CacheKey& key, const Compute& compute,
                                  bool* hit = nullptr);

  std::size_t size() const;
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  void ResetCounters() { hits_ = 0; misses_ = 0; }

  // Cache file: one {"key":[word,hash,backend],"chosen_index","qid",
  // "description","fallback"} record per line, keys in sorted order.
  void Load(const std::string& path);
  void Save(const std::string& path) const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<CacheKey, CandidateSelection> entries_;
  std::map<CacheKey, int> in_flight_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

// Numbered "index. qid: description" lines followed by a single-index
// answer instruction. Throws ArgumentError when candidates is empty.
std::string BuildRankingPrompt(const std::string& mention_word,
                               const std::string& context,
                               const std::vector<DescriptionCandidate>& candidates);

// First run of decimal digits in `reply`, if any.
std::optional<long long> ParseFirstInteger(const std::string& reply);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{200};
};

CandidateSelection RankDescriptions(
    const std::string& mention_word, const std::string& context,
    const std::vector<DescriptionCandidate>& candidates, LlmBackend& backend,
    EnhancementCache& cache, const RetryPolicy& retry = RetryPolicy(),
    bool* cache_hit = nullptr);

// context + " " + separator + " " + description. Rejects records that
// already carry an enhanced context.
MentionRecord EnhanceMention(const MentionRecord& record,
                             const CandidateSelection& selection,
                             const std::string& separator = "[SEP]");

struct EnhanceOptions {
  std::string separator = "[SEP]";
  int max_inflight = 4;
  double max_error_fraction = 0.0;
  RetryPolicy retry;
};

struct EnhancementReport {
  std::size_t total = 0;
  std::size_t enhanced = 0;
  std::size_t no_candidates = 0;
  std::size_t fallbacks = 0;
  std::size_t cache_hits = 0;
  std::size_t errors = 0;
  std::vector<std::string> error_messages;

  nlohmann::json ToJson() const;
};

// Enhances every mention; zero-candidate mentions keep their context
// unchanged. Failed records stay unenhanced and are reported; the call
// throws RankingError only when the error fraction exceeds the limit.
DatasetSplit EnhanceSplit(const DatasetSplit& split, const KbClient& kb,
                          LlmBackend& backend, EnhancementCache& cache,
                          const EnhanceOptions& options,
                          EnhancementReport* report = nullptr);

}  // namespace moelink::dme

#endif  // MOELINK_DME_HPP_
