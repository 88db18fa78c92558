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

#include "moelink/dme.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "moelink/error.hpp"
#include "moelink/random.hpp"

namespace moelink::dme {

namespace {

using Json = nlohmann::json;

std::string OneLine(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

// Number of lines of the form "<digits>. ..." in a prompt.
int CountNumberedLines(const std::string& prompt) {
  int count = 0;
  std::istringstream in(prompt);
  std::string line;
  while (std::getline(in, line)) {
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) {
      ++i;
    }
    if (i > 0 && i + 1 < line.size() && line[i] == '.' && line[i + 1] == ' ') {
      ++count;
    }
  }
  return count;
}

}  // namespace

// ---- KB --------------------------------------------------------------------

void FixtureKb::Add(const std::string& label, DescriptionCandidate candidate) {
  if (candidate.qid.empty()) {
    throw ArgumentError("KB entry for '" + label + "' has an empty qid");
  }
  by_label_[label].push_back(std::move(candidate));
  ++count_;
}

FixtureKb FixtureKb::Load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open KB fixture " + path);
  FixtureKb kb;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json doc;
    try {
      doc = Json::parse(line);
      kb.Add(doc.at("label").get<std::string>(),
             {doc.at("qid").get<std::string>(),
              doc.value("description", std::string())});
    } catch (const Json::exception& e) {
      throw ParseError(path + ": line " + std::to_string(line_no) + ": " +
                       e.what());
    } catch (const ArgumentError& e) {
      throw ParseError(path + ": line " + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return kb;
}

std::vector<DescriptionCandidate> FixtureKb::Lookup(
    const std::string& label) const {
  auto it = by_label_.find(label);
  if (it == by_label_.end()) return {};
  return it->second;
}

// ---- Backends --------------------------------------------------------------

MockBackend::MockBackend(std::uint64_t seed)
    : seed_(seed), id_("mock:seed=" + std::to_string(seed)) {}

void MockBackend::SetScriptedReply(std::optional<std::string> reply) {
  std::lock_guard<std::mutex> lock(mu_);
  scripted_ = std::move(reply);
}

std::string MockBackend::Complete(const std::string& prompt) {
  ++calls_;
  int pending = pending_failures_.load();
  while (pending > 0) {
    if (pending_failures_.compare_exchange_weak(pending, pending - 1)) {
      throw TransportError("mock backend: injected transport failure");
    }
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (scripted_) return *scripted_;
  }
  const int n = CountNumberedLines(prompt);
  if (n == 0) return "0";
  const std::uint64_t h = MixSeed(Fnv1a64(prompt), seed_);
  return "Answer: " + std::to_string(h % static_cast<std::uint64_t>(n) + 1);
}

HttpBackend::HttpBackend(std::string endpoint, std::string model,
                         std::uint64_t seed, std::chrono::seconds timeout)
    : model_(std::move(model)), seed_(seed), timeout_(timeout) {
  const std::string scheme = "http://";
  if (endpoint.rfind(scheme, 0) != 0) {
    throw ArgumentError("http backend: endpoint must start with http://");
  }
  const std::size_t slash = endpoint.find('/', scheme.size());
  host_ = endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/v1/chat/completions"
                                     : endpoint.substr(slash);
  id_ = "http:" + model_ + "@" + endpoint;
}

std::string HttpBackend::Complete(const std::string& prompt) {
  httplib::Client client(host_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  Json body = {{"model", model_},
               {"messages", Json::array({{{"role", "user"}, {"content", prompt}}})},
               {"temperature", 0},
               {"seed", seed_}};
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) {
    throw TransportError("http backend: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw TransportError("http backend: status " + std::to_string(res->status));
  }
  try {
    Json doc = Json::parse(res->body);
    if (doc.contains("choices")) {
      const Json& choice = doc.at("choices").at(0);
      if (choice.contains("message")) {
        return choice.at("message").at("content").get<std::string>();
      }
      return choice.at("text").get<std::string>();
    }
    return doc.at("content").get<std::string>();
  } catch (const Json::exception& e) {
    // An unreadable body is a reply we cannot use, not a transport fault.
    return std::string();
  }
}

// ---- Cache -----------------------------------------------------------------

std::string ContextHash(const std::string& context) {
  return HexDigest(Fnv1a64(context));
}

std::optional<CandidateSelection> EnhancementCache::Get(
    const CacheKey& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EnhancementCache::Put(const CacheKey& key,
                           const CandidateSelection& value) {
  std::lock_guard<std::mutex> lock(mu_);
  entries_[key] = value;
}

CandidateSelection EnhancementCache::GetOrCompute(const CacheKey& key,
                                                  const Compute& compute,
                                                  bool* hit) {
  std::unique_lock<std::mutex> lock(mu_);
  for (;;) {
    if (auto it = entries_.find(key); it != entries_.end()) {
      ++hits_;
      if (hit) *hit = true;
      return it->second;
    }
    if (!in_flight_.count(key)) break;
    cv_.wait(lock);
  }
  in_flight_[key] = 1;
  ++misses_;
  if (hit) *hit = false;
  lock.unlock();
  CandidateSelection value;
  try {
    value = compute();
  } catch (...) {
    lock.lock();
    in_flight_.erase(key);
    cv_.notify_all();
    throw;
  }
  lock.lock();
  entries_[key] = value;
  in_flight_.erase(key);
  cv_.notify_all();
  return value;
}

std::size_t EnhancementCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return entries_.size();
}

void EnhancementCache::Load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open cache " + path);
  std::map<CacheKey, CandidateSelection> loaded;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      Json doc = Json::parse(line);
      const Json& k = doc.at("key");
      CacheKey key{k.at(0).get<std::string>(), k.at(1).get<std::string>(),
                   k.at(2).get<std::string>()};
      CandidateSelection s;
      s.chosen_index = doc.at("chosen_index").get<int>();
      s.chosen.qid = doc.at("qid").get<std::string>();
      s.chosen.description = doc.at("description").get<std::string>();
      s.fallback_used = doc.at("fallback").get<bool>();
      s.backend_id = key.backend_id;
      loaded[key] = s;
    } catch (const Json::exception& e) {
      throw ParseError(path + ": line " + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  std::lock_guard<std::mutex> lock(mu_);
  for (auto& [k, v] : loaded) entries_[k] = v;
}

void EnhancementCache::Save(const std::string& path) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write cache " + path);
  for (const auto& [k, v] : entries_) {
    nlohmann::ordered_json j;
    j["key"] = {k.mention_word, k.context_hash, k.backend_id};
    j["chosen_index"] = v.chosen_index;
    j["qid"] = v.chosen.qid;
    j["description"] = v.chosen.description;
    j["fallback"] = v.fallback_used;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for cache " + path);
}

// ---- Ranking ---------------------------------------------------------------

std::string BuildRankingPrompt(
    const std::string& mention_word, const std::string& context,
    const std::vector<DescriptionCandidate>& candidates) {
  if (candidates.empty()) {
    throw ArgumentError("ranking prompt needs at least one candidate");
  }
  std::ostringstream os;
  os << "Select the knowledge-base entry that the mention refers to.\n"
     << "Mention: " << OneLine(mention_word) << "\n"
     << "Context: " << OneLine(context) << "\n"
     << "Candidates:\n";
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    os << (i + 1) << ". " << OneLine(candidates[i].qid) << ": "
       << OneLine(candidates[i].description) << "\n";
  }
  os << "Answer with exactly one index between 1 and " << candidates.size()
     << " and nothing else.";
  return os.str();
}

std::optional<long long> ParseFirstInteger(const std::string& reply) {
  std::size_t i = 0;
  while (i < reply.size() && !std::isdigit(static_cast<unsigned char>(reply[i]))) {
    ++i;
  }
  if (i == reply.size()) return std::nullopt;
  long long value = 0;
  for (; i < reply.size() && std::isdigit(static_cast<unsigned char>(reply[i]));
       ++i) {
    if (value > 1'000'000'000LL) return std::nullopt;  // absurd index
    value = value * 10 + (reply[i] - '0');
  }
  return value;
}

CandidateSelection RankDescriptions(
    const std::string& mention_word, const std::string& context,
    const std::vector<DescriptionCandidate>& candidates, LlmBackend& backend,
    EnhancementCache& cache, const RetryPolicy& retry, bool* cache_hit) {
  if (candidates.empty()) {
    throw ArgumentError("RankDescriptions: empty candidate list");
  }
  const CacheKey key{mention_word, ContextHash(context), backend.backend_id()};
  return cache.GetOrCompute(key, [&]() {
    const std::string prompt =
        BuildRankingPrompt(mention_word, context, candidates);
    std::string reply;
    for (int attempt = 0;; ++attempt) {
      try {
        reply = backend.Complete(prompt);
        break;
      } catch (const TransportError& e) {
        if (attempt + 1 >= retry.attempts) {
          throw RankingError("backend " + backend.backend_id() + " failed after " +
                             std::to_string(retry.attempts) +
                             " attempts: " + e.what());
        }
        std::this_thread::sleep_for(retry.base_delay * (1 << attempt));
      }
    }
    CandidateSelection s;
    s.backend_id = backend.backend_id();
    const auto parsed = ParseFirstInteger(reply);
    const auto n = static_cast<long long>(candidates.size());
    if (parsed && *parsed >= 1 && *parsed <= n) {
      s.chosen_index = static_cast<int>(*parsed - 1);
    } else {
      s.chosen_index = 0;
      s.fallback_used = true;
    }
    s.chosen = candidates[static_cast<std::size_t>(s.chosen_index)];
    return s;
  }, cache_hit);
}

MentionRecord EnhanceMention(const MentionRecord& record,
                             const CandidateSelection& selection,
                             const std::string& separator) {
  if (record.enhanced_context) {
    throw ArgumentError("mention '" + record.id + "' is already enhanced");
  }
  MentionRecord out = record;
  out.enhanced_context =
      record.context + " " + separator + " " + selection.chosen.description;
  return out;
}

nlohmann::json EnhancementReport::ToJson() const {
  return {{"total", total},           {"enhanced", enhanced},
          {"no_candidates", no_candidates}, {"fallbacks", fallbacks},
          {"cache_hits", cache_hits}, {"errors", errors},
          {"error_messages", error_messages}};
}

DatasetSplit EnhanceSplit(const DatasetSplit& split, const KbClient& kb,
                          LlmBackend& backend, EnhancementCache& cache,
                          const EnhanceOptions& options,
                          EnhancementReport* report) {
  const auto& in = split.mentions();
  const std::size_t n = in.size();

  enum class Outcome { kEnhanced, kNoCandidates, kError };
  struct Slot {
    MentionRecord record;
    Outcome outcome = Outcome::kError;
    bool fallback = false;
    bool hit = false;
    std::string error;
  };
  std::vector<Slot> slots(n);

  auto process = [&](std::size_t i) {
    const MentionRecord& m = in[i];
    Slot& slot = slots[i];
    try {
      if (m.enhanced_context) {
        throw ArgumentError("mention '" + m.id + "' is already enhanced");
      }
      auto candidates = kb.Lookup(m.mention_word);
      if (candidates.empty()) {
        slot.record = m;
        slot.record.enhanced_context = m.context;
        slot.outcome = Outcome::kNoCandidates;
        return;
      }
      CandidateSelection sel =
          RankDescriptions(m.mention_word, m.context, candidates, backend,
                           cache, options.retry, &slot.hit);
      slot.record = EnhanceMention(m, sel, options.separator);
      slot.fallback = sel.fallback_used;
      slot.outcome = Outcome::kEnhanced;
    } catch (const Error& e) {
      slot.record = m;
      slot.outcome = Outcome::kError;
      slot.error = m.id + ": " + e.what();
    }
  };

  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(1, options.max_inflight)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (std::size_t i = next++; i < n; i = next++) process(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  EnhancementReport r;
  r.total = n;
  std::vector<MentionRecord> out;
  out.reserve(n);
  for (auto& slot : slots) {
    switch (slot.outcome) {
      case Outcome::kEnhanced:
        ++r.enhanced;
        break;
      case Outcome::kNoCandidates:
        ++r.no_candidates;
        break;
      case Outcome::kError:
        ++r.errors;
        r.error_messages.push_back(slot.error);
        break;
    }
    if (slot.fallback) ++r.fallbacks;
    if (slot.hit) ++r.cache_hits;
    out.push_back(std::move(slot.record));
  }
  if (report) *report = r;
  if (n > 0 && static_cast<double>(r.errors) / static_cast<double>(n) >
                   options.max_error_fraction) {
    throw RankingError("enhancement failed for " + std::to_string(r.errors) +
                       " of " + std::to_string(n) + " mentions; first: " +
                       r.error_messages.front());
  }
  return DatasetSplit(split.name(), std::move(out));
}

}  // namespace moelink::dme
