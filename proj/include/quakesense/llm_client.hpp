#pragma once

// Chat-completion client, offline attenuation mock, response parsing and the
// bounded-concurrency batch runner used by the simulate step.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "quakesense/fusion.hpp"
#include "quakesense/mmi.hpp"
#include "quakesense/prompt.hpp"

namespace quakesense {

struct RetryPolicy {
  int max_attempts = 4;
  int base_backoff_ms = 500;
};

struct ModelConfig {
  std::string model_id = "mock-attenuation";
  std::string endpoint = "mock://attenuation";
  std::string api_key_env;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  int max_in_flight = 4;
  RetryPolicy retry;
  int timeout_ms = 60000;

  // Throws Error(Config).
  void validate() const;
};

// "mock://attenuation", optionally "?garbage=0.1" to make that fraction of
// prompts (chosen by hash) answer with unparseable text.
bool is_mock_endpoint(std::string_view endpoint);

struct Prediction {
  std::string sample_id;
  std::string zone_id;
  MmiLevel mmi = MmiLevel::from_value(1);
  std::string reasoning;
  std::string raw_response;
  std::string model_id;
  std::string prompt_hash;
  double latency_ms = 0.0;
  int attempt_count = 0;
};

void to_json(nlohmann::json& j, const Prediction& p);
void from_json(const nlohmann::json& j, Prediction& p);
std::vector<Prediction> load_predictions_jsonl(const std::filesystem::path& path);

struct ParsedResponse {
  MmiLevel mmi;
  std::string reasoning;
};

// Rules:
//  - the first brace-balanced {...} that parses as a JSON object wins, with
//    code fences and surrounding prose ignored; missing commas between
//    members and trailing commas are repaired when strict parsing fails;
//  - keys are matched case-insensitively;
//  - "Reasoning" must be a non-empty string and "MMI" must be present
//    (Error(Schema) otherwise);
//  - the MMI level is the first whitespace/punctuation-delimited token made
//    only of the letters I, V and X; "around IV to V" gives IV;
//  - a number, digits-only text or a numeral outside I..XII is Error(Value).
// No JSON object at all is Error(Parse).
ParsedResponse parse_response(std::string_view raw);

// Canonical JSON answer; parse_response(serialize_response(l, r)) == (l, r).
std::string serialize_response(MmiLevel level, std::string_view reasoning);

// clamp(1, 12, round(1.5 M - 3 log10(d + 10) + 3)).
int mock_attenuation_level(double magnitude, double distance_km);

// Reads magnitude and distance back out of the rendered prompt. Throws
// Error(Mock) when either line is missing.
std::string mock_attenuation_model(const RenderedPrompt& p);

struct HttpReply {
  int status = 0;  // 0: no response (connection failure, timeout)
  std::string body;
  std::string error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpReply post(const std::string& url, const std::map<std::string, std::string>& headers,
                         const std::string& body, std::chrono::milliseconds timeout) = 0;
};

class HttplibTransport : public Transport {
 public:
  HttpReply post(const std::string& url, const std::map<std::string, std::string>& headers,
                 const std::string& body, std::chrono::milliseconds timeout) override;
};

struct CachedResponse {
  std::string raw;
  int attempt_count = 1;
  double latency_ms = 0.0;
};

// Content-addressed store: <dir>/<first two hex>/<hash>.json, written
// atomically.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<CachedResponse> get(const std::string& hash) const;
  void put(const std::string& hash, const CachedResponse& value) const;
  std::filesystem::path path_for(const std::string& hash) const;

 private:
  std::filesystem::path dir_;
};

// Counting gate that records the highest number of simultaneous holders.
class InFlightGate {
 public:
  explicit InFlightGate(std::size_t limit);
  void acquire();
  void release();
  std::size_t peak() const { return peak_.load(); }

 private:
  std::size_t limit_;
  std::size_t current_ = 0;
  std::atomic<std::size_t> peak_{0};
  std::mutex m_;
  std::condition_variable cv_;
};

struct CompletionResult {
  std::string raw;
  int attempt_count = 1;
  double latency_ms = 0.0;
  bool cache_hit = false;
};

inline constexpr std::string_view kReaskInstruction =
    "Your previous answer could not be parsed. Respond with valid JSON only, containing the fields "
    "\"Reasoning\" and \"MMI\".";

// Shareable across threads.
class LlmClient {
 public:
  // `cache` may be null. `transport` defaults to HttplibTransport.
  LlmClient(ModelConfig cfg, const ResponseCache* cache, std::shared_ptr<Transport> transport = nullptr,
            std::uint64_t jitter_seed = 0x5eed);

  const ModelConfig& config() const { return cfg_; }

  // Throws Error(Transport) once retries are exhausted or on a non-retryable
  // HTTP status, Error(Config) when the API key variable is unset.
  CompletionResult complete(const RenderedPrompt& p);
  // Follow-up turn asking for valid JSON after `previous_raw` failed to parse.
  CompletionResult complete_reask(const RenderedPrompt& p, const std::string& previous_raw);

  std::size_t peak_in_flight() const { return gate_.peak(); }
  std::size_t network_calls() const { return network_calls_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }

  // Request body for the chat-completion protocol; exposed for tests.
  nlohmann::json request_body(const RenderedPrompt& p, const std::string* previous_raw) const;

 private:
  CompletionResult run(const RenderedPrompt& p, const std::string& cache_key, const std::string* previous_raw);
  CompletionResult call_endpoint(const RenderedPrompt& p, const std::string* previous_raw);
  int backoff_ms(int attempt);

  ModelConfig cfg_;
  const ResponseCache* cache_;
  std::shared_ptr<Transport> transport_;
  bool mock_;
  double garbage_fraction_ = 0.0;
  InFlightGate gate_;
  std::atomic<std::size_t> network_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
};

struct BatchResult {
  std::vector<Prediction> predictions;  // sorted by (zone_id, sample_id)
  std::vector<Rejection> failures;      // sorted by (zone_id, sample_id)
  bool rag_capped = false;
};

// Renders each prompt lazily inside the worker, calls the model with at most
// max_in_flight requests outstanding and parses the answer, re-asking once on
// a parse failure. Per-sample parse or render problems become failures;
// transport errors abort the batch.
BatchResult run_batch(std::span<const SampleFeatures> samples, const PromptSpec& spec,
                      const std::vector<BankEntry>* bank, LlmClient& client);

}  // namespace quakesense
