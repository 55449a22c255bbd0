#include "quakesense/llm_client.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <thread>

#include <fmt/format.h>

#include "httplib.h"
#include "quakesense/error.hpp"
#include "quakesense/io.hpp"

namespace quakesense {

using nlohmann::json;
namespace fs = std::filesystem;

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (model_id.empty()) problems.emplace_back("model_id is empty");
  if (endpoint.empty()) problems.emplace_back("endpoint is empty");
  if (!(temperature >= 0.0)) problems.emplace_back("temperature must be >= 0");
  if (max_output_tokens < 1) problems.emplace_back("max_output_tokens must be >= 1");
  if (max_in_flight < 1) problems.emplace_back("max_in_flight must be >= 1");
  if (retry.max_attempts < 1) problems.emplace_back("retry.max_attempts must be >= 1");
  if (retry.base_backoff_ms < 0) problems.emplace_back("retry.base_backoff_ms must be >= 0");
  if (timeout_ms < 1) problems.emplace_back("timeout_ms must be >= 1");
  if (!is_mock_endpoint(endpoint) && api_key_env.empty()) {
    problems.emplace_back("api_key_env is required for a non-mock endpoint");
  }
  if (!problems.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw Error(ErrorKind::Config, msg);
  }
}

bool is_mock_endpoint(std::string_view endpoint) { return endpoint.starts_with("mock://"); }

// ---------------------------------------------------------------------------
// Predictions

void to_json(json& j, const Prediction& p) {
  j = {{"sample_id", p.sample_id},       {"zone_id", p.zone_id},
       {"mmi", p.mmi.roman()},           {"mmi_value", p.mmi.value()},
       {"reasoning", p.reasoning},       {"raw_response", p.raw_response},
       {"model_id", p.model_id},         {"prompt_hash", p.prompt_hash},
       {"latency_ms", p.latency_ms},     {"attempt_count", p.attempt_count}};
}

void from_json(const json& j, Prediction& p) {
  p.sample_id = j.at("sample_id").get<std::string>();
  p.zone_id = j.at("zone_id").get<std::string>();
  const auto roman = j.at("mmi").get<std::string>();
  const auto level = MmiLevel::from_roman(roman);
  if (!level) throw Error(ErrorKind::Value, fmt::format("'{}' is not an MMI level", roman));
  p.mmi = *level;
  p.reasoning = j.at("reasoning").get<std::string>();
  p.raw_response = j.value("raw_response", "");
  p.model_id = j.value("model_id", "");
  p.prompt_hash = j.value("prompt_hash", "");
  p.latency_ms = j.value("latency_ms", 0.0);
  p.attempt_count = j.value("attempt_count", 1);
}

std::vector<Prediction> load_predictions_jsonl(const fs::path& path) {
  std::vector<Prediction> out;
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    try {
      out.push_back(json::parse(line).get<Prediction>());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, fmt::format("{}: record {}: {}", path.string(), n, e.what()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Response parsing

namespace {

// Index one past the brace matching s[start] == '{', or npos.
std::size_t match_brace(std::string_view s, std::size_t start) {
  int depth = 0;
  bool in_str = false, esc = false;
  for (std::size_t i = start; i < s.size(); ++i) {
    const char c = s[i];
    if (in_str) {
      if (esc) esc = false;
      else if (c == '\\') esc = true;
      else if (c == '"') in_str = false;
      continue;
    }
    if (c == '"') in_str = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

// Inserts commas missing between members and drops trailing commas.
std::string repair_json(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 8);
  bool in_str = false, esc = false, after_value = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_str) {
      out += c;
      if (esc) esc = false;
      else if (c == '\\') esc = true;
      else if (c == '"') {
        in_str = false;
        after_value = true;
      }
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      out += c;
      continue;
    }
    switch (c) {
      case '"':
      case '{':
      case '[':
        if (after_value) out += ',';
        out += c;
        in_str = c == '"';
        after_value = false;
        break;
      case ',': {
        std::size_t k = i + 1;
        while (k < s.size() && std::isspace(static_cast<unsigned char>(s[k]))) ++k;
        if (k < s.size() && (s[k] == '}' || s[k] == ']')) break;
        out += c;
        after_value = false;
        break;
      }
      case ':':
        out += c;
        after_value = false;
        break;
      default:  // '}', ']' and literal characters
        out += c;
        after_value = true;
    }
  }
  return out;
}

std::optional<json> first_object(std::string_view raw) {
  std::vector<std::string_view> candidates;
  for (std::size_t i = raw.find('{'); i != std::string_view::npos; i = raw.find('{', i + 1)) {
    const auto end = match_brace(raw, i);
    if (end != std::string_view::npos) candidates.push_back(raw.substr(i, end - i));
  }
  for (auto c : candidates) {
    json j = json::parse(c, nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  for (auto c : candidates) {
    json j = json::parse(repair_json(c), nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  return std::nullopt;
}

const json* find_key(const json& obj, std::string_view key) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (to_lower(it.key()) == key) return &it.value();
  }
  return nullptr;
}

MmiLevel level_from_text(const std::string& text) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !std::isalnum(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && std::isalnum(static_cast<unsigned char>(text[j]))) ++j;
    const std::string_view token(text.data() + i, j - i);
    if (!token.empty() && token.find_first_not_of("IVXivx") == std::string_view::npos) {
      if (const auto level = MmiLevel::from_roman(token)) return *level;
      throw Error(ErrorKind::Value, fmt::format("'{}' is not an MMI level between I and XII", token));
    }
    i = j;
  }
  throw Error(ErrorKind::Value, fmt::format("no Roman numeral MMI level in '{}'", text));
}

}  // namespace

ParsedResponse parse_response(std::string_view raw) {
  const auto obj = first_object(raw);
  if (!obj) throw Error(ErrorKind::Parse, "response contains no JSON object");

  const json* reasoning = find_key(*obj, "reasoning");
  if (reasoning == nullptr) throw Error(ErrorKind::Schema, "response has no \"Reasoning\" field");
  if (!reasoning->is_string() || trim(reasoning->get<std::string>()).empty()) {
    throw Error(ErrorKind::Schema, "\"Reasoning\" must be a non-empty string");
  }
  const json* mmi = find_key(*obj, "mmi");
  if (mmi == nullptr) throw Error(ErrorKind::Schema, "response has no \"MMI\" field");
  if (mmi->is_number()) {
    throw Error(ErrorKind::Value, fmt::format("MMI given as number {}; a Roman numeral is required", mmi->dump()));
  }
  if (!mmi->is_string()) throw Error(ErrorKind::Schema, "\"MMI\" must be a string");
  const std::string text = mmi->get<std::string>();
  if (trim(text).empty()) throw Error(ErrorKind::Schema, "\"MMI\" is empty");
  return {level_from_text(text), reasoning->get<std::string>()};
}

std::string serialize_response(MmiLevel level, std::string_view reasoning) {
  return json{{"Reasoning", reasoning}, {"MMI", level.roman()}}.dump();
}

// ---------------------------------------------------------------------------
// Mock model

int mock_attenuation_level(double magnitude, double distance_km) {
  const double v = 1.5 * magnitude - 3.0 * std::log10(distance_km + 10.0) + 3.0;
  return static_cast<int>(std::clamp(std::round(v), 1.0, 12.0));
}

namespace {

std::optional<double> field_after(std::string_view text, std::string_view prefix, std::string_view unit) {
  const auto p = text.find(prefix);
  if (p == std::string_view::npos) return std::nullopt;
  const auto start = p + prefix.size();
  const auto end = text.find(unit, start);
  if (end == std::string_view::npos) return std::nullopt;
  return parse_double(text.substr(start, end - start));
}

double hash_fraction(const std::string& hex) {
  return static_cast<double>(std::stoull(hex.substr(0, 8), nullptr, 16)) / 4294967296.0;
}

}  // namespace

std::string mock_attenuation_model(const RenderedPrompt& p) {
  const auto m = field_after(p.user_text, "- Magnitude: ", " mw");
  const auto d = field_after(p.user_text, "- Distance from epicenter: ", " km");
  if (!m || !d) {
    throw Error(ErrorKind::Mock, "mock model could not find magnitude and distance in the prompt");
  }
  const MmiLevel level = MmiLevel::from_value(mock_attenuation_level(*m, *d));
  const std::string reasoning = fmt::format(
      "The earthquake has a magnitude of {:.1f} Mw and this location is {:.2f} km from the "
      "epicenter. Shaking attenuates with distance, so the expected intensity is MMI {}. {}",
      *m, *d, level.roman(), mmi_description(level));
  return serialize_response(level, reasoning);
}

// ---------------------------------------------------------------------------
// Transport and cache

HttpReply HttplibTransport::post(const std::string& url, const std::map<std::string, std::string>& headers,
                                 const std::string& body, std::chrono::milliseconds timeout) {
  const UrlParts parts = split_url(url);
  httplib::Client cli(parts.origin);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  const auto res = cli.Post(parts.target, h, body, "application/json");
  if (!res) return {0, {}, httplib::to_string(res.error())};
  return {res->status, res->body, {}};
}

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {}

fs::path ResponseCache::path_for(const std::string& hash) const {
  return dir_ / hash.substr(0, 2) / (hash + ".json");
}

std::optional<CachedResponse> ResponseCache::get(const std::string& hash) const {
  const fs::path p = path_for(hash);
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) return std::nullopt;
  const json j = json::parse(read_text_file(p), nullptr, false);
  // A torn or foreign file is treated as a miss and overwritten later.
  if (j.is_discarded() || !j.is_object() || !j.contains("raw")) return std::nullopt;
  return CachedResponse{j["raw"].get<std::string>(), j.value("attempt_count", 1), j.value("latency_ms", 0.0)};
}

void ResponseCache::put(const std::string& hash, const CachedResponse& value) const {
  const json j = {{"raw", value.raw}, {"attempt_count", value.attempt_count}, {"latency_ms", value.latency_ms}};
  atomic_write(path_for(hash), j.dump());
}

InFlightGate::InFlightGate(std::size_t limit) : limit_(std::max<std::size_t>(1, limit)) {}

void InFlightGate::acquire() {
  std::unique_lock lock(m_);
  cv_.wait(lock, [&] { return current_ < limit_; });
  ++current_;
  std::size_t seen = peak_.load();
  while (current_ > seen && !peak_.compare_exchange_weak(seen, current_)) {
  }
}

void InFlightGate::release() {
  {
    std::lock_guard lock(m_);
    --current_;
  }
  cv_.notify_one();
}

// ---------------------------------------------------------------------------
// Client

LlmClient::LlmClient(ModelConfig cfg, const ResponseCache* cache, std::shared_ptr<Transport> transport,
                     std::uint64_t jitter_seed)
    : cfg_(std::move(cfg)), cache_(cache), transport_(std::move(transport)),
      mock_(is_mock_endpoint(cfg_.endpoint)), gate_(static_cast<std::size_t>(std::max(1, cfg_.max_in_flight))),
      rng_(jitter_seed) {
  cfg_.validate();
  if (!transport_) transport_ = std::make_shared<HttplibTransport>();
  if (mock_) {
    const auto q = cfg_.endpoint.find("?garbage=");
    if (q != std::string::npos) {
      const auto f = parse_double(std::string_view(cfg_.endpoint).substr(q + 9));
      if (!f || *f < 0.0 || *f > 1.0) {
        throw Error(ErrorKind::Config, fmt::format("bad garbage fraction in endpoint '{}'", cfg_.endpoint));
      }
      garbage_fraction_ = *f;
    }
  }
}

json LlmClient::request_body(const RenderedPrompt& p, const std::string* previous_raw) const {
  json user_content;
  if (!p.image_bytes.empty()) {
    const bool png = p.image_bytes.size() > 1 && p.image_bytes[0] == 0x89;
    user_content = json::array(
        {{{"type", "text"}, {"text", p.user_text}},
         {{"type", "image_url"},
          {"image_url",
           {{"url", fmt::format("data:image/{};base64,{}", png ? "png" : "jpeg", base64_encode(p.image_bytes))}}}}});
  } else {
    user_content = p.user_text;
  }
  json messages = json::array({{{"role", "system"}, {"content", p.system_text}},
                               {{"role", "user"}, {"content", user_content}}});
  if (previous_raw != nullptr) {
    messages.push_back({{"role", "assistant"}, {"content", *previous_raw}});
    messages.push_back({{"role", "user"}, {"content", kReaskInstruction}});
  }
  return {{"model", cfg_.model_id},
          {"temperature", cfg_.temperature},
          {"max_tokens", cfg_.max_output_tokens},
          {"messages", messages}};
}

int LlmClient::backoff_ms(int attempt) {
  // Full jitter: uniform in [0, base * 2^(attempt-1)].
  const long cap = static_cast<long>(cfg_.retry.base_backoff_ms) << std::min(attempt - 1, 16);
  std::lock_guard lock(rng_mutex_);
  return static_cast<int>(std::uniform_int_distribution<long>(0, cap)(rng_));
}

CompletionResult LlmClient::call_endpoint(const RenderedPrompt& p, const std::string* previous_raw) {
  if (mock_) {
    network_calls_.fetch_add(1);
    gate_.acquire();
    std::string raw;
    try {
      if (garbage_fraction_ > 0.0 && hash_fraction(p.prompt_hash) < garbage_fraction_) {
        raw = "I am unable to give a structured answer for this location.";
      } else {
        raw = mock_attenuation_model(p);
      }
    } catch (...) {
      gate_.release();
      throw;
    }
    gate_.release();
    return {raw, 1, 0.0, false};
  }

  const char* key = std::getenv(cfg_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw Error(ErrorKind::Config, fmt::format("environment variable {} is not set", cfg_.api_key_env));
  }
  const std::map<std::string, std::string> headers = {{"Authorization", fmt::format("Bearer {}", key)}};
  const std::string body = request_body(p, previous_raw).dump();

  const auto t0 = std::chrono::steady_clock::now();
  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
    network_calls_.fetch_add(1);
    gate_.acquire();
    HttpReply reply;
    try {
      reply = transport_->post(cfg_.endpoint, headers, body, std::chrono::milliseconds(cfg_.timeout_ms));
    } catch (...) {
      gate_.release();
      throw;
    }
    gate_.release();

    if (reply.status >= 200 && reply.status < 300) {
      const json j = json::parse(reply.body, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorKind::Transport, "endpoint returned a non-JSON body");
      try {
        const auto& content = j.at("choices").at(0).at("message").at("content");
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        return {content.get<std::string>(), attempt, ms, false};
      } catch (const json::exception& e) {
        throw Error(ErrorKind::Transport, fmt::format("unexpected completion payload: {}", e.what()));
      }
    }
    const bool retryable = reply.status == 0 || reply.status == 429 || reply.status >= 500;
    last_error = reply.status == 0 ? reply.error
                                   : fmt::format("HTTP {}: {}", reply.status, reply.body.substr(0, 200));
    if (!retryable) throw Error(ErrorKind::Transport, fmt::format("request rejected: {}", last_error));
    if (attempt < cfg_.retry.max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms(attempt)));
    }
  }
  throw Error(ErrorKind::Transport,
              fmt::format("giving up after {} attempts: {}", cfg_.retry.max_attempts, last_error));
}

CompletionResult LlmClient::run(const RenderedPrompt& p, const std::string& cache_key,
                                const std::string* previous_raw) {
  if (cache_ != nullptr) {
    if (auto hit = cache_->get(cache_key)) {
      cache_hits_.fetch_add(1);
      return {std::move(hit->raw), hit->attempt_count, hit->latency_ms, true};
    }
  }
  CompletionResult r = call_endpoint(p, previous_raw);
  if (cache_ != nullptr) cache_->put(cache_key, {r.raw, r.attempt_count, r.latency_ms});
  return r;
}

CompletionResult LlmClient::complete(const RenderedPrompt& p) { return run(p, p.prompt_hash, nullptr); }

CompletionResult LlmClient::complete_reask(const RenderedPrompt& p, const std::string& previous_raw) {
  return run(p, sha256_fields({p.prompt_hash, "reask"}), &previous_raw);
}

// ---------------------------------------------------------------------------
// Batch

namespace {

std::string failure_reason(ErrorKind k) {
  switch (k) {
    case ErrorKind::Parse: return "parse_error";
    case ErrorKind::Schema: return "schema_error";
    default: return "value_error";
  }
}

bool is_response_error(ErrorKind k) {
  return k == ErrorKind::Parse || k == ErrorKind::Schema || k == ErrorKind::Value;
}

}  // namespace

BatchResult run_batch(std::span<const SampleFeatures> samples, const PromptSpec& spec,
                      const std::vector<BankEntry>* bank, LlmClient& client) {
  if (spec.rag_k > 0 && (bank == nullptr || bank->empty())) {
    throw Error(ErrorKind::Config, "rag_k > 0 requires a non-empty demonstration bank");
  }
  const std::size_t n = samples.size();
  std::vector<std::optional<Prediction>> preds(n);
  std::vector<std::optional<Rejection>> fails(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::atomic<bool> capped{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const std::string& model_id = client.config().model_id;

  auto process = [&](std::size_t i) {
    const SampleFeatures& x = samples[i];
    RenderedPrompt p;
    try {
      p = render_prompt(x, spec, model_id, bank);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Config) throw;
      fails[i] = Rejection{x.sample_id, x.zone_id, "render_error", e.what()};
      return;
    }
    if (p.rag_capped) capped = true;

    const CompletionResult first = client.complete(p);
    auto emit = [&](const ParsedResponse& parsed, const std::string& raw, int attempts, double latency) {
      preds[i] = Prediction{x.sample_id, x.zone_id, parsed.mmi,  parsed.reasoning, raw,
                            model_id,    p.prompt_hash, latency, attempts};
    };
    try {
      emit(parse_response(first.raw), first.raw, first.attempt_count, first.latency_ms);
      return;
    } catch (const Error& e) {
      if (!is_response_error(e.kind())) throw;
    }
    const CompletionResult second = client.complete_reask(p, first.raw);
    try {
      emit(parse_response(second.raw), second.raw, first.attempt_count + second.attempt_count,
           first.latency_ms + second.latency_ms);
    } catch (const Error& e) {
      if (!is_response_error(e.kind())) throw;
      fails[i] = Rejection{x.sample_id, x.zone_id, failure_reason(e.kind()),
                           fmt::format("after re-ask: {}", e.what())};
    }
  };

  auto worker = [&] {
    while (!abort.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        process(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        abort = true;
      }
    }
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(client.config().max_in_flight),
                                                    std::max<std::size_t>(n, 1));
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);

  BatchResult out;
  out.rag_capped = capped.load();
  for (std::size_t i = 0; i < n; ++i) {
    if (preds[i]) out.predictions.push_back(std::move(*preds[i]));
    if (fails[i]) out.failures.push_back(std::move(*fails[i]));
  }
  auto by_key = [](const auto& a, const auto& b) {
    return std::tie(a.zone_id, a.sample_id) < std::tie(b.zone_id, b.sample_id);
  };
  std::sort(out.predictions.begin(), out.predictions.end(), by_key);
  std::sort(out.failures.begin(), out.failures.end(), by_key);
  return out;
}

}  // namespace quakesense
