#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "fairscreen/verdict.hpp"

namespace fairscreen {

// One chat-completion request. Classification calls always run at
// temperature 0.
struct ChatExchange {
  std::string system_text;
  std::string user_text;
  double temperature = 0.0;
  int max_output_tokens = 16;
};

// Transcript key: SHA-256 over the canonical serialization of the whole
// exchange, so any edit to the prompt text or parameters misses the cache.
std::string exchange_key(const ChatExchange& exchange);

enum class GatewayMode { kLive, kRecord, kReplay };
std::string_view to_string(GatewayMode mode);
GatewayMode gateway_mode_from_string(std::string_view name);

enum class Provider { kOpenAI, kAzure };
Provider provider_from_string(std::string_view name);

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_backoff{1000};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{60000};
};

struct GatewayConfig {
  // Full chat-completions URL.
  std::string endpoint;
  // Full embeddings URL; only needed by the remote embedder.
  std::string embeddings_endpoint;
  std::string model;
  Provider provider = Provider::kOpenAI;
  // Name of the environment variable holding the API key.
  std::string credential_env = "OPENAI_API_KEY";
  RetryPolicy retry;
  GatewayMode mode = GatewayMode::kReplay;
  std::filesystem::path transcript;
  int max_in_flight = 4;
  std::uint64_t jitter_seed = 0;
};

struct HttpResponse {
  int status = 0;
  std::string body;
  // Empty on success; set when the request never produced a response.
  std::string transport_error;
};

struct HttpRequest {
  std::string url;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

// cpp-httplib backed transport.
std::unique_ptr<Transport> make_http_transport();

// Line-delimited (key, request_digest, response) records. Writes are
// serialized; lookups are safe from any thread.
class TranscriptStore {
 public:
  TranscriptStore() = default;
  explicit TranscriptStore(std::filesystem::path path);

  std::optional<std::string> lookup(const std::string& key) const;
  // Returns false (and writes nothing) if the key is already present.
  bool append(const std::string& key, const std::string& request_digest,
              const std::string& response);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> entries_;
};

class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  // Transport may be null in replay mode. In live/record mode without a
  // transport, an HTTP transport is created.
  Gateway(GatewayConfig config, std::unique_ptr<Transport> transport = nullptr);
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  std::string complete(const ChatExchange& exchange);

  // Embedding vector for one text through the provider's embeddings route.
  // Subject to the same record/replay rules as complete().
  std::vector<double> embed(std::string_view model, std::string_view text);

  const GatewayConfig& config() const noexcept { return config_; }
  std::size_t network_calls() const noexcept { return network_calls_; }

  // Tests swap in a no-op to avoid real backoff delays.
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

  // Serialized provider request body; exposed for the request digest and tests.
  std::string wire_body(const ChatExchange& exchange) const;

 private:
  std::string resolve_credential() const;
  std::string post_with_retries(const HttpRequest& request);
  std::string cached_call(const std::string& key, const std::string& request_digest,
                          const std::function<std::string()>& live_call);

  GatewayConfig config_;
  std::unique_ptr<Transport> transport_;
  TranscriptStore store_;
  std::counting_semaphore<1024> in_flight_;
  std::mutex jitter_mu_;
  std::uint64_t jitter_state_;
  std::atomic<std::size_t> network_calls_{0};
  Sleeper sleeper_;
};

}  // namespace fairscreen
