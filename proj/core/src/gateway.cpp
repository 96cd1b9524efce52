#include "fairscreen/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fairscreen/digest.hpp"
#include "fairscreen/error.hpp"

namespace fairscreen {

using Json = nlohmann::json;

std::string exchange_key(const ChatExchange& exchange) {
  // nlohmann::json objects serialize with sorted keys.
  const Json canonical{{"kind", "chat"},
                       {"system", exchange.system_text},
                       {"user", exchange.user_text},
                       {"temperature", exchange.temperature},
                       {"max_output_tokens", exchange.max_output_tokens}};
  return sha256_hex(canonical.dump());
}

std::string_view to_string(GatewayMode mode) {
  switch (mode) {
    case GatewayMode::kLive: return "live";
    case GatewayMode::kRecord: return "record";
    case GatewayMode::kReplay: return "replay";
  }
  return "replay";
}

GatewayMode gateway_mode_from_string(std::string_view name) {
  if (name == "live") return GatewayMode::kLive;
  if (name == "record") return GatewayMode::kRecord;
  if (name == "replay") return GatewayMode::kReplay;
  throw ConfigError("unknown gateway mode \"" + std::string(name) + "\"");
}

Provider provider_from_string(std::string_view name) {
  if (name == "openai") return Provider::kOpenAI;
  if (name == "azure") return Provider::kAzure;
  throw ConfigError("unknown provider \"" + std::string(name) + "\"");
}

namespace {

class HttplibTransport : public Transport {
 public:
  HttpResponse post(const HttpRequest& request) override {
    // scheme://host[:port]/path?query
    const auto scheme_end = request.url.find("://");
    if (scheme_end == std::string::npos) return {0, {}, "malformed URL " + request.url};
    const auto path_start = request.url.find('/', scheme_end + 3);
    const std::string origin = request.url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : request.url.substr(path_start);

    httplib::Client client(origin);
    client.set_connection_timeout(10);
    client.set_read_timeout(120);
    httplib::Headers headers;
    for (const auto& [k, v] : request.headers) headers.emplace(k, v);
    auto res = client.Post(path, headers, request.body, "application/json");
    if (!res) return {0, {}, httplib::to_string(res.error())};
    return {res->status, res->body, {}};
  }
};

bool retryable(const HttpResponse& r) {
  if (!r.transport_error.empty()) return true;
  return r.status == 408 || r.status == 429 || r.status >= 500;
}

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::unique_ptr<Transport> make_http_transport() { return std::make_unique<HttplibTransport>(); }

TranscriptStore::TranscriptStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  if (!in) throw GatewayError("cannot read transcript " + path_.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = Json::parse(line);
      entries_.emplace(rec.at("key").get<std::string>(), rec.at("response").get<std::string>());
    } catch (const Json::exception& e) {
      throw GatewayError(path_.string() + ":" + std::to_string(line_no) + ": malformed transcript record (" +
                         e.what() + ")");
    }
  }
}

std::optional<std::string> TranscriptStore::lookup(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

bool TranscriptStore::append(const std::string& key, const std::string& request_digest,
                             const std::string& response) {
  std::lock_guard lock(mu_);
  if (!entries_.emplace(key, response).second) return false;
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw GatewayError("cannot append to transcript " + path_.string());
    out << Json{{"key", key}, {"request_digest", request_digest}, {"response", response}}.dump() << '\n';
  }
  return true;
}

std::size_t TranscriptStore::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

Gateway::Gateway(GatewayConfig config, std::unique_ptr<Transport> transport)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      store_(config_.mode == GatewayMode::kLive ? std::filesystem::path{} : config_.transcript),
      in_flight_(std::clamp(config_.max_in_flight, 1, 1024)),
      jitter_state_(config_.jitter_seed),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  if (config_.mode == GatewayMode::kReplay) {
    if (config_.transcript.empty() || !std::filesystem::exists(config_.transcript)) {
      throw GatewayError("replay mode needs an existing transcript, got \"" + config_.transcript.string() + "\"");
    }
    // Replay never talks to the network, even if a transport was supplied.
    transport_.reset();
  } else {
    if (config_.mode == GatewayMode::kRecord && config_.transcript.empty()) {
      throw GatewayError("record mode needs a transcript path");
    }
    if (!transport_) transport_ = make_http_transport();
  }
}

Gateway::~Gateway() = default;

std::string Gateway::wire_body(const ChatExchange& exchange) const {
  Json messages = Json::array();
  if (!exchange.system_text.empty()) messages.push_back({{"role", "system"}, {"content", exchange.system_text}});
  messages.push_back({{"role", "user"}, {"content", exchange.user_text}});
  return Json{{"model", config_.model},
              {"messages", messages},
              {"temperature", exchange.temperature},
              {"max_tokens", exchange.max_output_tokens}}
      .dump();
}

std::string Gateway::resolve_credential() const {
  if (config_.credential_env.empty()) throw GatewayError("no credential environment variable configured");
  const char* value = std::getenv(config_.credential_env.c_str());
  if (value == nullptr || *value == '\0') {
    throw GatewayError("credential variable " + config_.credential_env + " is not set");
  }
  return value;
}

std::string Gateway::post_with_retries(const HttpRequest& request) {
  const int attempts = std::max(1, config_.retry.max_attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    HttpResponse response;
    {
      in_flight_.acquire();
      ++network_calls_;
      try {
        response = transport_->post(request);
      } catch (...) {
        in_flight_.release();
        throw;
      }
      in_flight_.release();
    }
    if (response.transport_error.empty() && response.status >= 200 && response.status < 300) {
      return response.body;
    }
    last_error = response.transport_error.empty()
                     ? "HTTP " + std::to_string(response.status) + ": " + response.body.substr(0, 200)
                     : response.transport_error;
    if (!retryable(response) || attempt == attempts) break;

    // Full jitter: uniform in [0, min(cap, base * multiplier^(attempt-1))].
    const double ceiling = std::min<double>(
        static_cast<double>(config_.retry.max_backoff.count()),
        static_cast<double>(config_.retry.base_backoff.count()) * std::pow(config_.retry.multiplier, attempt - 1));
    double fraction;
    {
      std::lock_guard lock(jitter_mu_);
      fraction = static_cast<double>(splitmix(jitter_state_) >> 11) * 0x1.0p-53;
    }
    sleeper_(std::chrono::milliseconds(static_cast<long long>(ceiling * fraction)));
  }
  throw GatewayError("request failed after " + std::to_string(attempts) + " attempt(s): " + last_error);
}

std::string Gateway::cached_call(const std::string& key, const std::string& request_digest,
                                 const std::function<std::string()>& live_call) {
  switch (config_.mode) {
    case GatewayMode::kReplay: {
      if (auto hit = store_.lookup(key)) return *hit;
      throw ReplayMissError(key);
    }
    case GatewayMode::kRecord: {
      if (auto hit = store_.lookup(key)) return *hit;
      auto response = live_call();
      if (!store_.append(key, request_digest, response)) return *store_.lookup(key);
      return response;
    }
    case GatewayMode::kLive:
      return live_call();
  }
  throw GatewayError("unreachable gateway mode");
}

std::string Gateway::complete(const ChatExchange& exchange) {
  const std::string body = wire_body(exchange);
  return cached_call(exchange_key(exchange), sha256_hex(body), [&] {
    HttpRequest request{config_.endpoint, {}, body};
    const std::string credential = resolve_credential();
    if (config_.provider == Provider::kAzure) {
      request.headers.emplace_back("api-key", credential);
    } else {
      request.headers.emplace_back("Authorization", "Bearer " + credential);
    }
    const std::string raw = post_with_retries(request);
    try {
      const auto parsed = Json::parse(raw);
      return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const Json::exception& e) {
      throw GatewayError(std::string("unexpected chat-completion response: ") + e.what());
    }
  });
}

std::vector<double> Gateway::embed(std::string_view model, std::string_view text) {
  const Json canonical{{"kind", "embedding"}, {"model", model}, {"input", text}};
  const std::string key = sha256_hex(canonical.dump());
  const std::string body = Json{{"model", model}, {"input", text}}.dump();
  const std::string stored = cached_call(key, sha256_hex(body), [&] {
    if (config_.embeddings_endpoint.empty()) throw GatewayError("no embeddings endpoint configured");
    HttpRequest request{config_.embeddings_endpoint, {}, body};
    const std::string credential = resolve_credential();
    if (config_.provider == Provider::kAzure) {
      request.headers.emplace_back("api-key", credential);
    } else {
      request.headers.emplace_back("Authorization", "Bearer " + credential);
    }
    const std::string raw = post_with_retries(request);
    try {
      return Json::parse(raw).at("data").at(0).at("embedding").dump();
    } catch (const Json::exception& e) {
      throw GatewayError(std::string("unexpected embeddings response: ") + e.what());
    }
  });
  try {
    return Json::parse(stored).get<std::vector<double>>();
  } catch (const Json::exception& e) {
    throw GatewayError(std::string("stored embedding is not a numeric array: ") + e.what());
  }
}

}  // namespace fairscreen
