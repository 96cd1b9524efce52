#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include "fairscreen/error.hpp"
#include "fairscreen/gateway.hpp"
#include "fairscreen/topics.hpp"
#include "support.hpp"

namespace fairscreen {
namespace {

using testing::FlakyTransport;
using testing::ScriptedTransport;
using testing::TempDir;

ScriptedTransport::Script echo_script() {
  return [](const testing::ChatRequest& r) -> std::optional<std::string> { return "echo:" + r.user; };
}

GatewayConfig config_for(GatewayMode mode, const std::filesystem::path& transcript) {
  testing::ensure_test_credential();
  GatewayConfig c;
  c.endpoint = "https://example.invalid/v1/chat/completions";
  c.embeddings_endpoint = "https://example.invalid/v1/embeddings";
  c.model = "test-model";
  c.credential_env = testing::kTestCredentialEnv;
  c.mode = mode;
  c.transcript = transcript;
  c.retry.base_backoff = std::chrono::milliseconds(0);
  return c;
}

ChatExchange exchange(std::string user) {
  ChatExchange e;
  e.user_text = std::move(user);
  return e;
}

TEST(ExchangeKey, SensitiveToEveryField) {
  const auto base = exchange("hello");
  const auto k = exchange_key(base);
  EXPECT_EQ(k, exchange_key(exchange("hello")));
  EXPECT_EQ(k.size(), 64U);
  auto e = base;
  e.user_text = "hello ";
  EXPECT_NE(exchange_key(e), k);
  e = base;
  e.system_text = "s";
  EXPECT_NE(exchange_key(e), k);
  e = base;
  e.temperature = 0.5;
  EXPECT_NE(exchange_key(e), k);
  e = base;
  e.max_output_tokens = 17;
  EXPECT_NE(exchange_key(e), k);
}

TEST(Gateway, RecordThenReplayWithoutNetwork) {
  const TempDir dir;
  const auto path = dir / "t.jsonl";
  {
    auto t = std::make_unique<ScriptedTransport>(echo_script());
    auto* raw = t.get();
    Gateway g(config_for(GatewayMode::kRecord, path), std::move(t));
    EXPECT_EQ(g.complete(exchange("a")), "echo:a");
    EXPECT_EQ(g.complete(exchange("b")), "echo:b");
    EXPECT_EQ(g.complete(exchange("a")), "echo:a");
    EXPECT_EQ(raw->calls(), 2U);
    EXPECT_EQ(g.network_calls(), 2U);
  }
  auto t = std::make_unique<ScriptedTransport>(echo_script());
  auto* raw = t.get();
  Gateway g(config_for(GatewayMode::kReplay, path), std::move(t));
  EXPECT_EQ(g.complete(exchange("b")), "echo:b");
  EXPECT_EQ(g.complete(exchange("a")), "echo:a");
  EXPECT_EQ(g.network_calls(), 0U);
  (void)raw;
}

TEST(Gateway, ReplayMissNamesTheKey) {
  const TempDir dir;
  const auto path = dir / "t.jsonl";
  testing::write_text(path, "");
  Gateway g(config_for(GatewayMode::kReplay, path));
  const auto e = exchange("never recorded");
  try {
    g.complete(e);
    FAIL() << "expected a replay miss";
  } catch (const ReplayMissError& err) {
    EXPECT_EQ(err.key(), exchange_key(e));
    EXPECT_NE(std::string(err.what()).find(exchange_key(e)), std::string::npos);
  }
}

TEST(Gateway, ReplayNeedsExistingTranscript) {
  const TempDir dir;
  EXPECT_THROW(Gateway(config_for(GatewayMode::kReplay, dir / "missing.jsonl")), GatewayError);
  EXPECT_THROW(Gateway(config_for(GatewayMode::kRecord, {}), std::make_unique<ScriptedTransport>(echo_script())),
               GatewayError);
}

TEST(Gateway, MalformedTranscriptReportsLine) {
  const TempDir dir;
  const auto path = dir / "t.jsonl";
  testing::write_text(path, "{\"key\":\"k\",\"request_digest\":\"d\",\"response\":\"r\"}\nnot json\n");
  try {
    Gateway g(config_for(GatewayMode::kReplay, path));
    FAIL() << "expected a malformed transcript error";
  } catch (const GatewayError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Gateway, RetriesTransientFailures) {
  ScriptedTransport inner(echo_script());
  for (int status : {429, 500, 503, 0}) {
    auto flaky = std::make_unique<FlakyTransport>(inner, 3, status);
    auto* raw = flaky.get();
    Gateway g(config_for(GatewayMode::kLive, {}), std::move(flaky));
    std::vector<std::chrono::milliseconds> sleeps;
    g.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
    EXPECT_EQ(g.complete(exchange("x")), "echo:x");
    EXPECT_EQ(raw->attempts(), 4);
    EXPECT_EQ(sleeps.size(), 3U);
  }
}

TEST(Gateway, BackoffIsBoundedFullJitter) {
  ScriptedTransport inner(echo_script());
  auto c = config_for(GatewayMode::kLive, {});
  c.retry.base_backoff = std::chrono::milliseconds(100);
  c.retry.max_backoff = std::chrono::milliseconds(250);
  c.retry.max_attempts = 5;
  Gateway g(c, std::make_unique<FlakyTransport>(inner, 4, 503));
  std::vector<std::chrono::milliseconds> sleeps;
  g.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  g.complete(exchange("x"));
  ASSERT_EQ(sleeps.size(), 4U);
  const long long ceilings[] = {100, 200, 250, 250};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_GE(sleeps[i].count(), 0);
    EXPECT_LE(sleeps[i].count(), ceilings[i]);
  }
}

TEST(Gateway, GivesUpAfterMaxAttempts) {
  ScriptedTransport inner(echo_script());
  auto c = config_for(GatewayMode::kLive, {});
  c.retry.max_attempts = 3;
  auto flaky = std::make_unique<FlakyTransport>(inner, 10, 500);
  auto* raw = flaky.get();
  Gateway g(c, std::move(flaky));
  g.set_sleeper([](std::chrono::milliseconds) {});
  EXPECT_THROW(g.complete(exchange("x")), GatewayError);
  EXPECT_EQ(raw->attempts(), 3);
}

TEST(Gateway, ClientErrorsAreNotRetried) {
  ScriptedTransport inner(echo_script());
  auto flaky = std::make_unique<FlakyTransport>(inner, 1, 400);
  auto* raw = flaky.get();
  Gateway g(config_for(GatewayMode::kLive, {}), std::move(flaky));
  g.set_sleeper([](std::chrono::milliseconds) {});
  EXPECT_THROW(g.complete(exchange("x")), GatewayError);
  EXPECT_EQ(raw->attempts(), 1);
}

TEST(Gateway, FailedRecordWritesNothing) {
  const TempDir dir;
  const auto path = dir / "t.jsonl";
  ScriptedTransport inner(echo_script());
  {
    Gateway g(config_for(GatewayMode::kRecord, path), std::make_unique<FlakyTransport>(inner, 1, 401));
    EXPECT_THROW(g.complete(exchange("x")), GatewayError);
  }
  EXPECT_TRUE(!std::filesystem::exists(path) || testing::read_file(path).empty());
}

TEST(Gateway, CredentialComesFromEnvironment) {
  auto c = config_for(GatewayMode::kLive, {});
  c.credential_env = "FAIRSCREEN_TEST_UNSET_KEY";
  ::unsetenv("FAIRSCREEN_TEST_UNSET_KEY");
  auto t = std::make_unique<ScriptedTransport>(echo_script());
  auto* raw = t.get();
  Gateway g(c, std::move(t));
  try {
    g.complete(exchange("x"));
    FAIL() << "expected a credential error";
  } catch (const GatewayError& e) {
    EXPECT_NE(std::string(e.what()).find("FAIRSCREEN_TEST_UNSET_KEY"), std::string::npos);
  }
  EXPECT_EQ(raw->calls(), 0U);
}

TEST(Gateway, ProviderHeaders) {
  for (Provider p : {Provider::kOpenAI, Provider::kAzure}) {
    auto c = config_for(GatewayMode::kLive, {});
    c.provider = p;
    auto t = std::make_unique<ScriptedTransport>(echo_script());
    auto* raw = t.get();
    Gateway g(c, std::move(t));
    g.complete(exchange("x"));
    const auto reqs = raw->requests();
    ASSERT_EQ(reqs.size(), 1U);
    EXPECT_EQ(reqs[0].url, c.endpoint);
    const auto& h = reqs[0].headers;
    const auto has = [&](const std::string& k, const std::string& v) {
      return std::find(h.begin(), h.end(), std::pair{k, v}) != h.end();
    };
    if (p == Provider::kAzure) {
      EXPECT_TRUE(has("api-key", "test-key"));
    } else {
      EXPECT_TRUE(has("Authorization", "Bearer test-key"));
    }
  }
}

TEST(Gateway, WireBodyCarriesModelAndTemperature) {
  Gateway g(config_for(GatewayMode::kLive, {}), std::make_unique<ScriptedTransport>(echo_script()));
  ChatExchange e = exchange("u");
  e.system_text = "s";
  const auto body = nlohmann::json::parse(g.wire_body(e));
  EXPECT_EQ(body.at("model"), "test-model");
  EXPECT_EQ(body.at("temperature"), 0.0);
  EXPECT_EQ(body.at("max_tokens"), 16);
  ASSERT_EQ(body.at("messages").size(), 2U);
  EXPECT_EQ(body.at("messages")[0].at("role"), "system");
  EXPECT_EQ(body.at("messages")[1].at("content"), "u");
  EXPECT_EQ(nlohmann::json::parse(g.wire_body(exchange("u"))).at("messages").size(), 1U);
}

TEST(Gateway, EmbeddingsRecordAndReplay) {
  const TempDir dir;
  const auto path = dir / "t.jsonl";
  HashingEmbedder embedder(8);
  {
    Gateway g(config_for(GatewayMode::kRecord, path), std::make_unique<ScriptedTransport>(echo_script(), &embedder));
    EXPECT_EQ(g.embed("m", "some text"), embedder.embed("some text"));
  }
  Gateway g(config_for(GatewayMode::kReplay, path));
  EXPECT_EQ(g.embed("m", "some text"), embedder.embed("some text"));
  EXPECT_THROW(g.embed("other-model", "some text"), ReplayMissError);
}

class ConcurrencyProbe : public Transport {
 public:
  HttpResponse post(const HttpRequest&) override {
    const int now = ++active_;
    int seen = peak_.load();
    while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --active_;
    return {200, R"({"choices":[{"message":{"content":"False"}}]})", {}};
  }
  int peak() const { return peak_; }

 private:
  std::atomic<int> active_{0};
  std::atomic<int> peak_{0};
};

TEST(Gateway, InFlightBound) {
  auto c = config_for(GatewayMode::kLive, {});
  c.max_in_flight = 2;
  auto t = std::make_unique<ConcurrencyProbe>();
  auto* raw = t.get();
  Gateway g(c, std::move(t));
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&, i] { g.complete(exchange(std::to_string(i))); });
  for (auto& th : threads) th.join();
  EXPECT_LE(raw->peak(), 2);
  EXPECT_EQ(g.network_calls(), 8U);
}

TEST(Gateway, ModeAndProviderNames) {
  for (auto m : {GatewayMode::kLive, GatewayMode::kRecord, GatewayMode::kReplay}) {
    EXPECT_EQ(gateway_mode_from_string(to_string(m)), m);
  }
  EXPECT_EQ(provider_from_string("azure"), Provider::kAzure);
  EXPECT_THROW(gateway_mode_from_string("offline"), ConfigError);
  EXPECT_THROW(provider_from_string("other"), ConfigError);
}

}  // namespace
}  // namespace fairscreen
