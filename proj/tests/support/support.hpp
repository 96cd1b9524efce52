#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairscreen/corpus.hpp"
#include "fairscreen/gateway.hpp"
#include "fairscreen/topics.hpp"

namespace fairscreen::testing {

struct TypeRow {
  ItemType::Kind kind;
  std::size_t total;
  std::size_t unfair;
  std::size_t ksa;
  std::size_t emotion;
};

// Published per-type counts of the annotated release.
inline constexpr TypeRow kTable1[] = {
    {ItemType::Kind::kReadTextAloud, 304, 55, 24, 39},
    {ItemType::Kind::kTalks, 91, 12, 6, 6},
    {ItemType::Kind::kTextCompletion, 84, 26, 11, 19},
    {ItemType::Kind::kRespondToQuestions, 56, 10, 5, 5},
    {ItemType::Kind::kConversations, 41, 8, 5, 4},
    {ItemType::Kind::kRespondToWrittenRequest, 25, 7, 6, 1},
};
inline constexpr TypeRow kTable1Totals{ItemType::Kind::kOther, 601, 118, 57, 74};

// A corpus with exactly the per-type class and subcategory counts above.
// Record order is shuffled by `seed`; texts are synthetic.
Corpus table1_corpus(std::uint64_t seed = 0);

// Small corpus with arbitrary per-type (fair, unfair) counts.
Corpus make_corpus(const std::vector<std::pair<ItemType::Kind, std::pair<std::size_t, std::size_t>>>& rows);

struct ChatRequest {
  std::string system;
  std::string user;
};

// Decodes an OpenAI-style chat body.
ChatRequest parse_chat_body(const std::string& body);

// Pieces of an assembled classification prompt.
std::string prompt_body_of(const std::string& user);
std::string stimulus_of(const std::string& user);

// Transport answering from a script instead of the network. The script gets
// the decoded chat request and returns the assistant text, or nullopt for a
// 500 response. Embedding requests are answered by `embedder` when set.
class ScriptedTransport : public Transport {
 public:
  using Script = std::function<std::optional<std::string>(const ChatRequest&)>;
  explicit ScriptedTransport(Script script, Embedder* embedder = nullptr)
      : script_(std::move(script)), embedder_(embedder) {}

  HttpResponse post(const HttpRequest& request) override;

  std::size_t calls() const { return calls_; }
  std::vector<HttpRequest> requests() const;

 private:
  Script script_;
  Embedder* embedder_;
  std::atomic<std::size_t> calls_{0};
  mutable std::mutex mu_;
  std::vector<HttpRequest> requests_;
};

// Fails the first `failures` calls with `status` (0 = transport error), then
// delegates.
class FlakyTransport : public Transport {
 public:
  FlakyTransport(Transport& inner, int failures, int status) : inner_(inner), failures_(failures), status_(status) {}
  HttpResponse post(const HttpRequest& request) override;
  int attempts() const { return attempts_; }

 private:
  Transport& inner_;
  int failures_;
  int status_;
  int attempts_ = 0;
};

// Unique directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

std::filesystem::path fixture_dir();

// Record and live gateways in tests read a dummy key from this variable.
inline constexpr const char* kTestCredentialEnv = "FAIRSCREEN_TEST_KEY";
void ensure_test_credential();

// Synthetic topic corpora: each family has a keyword and its own vocabulary.
struct TopicFamily {
  std::string keyword;
  std::vector<std::string> vocabulary;
};
std::vector<TopicFamily> topic_families(std::size_t count);
std::string family_document(const TopicFamily& family, std::uint64_t& state);

}  // namespace fairscreen::testing
