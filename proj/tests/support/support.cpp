#include "support.hpp"

#include <fstream>
#include <cstdlib>
#include <random>
#include <sstream>

#include <unistd.h>

#include <fmt/format.h>

#include "fairscreen/rng.hpp"

namespace fairscreen::testing {

namespace {

using Json = nlohmann::json;

const char* const kFiller[] = {"morning", "office",  "customer", "schedule", "weekend", "library", "meeting",
                               "project", "service", "travel",   "garden",   "museum",  "market",  "delivery",
                               "station", "budget",  "training", "holiday",  "lunch",   "report"};

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Corpus table1_corpus(std::uint64_t seed) {
  Corpus corpus;
  corpus.source = fmt::format("synthetic-table1-{}", seed);
  std::size_t serial = 0;
  for (const auto& row : kTable1) {
    const ItemType type(row.kind);
    const std::size_t both = row.ksa + row.emotion - row.unfair;
    for (std::size_t i = 0; i < row.total; ++i) {
      Stimulus s;
      s.id = fmt::format("{}-{:03}", type.name(), i);
      s.item_type = type;
      s.unfair = i < row.unfair;
      if (s.unfair) {
        if (i < both) {
          s.ksa = s.emotion = true;
        } else if (i < row.ksa) {
          s.ksa = true;
        } else {
          s.emotion = true;
        }
      }
      s.text = fmt::format("{} stimulus {} about the {} and the {}.", type.display_name(), i, kFiller[serial % 20],
                           kFiller[(serial * 7 + 3) % 20]);
      ++serial;
      corpus.stimuli.push_back(std::move(s));
    }
  }
  Rng rng(seed);
  rng.shuffle(std::span<Stimulus>(corpus.stimuli));
  return corpus;
}

Corpus make_corpus(const std::vector<std::pair<ItemType::Kind, std::pair<std::size_t, std::size_t>>>& rows) {
  Corpus corpus;
  corpus.source = "synthetic";
  for (const auto& [kind, counts] : rows) {
    const ItemType type(kind);
    const auto [fair, unfair] = counts;
    for (std::size_t i = 0; i < fair + unfair; ++i) {
      Stimulus s;
      s.id = fmt::format("{}-{:03}", type.name(), i);
      s.item_type = type;
      s.unfair = i < unfair;
      s.ksa = s.unfair;
      s.text = fmt::format("{} text number {}", type.name(), i);
      corpus.stimuli.push_back(std::move(s));
    }
  }
  return corpus;
}

ChatRequest parse_chat_body(const std::string& body) {
  const auto j = Json::parse(body);
  ChatRequest r;
  for (const auto& m : j.at("messages")) {
    if (m.at("role") == "system") r.system = m.at("content").get<std::string>();
    if (m.at("role") == "user") r.user = m.at("content").get<std::string>();
  }
  return r;
}

std::string prompt_body_of(const std::string& user) {
  const auto pos = user.find("\n\nText: ");
  return pos == std::string::npos ? user : user.substr(0, pos);
}

std::string stimulus_of(const std::string& user) {
  const auto start = user.rfind("\n\nText: ");
  if (start == std::string::npos) return {};
  const auto begin = start + 8;
  const auto end = user.rfind("\n\n");
  return end == std::string::npos || end < begin ? user.substr(begin) : user.substr(begin, end - begin);
}

HttpResponse ScriptedTransport::post(const HttpRequest& request) {
  ++calls_;
  {
    std::lock_guard lock(mu_);
    requests_.push_back(request);
  }
  const auto body = Json::parse(request.body);
  if (body.contains("input")) {
    if (embedder_ == nullptr) return {500, "no embedder scripted", {}};
    const auto v = embedder_->embed(body.at("input").get<std::string>());
    return {200, Json{{"data", Json::array({Json{{"embedding", v}}})}}.dump(), {}};
  }
  const auto reply = script_(parse_chat_body(request.body));
  if (!reply) return {500, "scripted failure", {}};
  return {200, Json{{"choices", Json::array({Json{{"message", {{"role", "assistant"}, {"content", *reply}}}}})}}.dump(),
          {}};
}

std::vector<HttpRequest> ScriptedTransport::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

HttpResponse FlakyTransport::post(const HttpRequest& request) {
  ++attempts_;
  if (failures_ > 0) {
    --failures_;
    if (status_ == 0) return {0, {}, "connection refused"};
    return {status_, "try later", {}};
  }
  return inner_.post(request);
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          fmt::format("fairscreen-test-{}-{}-{}", ::getpid(), counter++, rd());
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::filesystem::path fixture_dir() { return FAIRSCREEN_FIXTURE_DIR; }

void ensure_test_credential() { ::setenv(kTestCredentialEnv, "test-key", 0); }

std::vector<TopicFamily> topic_families(std::size_t count) {
  static const std::vector<TopicFamily> kFamilies = {
      {"gardening", {"soil", "compost", "tulip", "seedling", "trowel", "mulch", "hedge", "orchard", "greenhouse",
                     "pruning", "watering", "fertilizer"}},
      {"astronomy", {"telescope", "nebula", "orbit", "comet", "galaxy", "planet", "eclipse", "meteor", "crater",
                     "asteroid", "observatory", "constellation"}},
      {"cooking", {"recipe", "oven", "saucepan", "flour", "simmer", "garlic", "whisk", "pastry", "roast", "spice",
                   "skillet", "dough"}},
      {"sailing", {"harbor", "mast", "anchor", "regatta", "keel", "rudder", "tide", "dock", "buoy", "hull", "jib",
                   "mooring"}},
      {"painting", {"canvas", "easel", "palette", "brush", "pigment", "gallery", "portrait", "sketch", "acrylic",
                    "watercolor", "mural", "varnish"}},
  };
  if (count > kFamilies.size()) throw std::out_of_range("too many topic families");
  return {kFamilies.begin(), kFamilies.begin() + static_cast<std::ptrdiff_t>(count)};
}

std::string family_document(const TopicFamily& family, std::uint64_t& state) {
  std::string doc = family.keyword;
  for (int i = 0; i < 6; ++i) doc += " " + family.vocabulary[splitmix(state) % family.vocabulary.size()];
  for (int i = 0; i < 2; ++i) doc += " " + std::string(kFiller[splitmix(state) % 20]);
  return doc;
}

}  // namespace fairscreen::testing
