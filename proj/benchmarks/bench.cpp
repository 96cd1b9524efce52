#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "fairscreen/corpus.hpp"
#include "fairscreen/eval.hpp"
#include "fairscreen/topics.hpp"

namespace {

using namespace fairscreen;

struct Row {
  ItemType::Kind kind;
  std::size_t total, unfair;
};

constexpr Row kRows[] = {
    {ItemType::Kind::kReadTextAloud, 304, 55},     {ItemType::Kind::kTalks, 91, 12},
    {ItemType::Kind::kTextCompletion, 84, 26},     {ItemType::Kind::kRespondToQuestions, 56, 10},
    {ItemType::Kind::kConversations, 41, 8},       {ItemType::Kind::kRespondToWrittenRequest, 25, 7},
};

Corpus release_shaped_corpus() {
  Corpus corpus;
  corpus.source = "bench";
  for (const auto& row : kRows) {
    const ItemType type(row.kind);
    for (std::size_t i = 0; i < row.total; ++i) {
      Stimulus s;
      s.id = type.name() + "-" + std::to_string(i);
      s.item_type = type;
      s.text = "stimulus " + std::to_string(i);
      s.unfair = i < row.unfair;
      s.ksa = s.unfair;
      corpus.stimuli.push_back(std::move(s));
    }
  }
  return corpus;
}

void BM_MakeSplits(benchmark::State& state) {
  const auto corpus = release_shaped_corpus();
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(make_splits(corpus, seed++));
}
BENCHMARK(BM_MakeSplits);

void BM_ConfusionAndPrf(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<Stimulus> gold;
  std::vector<PredictionRecord> preds;
  for (std::size_t i = 0; i < n; ++i) {
    Stimulus s;
    s.id = "s" + std::to_string(i);
    s.text = "t";
    s.unfair = i % 3 == 0;
    s.ksa = s.unfair;
    gold.push_back(s);
    preds.push_back({s.id, verdict_of(i % 4 == 0), "bench", std::nullopt});
  }
  for (auto _ : state) benchmark::DoNotOptimize(prf(confusion(gold, preds)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_ConfusionAndPrf)->Arg(48)->Arg(601)->Arg(10000);

const std::vector<std::string>& topic_documents() {
  static const std::vector<std::string> docs = [] {
    const std::vector<std::vector<std::string>> families = {
        {"soil", "compost", "tulip", "seedling", "mulch", "hedge"},
        {"telescope", "nebula", "orbit", "comet", "galaxy", "planet"},
        {"recipe", "oven", "flour", "simmer", "garlic", "whisk"},
    };
    std::vector<std::string> out;
    for (std::size_t i = 0; i < 60; ++i) {
      const auto& f = families[i % families.size()];
      std::string doc;
      for (std::size_t j = 0; j < 6; ++j) doc += f[(i * 5 + j * 3) % f.size()] + " ";
      out.push_back(doc);
    }
    return out;
  }();
  return docs;
}

void BM_FitTopics(benchmark::State& state) {
  HashingEmbedder embedder(256);
  TopicParams params;
  params.seed = 1;
  for (auto _ : state) benchmark::DoNotOptimize(fit_topics(topic_documents(), embedder, params));
}
BENCHMARK(BM_FitTopics)->Unit(benchmark::kMillisecond);

void BM_PredictTopic(benchmark::State& state) {
  HashingEmbedder embedder(256);
  TopicParams params;
  params.pipeline = ClusterPipeline::kKMeans;
  params.kmeans_k = 3;
  auto model = fit_topics(topic_documents(), embedder, params);
  for (const auto& c : model.clusters) model.labels[c.id] = c.id == 0 ? TopicLabel::kRestricted : TopicLabel::kAcceptable;
  for (auto _ : state) benchmark::DoNotOptimize(predict_topic(model, embedder, "comet orbit galaxy recipe"));
}
BENCHMARK(BM_PredictTopic);

}  // namespace

BENCHMARK_MAIN();
