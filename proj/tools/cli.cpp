#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fairscreen/corpus.hpp"
#include "fairscreen/digest.hpp"
#include "fairscreen/error.hpp"
#include "fairscreen/eval.hpp"
#include "fairscreen/jsonl.hpp"
#include "fairscreen/prompting.hpp"
#include "fairscreen/selfcorrect.hpp"
#include "fairscreen/topics.hpp"

namespace fairscreen::cli {

namespace {

using Json = nlohmann::json;
namespace fs = std::filesystem;

constexpr std::string_view kToolVersion = "0.1.0";

struct GatewayOptions {
  std::string mode = "replay";
  std::string transcript;
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string embeddings_endpoint = "https://api.openai.com/v1/embeddings";
  std::string model = "gpt-4";
  std::string provider = "openai";
  std::string credential_env = "OPENAI_API_KEY";
  int max_in_flight = 4;
  int max_attempts = 5;
  std::uint64_t jitter_seed = 0;
};

struct CorpusOptions {
  std::string corpus;
  std::string adapter = std::string(kCanonicalAdapter);
  std::string splits;
};

struct Options {
  std::string out;
  CorpusOptions corpus;
  GatewayOptions gateway;

  // ingest
  std::string input;
  std::string rationales;

  // split
  std::uint64_t split_seed = 0;

  // fit-topics
  std::string topic_source = "corpus_train";
  std::string guidelines;
  std::string embedder = "hashing";
  std::size_t embedding_dim = 256;
  std::string embedding_model;
  std::string pipeline = "reduced-density";
  TopicParams topic_params;

  // label-topics
  std::string topic_model;
  std::string labels;

  // optimize / classify
  std::string prompt;
  std::string prompt_file;
  CorrectionConfig correction;
  std::string scoring = "final_batch";

  std::string engine = "prompt";
  std::string split = "validation";
  std::size_t shots = 0;
  std::uint64_t fewshot_seed = 0;
  std::string on_parse_error = "fail";
  int max_output_tokens = 16;
  int workers = 0;

  // evaluate
  std::vector<std::string> predictions;
  std::vector<std::string> eval_splits;
};

std::string short_digest(const std::string& hex) { return hex.substr(0, 12); }

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed for " + path.string());
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
  return fs::path(out);
}

// Digest over the run's semantic configuration and the content of its inputs.
// Output locations never enter it.
std::string config_digest(std::string_view command, const Json& config, const Json& inputs) {
  return sha256_hex(Json{{"command", command}, {"config", config}, {"inputs", inputs}}.dump());
}

void write_manifest(const fs::path& dir, std::string_view command, const std::string& digest, const Json& config,
                    const Json& inputs, const Json& seeds, std::string_view gateway_mode, const std::vector<std::string>& outputs) {
  const Json manifest{{"tool_version", kToolVersion},
                      {"command", command},
                      {"config_digest", digest},
                      {"config", config},
                      {"inputs", inputs},
                      {"seeds", seeds},
                      {"gateway_mode", gateway_mode},
                      {"outputs", outputs}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Json input_digests(const std::map<std::string, std::string>& named_paths) {
  Json out = Json::object();
  for (const auto& [name, path] : named_paths) {
    if (!path.empty()) out[name] = sha256_file(path);
  }
  return out;
}

Corpus load_inputs(const CorpusOptions& opts) {
  if (opts.corpus.empty()) throw ConfigError("--corpus is required");
  if (!fs::exists(opts.corpus)) throw ConfigError("corpus file " + opts.corpus + " does not exist");
  Corpus corpus = load_corpus(opts.corpus, opts.adapter);
  if (!opts.splits.empty()) {
    if (!fs::exists(opts.splits)) throw ConfigError("split manifest " + opts.splits + " does not exist");
    const auto splits = read_split_manifest(opts.splits);
    for (const auto& s : corpus.stimuli) {
      if (!splits.by_id.contains(s.id)) throw ConfigError("split manifest does not cover stimulus " + s.id);
    }
    corpus = apply_splits(corpus, splits);
  }
  return corpus;
}

std::vector<Stimulus> select_named_split(const Corpus& corpus, std::string_view name) {
  if (name == "all") return corpus.stimuli;
  if (name == "test") {
    std::vector<Stimulus> out;
    for (const auto& s : corpus.stimuli) {
      if (s.split == Split::kTestInDomain || s.split == Split::kTestOutOfDomain) out.push_back(s);
    }
    return out;
  }
  return select_split(corpus, split_from_string(name));
}

GatewayConfig gateway_config(const GatewayOptions& o) {
  GatewayConfig c;
  c.endpoint = o.endpoint;
  c.embeddings_endpoint = o.embeddings_endpoint;
  c.model = o.model;
  c.provider = provider_from_string(o.provider);
  c.credential_env = o.credential_env;
  c.retry.max_attempts = o.max_attempts;
  c.mode = gateway_mode_from_string(o.mode);
  c.transcript = o.transcript;
  c.max_in_flight = o.max_in_flight;
  c.jitter_seed = o.jitter_seed;
  if (c.max_in_flight < 1) throw ConfigError("--max-in-flight must be at least 1");
  if (c.mode == GatewayMode::kReplay && (o.transcript.empty() || !fs::exists(o.transcript))) {
    throw ConfigError("replay mode needs an existing --transcript");
  }
  if (c.mode == GatewayMode::kRecord && o.transcript.empty()) throw ConfigError("record mode needs --transcript");
  return c;
}

std::unique_ptr<Gateway> make_gateway(const GatewayOptions& o, const TransportFactory& factory) {
  auto config = gateway_config(o);
  std::unique_ptr<Transport> transport;
  if (config.mode != GatewayMode::kReplay && factory) transport = factory();
  return std::make_unique<Gateway>(std::move(config), std::move(transport));
}

std::unique_ptr<Embedder> make_embedder(const std::string& id, Gateway* gateway) {
  constexpr std::string_view kHashing = "hashing-v1-d";
  constexpr std::string_view kRemote = "remote:";
  if (id.starts_with(kHashing)) {
    std::size_t dim = 0;
    try {
      dim = std::stoul(id.substr(kHashing.size()));
    } catch (const std::exception&) {
      throw ConfigError("malformed embedder id " + id);
    }
    return std::make_unique<HashingEmbedder>(dim);
  }
  if (id.starts_with(kRemote)) {
    if (gateway == nullptr) throw ConfigError("embedder " + id + " needs gateway options");
    return std::make_unique<GatewayEmbedder>(*gateway, id.substr(kRemote.size()));
  }
  throw ConfigError("unknown embedder " + id);
}

void add_corpus_options(CLI::App* sub, CorpusOptions& o, bool with_splits) {
  sub->add_option("--corpus", o.corpus, "Corpus file")->required();
  sub->add_option("--adapter", o.adapter, "Corpus layout")
      ->check(CLI::IsMember({std::string(kCanonicalAdapter), std::string(kReleaseCsvAdapter)}))
      ->capture_default_str();
  if (with_splits) sub->add_option("--splits", o.splits, "Split manifest from `split`");
}

void add_gateway_options(CLI::App* sub, GatewayOptions& o) {
  sub->add_option("--gateway", o.mode, "live, record or replay")
      ->check(CLI::IsMember({"live", "record", "replay"}))
      ->capture_default_str();
  sub->add_option("--transcript", o.transcript, "Record/replay transcript");
  sub->add_option("--endpoint", o.endpoint, "Chat-completions URL")->capture_default_str();
  sub->add_option("--embeddings-endpoint", o.embeddings_endpoint, "Embeddings URL")->capture_default_str();
  sub->add_option("--model", o.model, "Model or deployment name")->capture_default_str();
  sub->add_option("--provider", o.provider, "openai or azure")
      ->check(CLI::IsMember({"openai", "azure"}))
      ->capture_default_str();
  sub->add_option("--credential-env", o.credential_env, "Environment variable holding the API key")
      ->capture_default_str();
  sub->add_option("--max-in-flight", o.max_in_flight, "Concurrent requests")->capture_default_str();
  sub->add_option("--max-attempts", o.max_attempts, "Attempts per request")->capture_default_str();
  sub->add_option("--jitter-seed", o.jitter_seed, "Backoff jitter seed")->capture_default_str();
}

Json gateway_semantics(const GatewayOptions& o) { return Json{{"model", o.model}}; }

// ---------------------------------------------------------------------------

int cmd_ingest(const Options& o, std::ostream& out) {
  const auto dir = prepare_out(o.out);
  if (!fs::exists(o.input)) throw ConfigError("input file " + o.input + " does not exist");
  Corpus corpus = load_corpus(o.input, o.corpus.adapter);
  if (!o.rationales.empty()) {
    const auto rationales = load_rationales(o.rationales);
    for (auto& s : corpus.stimuli) {
      if (auto it = rationales.find(s.id); it != rationales.end()) s.rationale = it->second;
    }
  }
  const Json config{{"adapter", o.corpus.adapter}};
  const Json inputs = input_digests({{"input", o.input}, {"rationales", o.rationales}});
  const auto digest = config_digest("ingest", config, inputs);
  std::ostringstream ss;
  jsonl::write(ss, jsonl::meta_header("corpus", digest));
  write_canonical(ss, corpus);
  write_file(dir / "corpus.jsonl", ss.str());
  write_manifest(dir, "ingest", digest, config, inputs, Json::object(), "none", {"corpus.jsonl"});
  out << fmt::format("ingested {} stimuli into {}\n", corpus.size(), (dir / "corpus.jsonl").string());
  return kExitOk;
}

int cmd_stats(const Options& o, std::ostream& out) {
  const auto dir = prepare_out(o.out);
  const Corpus corpus = load_inputs(o.corpus);
  const auto table = render_stats(corpus_stats(corpus));
  const Json config{{"adapter", o.corpus.adapter}};
  const Json inputs = input_digests({{"corpus", o.corpus.corpus}});
  const auto digest = config_digest("stats", config, inputs);
  write_file(dir / "stats.txt", "# config_digest " + digest + "\n" + table);
  write_manifest(dir, "stats", digest, config, inputs, Json::object(), "none", {"stats.txt"});
  out << table;
  return kExitOk;
}

int cmd_split(const Options& o, std::ostream& out) {
  const auto dir = prepare_out(o.out);
  CorpusOptions co = o.corpus;
  co.splits.clear();
  const Corpus corpus = load_inputs(co);
  const auto splits = make_splits(corpus, o.split_seed);
  const Json config{{"adapter", o.corpus.adapter}, {"seed", o.split_seed}};
  const Json inputs = input_digests({{"corpus", o.corpus.corpus}});
  const auto digest = config_digest("split", config, inputs);

  std::ostringstream manifest;
  write_split_manifest(manifest, splits, digest);
  write_file(dir / "splits.jsonl", manifest.str());
  std::ostringstream canonical;
  jsonl::write(canonical, jsonl::meta_header("corpus", digest));
  write_canonical(canonical, apply_splits(corpus, splits));
  write_file(dir / "corpus.jsonl", canonical.str());
  write_manifest(dir, "split", digest, config, inputs, Json{{"split", o.split_seed}}, "none",
                 {"splits.jsonl", "corpus.jsonl"});

  const Split order[] = {Split::kTrain, Split::kValidation, Split::kTestInDomain, Split::kTestOutOfDomain,
                         Split::kUnassigned};
  out << fmt::format("{:<50}", "Item/Task Type");
  for (Split s : order) out << fmt::format(" {:>18}", to_string(s));
  out << '\n';
  for (const auto& [type, counts] : splits.stratification) {
    out << fmt::format("{:<50}", type.display_name());
    for (Split s : order) {
      auto it = counts.find(s);
      out << fmt::format(" {:>18}", it == counts.end() ? 0 : it->second);
    }
    out << '\n';
  }
  for (Split s : {Split::kValidation, Split::kTestInDomain, Split::kTestOutOfDomain}) {
    std::size_t unfair = 0, total = 0;
    for (const auto& st : corpus.stimuli) {
      if (splits.of(st.id) != s) continue;
      ++total;
      unfair += st.unfair;
    }
    out << fmt::format("{}: {} ({} unfair, {} fair)\n", to_string(s), total, unfair, total - unfair);
  }
  return kExitOk;
}

int cmd_fit_topics(const Options& o, std::ostream& out, std::ostream& err, const TransportFactory& factory) {
  const auto dir = prepare_out(o.out);
  const TopicSource source = topic_source_from_string(o.topic_source);
  std::vector<std::string> texts, ids;
  Json inputs;
  if (source == TopicSource::kCorpusTrain) {
    const Corpus corpus = load_inputs(o.corpus);
    for (const auto& s : select_split(corpus, Split::kTrain)) {
      texts.push_back(s.text);
      ids.push_back(s.id);
    }
    if (texts.empty()) throw ConfigError("corpus has no train split; pass --splits or run `split` first");
    inputs = input_digests({{"corpus", o.corpus.corpus}, {"splits", o.corpus.splits}});
  } else {
    std::string document;
    if (o.guidelines.empty()) {
      document = std::string(catalog::asset(catalog::kGuidelineLong));
      inputs = Json{{"guidelines", sha256_hex(document)}};
    } else {
      std::ifstream in(o.guidelines, std::ios::binary);
      if (!in) throw ConfigError("cannot read guidelines " + o.guidelines);
      std::ostringstream ss;
      ss << in.rdbuf();
      document = ss.str();
      inputs = input_digests({{"guidelines", o.guidelines}});
    }
    texts = segment_passages(document);
    for (std::size_t i = 0; i < texts.size(); ++i) ids.push_back(fmt::format("passage-{}", i));
  }

  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<Embedder> embedder;
  if (o.embedder == "hashing") {
    embedder = std::make_unique<HashingEmbedder>(o.embedding_dim);
  } else {
    if (o.embedding_model.empty()) throw ConfigError("--embedder remote needs --embedding-model");
    gateway = make_gateway(o.gateway, factory);
    embedder = std::make_unique<GatewayEmbedder>(*gateway, o.embedding_model);
  }
  TopicParams params = o.topic_params;
  params.pipeline = cluster_pipeline_from_string(o.pipeline);

  const Json config{{"source", o.topic_source},
                    {"embedder", embedder->id()},
                    {"pipeline", o.pipeline},
                    {"n_neighbors", params.reduction.n_neighbors},
                    {"n_components", params.reduction.n_components},
                    {"min_dist", params.reduction.min_dist},
                    {"epochs", params.reduction.epochs},
                    {"min_cluster_size", params.min_cluster_size},
                    {"min_samples", params.min_samples},
                    {"kmeans_k", params.kmeans_k},
                    {"min_support", params.min_support},
                    {"top_terms", params.top_terms},
                    {"seed", params.seed}};
  const auto digest = config_digest("fit-topics", config, inputs);

  TopicModel model = fit_topics(texts, *embedder, params, ids);
  model.source = source;
  model.config_digest = digest;
  save_topic_model(dir / "topic_model.json", model);
  std::ostringstream labels;
  labels << "# config_digest " << digest << "\n# set each label to restricted or acceptable\n";
  write_label_file(labels, label_template(model));
  write_file(dir / "labels.tsv", labels.str());
  write_manifest(dir, "fit-topics", digest, config, inputs, Json{{"topics", params.seed}},
                 gateway ? to_string(gateway->config().mode) : "none", {"topic_model.json", "labels.tsv"});

  if (model.clusters.empty()) err << "warning: no cluster reached the minimum support\n";
  out << fmt::format("{} documents, {} topics retained\n", texts.size(), model.clusters.size());
  out << render_topics(model);
  return kExitOk;
}

int cmd_label_topics(const Options& o, std::ostream& out) {
  const auto dir = prepare_out(o.out);
  if (o.labels.empty()) throw ConfigError("--labels is required");
  TopicModel model = load_topic_model(o.topic_model);
  apply_labels(model, read_label_file(o.labels));
  const Json inputs = input_digests({{"model", o.topic_model}, {"labels", o.labels}});
  const auto digest = config_digest("label-topics", Json::object(), inputs);
  model.config_digest = digest;
  save_topic_model(dir / "topic_model.json", model);
  write_manifest(dir, "label-topics", digest, Json::object(), inputs, Json::object(), "none", {"topic_model.json"});
  std::size_t restricted = 0;
  for (const auto& [_, label] : model.labels) restricted += label == TopicLabel::kRestricted;
  out << fmt::format("labeled {} topics ({} restricted)\n", model.labels.size(), restricted);
  out << render_topics(model);
  return kExitOk;
}

PromptSpec resolve_prompt(const Options& o) {
  if (!o.prompt.empty() && !o.prompt_file.empty()) throw ConfigError("pass either --prompt or --prompt-file");
  if (!o.prompt_file.empty()) return catalog::load_prompt_file(o.prompt_file);
  if (o.prompt.empty()) throw ConfigError("--prompt or --prompt-file is required");
  return catalog::base_prompt(o.prompt);
}

int cmd_optimize(const Options& o, std::ostream& out, const TransportFactory& factory) {
  const auto dir = prepare_out(o.out);
  const Corpus corpus = load_inputs(o.corpus);
  const PromptSpec base = resolve_prompt(o);
  CorrectionConfig cc = o.correction;
  cc.scoring = o.scoring == "validation" ? CandidateScoring::kValidation : CandidateScoring::kFinalBatch;
  validate_config(cc);
  const auto train = select_split(corpus, Split::kTrain);
  const auto validation = select_split(corpus, Split::kValidation);

  const Json config{{"prompt", base.name},
                    {"prompt_sha256", sha256_hex(base.body)},
                    {"batch_size", cc.batch_size},
                    {"batches", cc.batches},
                    {"max_epochs", cc.max_epochs},
                    {"seed", cc.seed},
                    {"override_budget", cc.override_budget},
                    {"strike_limit", cc.strike_limit},
                    {"scoring", o.scoring},
                    {"max_growth", cc.max_growth},
                    {"gateway", gateway_semantics(o.gateway)}};
  const Json inputs = input_digests({{"corpus", o.corpus.corpus}, {"splits", o.corpus.splits}});
  const auto digest = config_digest("optimize", config, inputs);

  auto gateway = make_gateway(o.gateway, factory);
  const auto result = self_correct(base, train, cc, *gateway, validation);

  const std::string stem = base.name + ".optimized";
  catalog::write_prompt_file(dir / (stem + ".txt"), PromptSpec{stem, result.best.text, 0});
  const Json meta{{"config_digest", digest},
                  {"base_prompt", base.name},
                  {"base_sha256", sha256_hex(base.body)},
                  {"prompt_sha256", sha256_hex(result.best.text)},
                  {"accuracy", result.best.accuracy},
                  {"correct", result.best.correct},
                  {"scored", result.best.scored},
                  {"candidates", result.candidates.size()},
                  {"origin_batch", result.best.batch},
                  {"origin_epoch", result.best.epoch}};
  write_file(dir / (stem + ".meta.json"), meta.dump(2) + "\n");
  write_trace(dir / "trace", result, digest);
  write_manifest(dir, "optimize", digest, config, inputs,
                 Json{{"correction", cc.seed}, {"jitter", o.gateway.jitter_seed}}, to_string(gateway->config().mode),
                 {stem + ".txt", stem + ".meta.json", "trace/trace.jsonl"});

  out << fmt::format("{} candidates; best {} ({}/{} correct) from {}\n", result.candidates.size(),
                     result.best.batch < 0 ? "base prompt" : "revision", result.best.correct, result.best.scored,
                     base.name);
  out << fmt::format("wrote {}\n", (dir / (stem + ".txt")).string());
  return kExitOk;
}

int cmd_classify(const Options& o, std::ostream& out, const TransportFactory& factory) {
  const auto dir = prepare_out(o.out);
  const Corpus corpus = load_inputs(o.corpus);
  const auto gold = select_named_split(corpus, o.split);
  if (gold.empty()) throw ConfigError("split " + o.split + " is empty; pass --splits or choose another split");

  Json config{{"engine", o.engine}, {"split", o.split}};
  Json inputs = input_digests({{"corpus", o.corpus.corpus}, {"splits", o.corpus.splits}});
  const bool timestamps = o.gateway.mode == "live";
  std::vector<PredictionRecord> records(gold.size());
  std::string method;
  std::unique_ptr<Gateway> gateway;

  if (o.engine == "topic") {
    if (o.topic_model.empty()) throw ConfigError("--engine topic needs --topic-model");
    const TopicModel model = load_topic_model(o.topic_model);
    if (!model.fully_labeled()) throw ConfigError("topic model is not fully labeled; run label-topics");
    inputs["topic_model"] = sha256_file(o.topic_model);
    method = "topic@" + short_digest(inputs["topic_model"].get<std::string>());
    if (model.embedder_id.starts_with("remote:")) gateway = make_gateway(o.gateway, factory);
    auto embedder = make_embedder(model.embedder_id, gateway.get());
    config["embedder"] = model.embedder_id;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      records[i] = {gold[i].id, predict_topic(model, *embedder, gold[i].text), method, std::nullopt};
    }
  } else {
    PromptSpec spec;
    if (o.engine == "selfcorrect_prompt") {
      if (o.prompt_file.empty()) throw ConfigError("--engine selfcorrect_prompt needs --prompt-file");
      spec = catalog::load_prompt_file(o.prompt_file);
    } else {
      spec = resolve_prompt(o);
    }
    std::vector<FewShotExample> examples;
    if (o.engine == "fewshot") {
      if (o.shots == 0) throw ConfigError("--engine fewshot needs --shots >= 1");
      std::map<std::string, std::string> rationales;
      if (!o.rationales.empty()) rationales = load_rationales(o.rationales);
      examples = sample_fewshot(select_split(corpus, Split::kTrain), o.shots, o.fewshot_seed, rationales);
      inputs.update(input_digests({{"rationales", o.rationales}}));
    } else if (o.shots != 0) {
      throw ConfigError("--shots applies only to --engine fewshot");
    }
    const ClassifyOptions copts{parse_error_policy_from_string(o.on_parse_error), o.max_output_tokens};
    const auto prompt_sha = sha256_hex(spec.body);
    method = fmt::format("{}:{}@{}", o.engine, spec.name, short_digest(prompt_sha));
    if (!examples.empty()) method += fmt::format("+{}shot@{}", o.shots, o.fewshot_seed);
    config.update(Json{{"prompt", spec.name},
                       {"prompt_sha256", prompt_sha},
                       {"shots", o.shots},
                       {"fewshot_seed", o.fewshot_seed},
                       {"on_parse_error", o.on_parse_error},
                       {"max_output_tokens", o.max_output_tokens},
                       {"gateway", gateway_semantics(o.gateway)}});

    gateway = make_gateway(o.gateway, factory);
    const std::size_t workers = std::min<std::size_t>(
        gold.size(), static_cast<std::size_t>(o.workers > 0 ? o.workers : gateway->config().max_in_flight));
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto work = [&] {
      while (!failed) {
        const std::size_t i = next++;
        if (i >= gold.size()) return;
        try {
          records[i] = {gold[i].id, classify(spec, examples, gold[i], *gateway, copts), method, std::nullopt};
          if (timestamps) {
            const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
            std::tm tm{};
            gmtime_r(&now, &tm);
            char buf[32];
            std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
            records[i].timestamp = buf;
          }
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          failed = true;
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  const auto digest = config_digest("classify", config, inputs);
  std::ostringstream ss;
  write_predictions(ss, records, digest);
  write_file(dir / "predictions.jsonl", ss.str());
  write_manifest(dir, "classify", digest, config, inputs,
                 Json{{"fewshot", o.fewshot_seed}, {"jitter", o.gateway.jitter_seed}},
                 gateway ? to_string(gateway->config().mode) : "none", {"predictions.jsonl"});
  std::size_t flagged = 0;
  for (const auto& r : records) flagged += is_violation(r.verdict);
  out << fmt::format("{}: {} of {} stimuli flagged\n", method, flagged, records.size());
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  const auto dir = prepare_out(o.out);
  const Corpus corpus = load_inputs(o.corpus);
  if (o.predictions.empty()) throw ConfigError("--predictions is required");

  std::vector<std::string> methods;
  std::map<std::string, std::vector<PredictionRecord>> by_method;
  std::map<std::string, std::string> named_inputs{{"corpus", o.corpus.corpus}, {"splits", o.corpus.splits}};
  for (std::size_t i = 0; i < o.predictions.size(); ++i) {
    named_inputs[fmt::format("predictions_{}", i)] = o.predictions[i];
    for (auto& r : read_predictions(o.predictions[i])) {
      if (!by_method.contains(r.method)) methods.push_back(r.method);
      by_method[r.method].push_back(std::move(r));
    }
  }

  std::set<Split> requested;
  for (const auto& name : o.eval_splits) requested.insert(split_from_string(name));

  std::vector<MetricsReport> reports;
  std::vector<SubcategoryResult> subcategories;
  for (const auto& method : methods) {
    const auto& preds = by_method[method];
    std::map<Split, std::vector<PredictionRecord>> per_split;
    std::vector<std::string> unknown;
    for (const auto& r : preds) {
      const Stimulus* s = corpus.find(r.id);
      if (s == nullptr) {
        unknown.push_back(r.id);
      } else {
        per_split[s->split].push_back(r);
      }
    }
    if (!unknown.empty()) throw CoverageError({}, std::move(unknown));

    std::set<Split> evaluated;
    for (Split s : {Split::kValidation, Split::kTestInDomain, Split::kTestOutOfDomain, Split::kTrain,
                    Split::kUnassigned}) {
      const bool wanted = requested.empty() ? per_split.contains(s) : requested.contains(s);
      if (!wanted) continue;
      const auto gold = select_split(corpus, s);
      reports.push_back(prf(confusion(gold, per_split[s]), method, std::string(to_string(s))));
      evaluated.insert(s);
    }
    if (evaluated.contains(Split::kTestInDomain) && evaluated.contains(Split::kTestOutOfDomain)) {
      auto gold = select_split(corpus, Split::kTestInDomain);
      for (auto& s : select_split(corpus, Split::kTestOutOfDomain)) gold.push_back(std::move(s));
      std::vector<PredictionRecord> pooled = per_split[Split::kTestInDomain];
      for (const auto& r : per_split[Split::kTestOutOfDomain]) pooled.push_back(r);
      for (Subcategory c : {Subcategory::kKsa, Subcategory::kEmotion}) {
        subcategories.push_back(subcategory_recall(gold, pooled, c, method));
      }
    }
  }

  Json config{{"splits", o.eval_splits}};
  const Json inputs = input_digests(named_inputs);
  const auto digest = config_digest("evaluate", config, inputs);
  const auto rendered = render_report(reports, subcategories, digest);
  write_file(dir / "report.txt", rendered.text);
  write_file(dir / "report.jsonl", rendered.jsonl);
  write_manifest(dir, "evaluate", digest, config, inputs, Json::object(), "none", {"report.txt", "report.jsonl"});
  out << rendered.text;
  return kExitOk;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                const TransportFactory& transport_factory) {
  Options o;
  CLI::App app{"Fairness screening for generated test stimuli", "fairscreen"};
  app.set_config("--config", "", "INI or TOML file; command-line flags take precedence");
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(kToolVersion));

  auto* ingest = app.add_subcommand("ingest", "Validate a raw corpus and write the canonical file");
  ingest->add_option("--input", o.input, "Raw corpus file")->required();
  ingest->add_option("--adapter", o.corpus.adapter, "Input layout")
      ->check(CLI::IsMember({std::string(kCanonicalAdapter), std::string(kReleaseCsvAdapter)}))
      ->capture_default_str();
  ingest->add_option("--rationales", o.rationales, "Sidecar of {id, rationale} records");
  ingest->add_option("--out", o.out, "Output directory")->required();

  auto* stats = app.add_subcommand("stats", "Per-type class counts");
  add_corpus_options(stats, o.corpus, false);
  stats->add_option("--out", o.out, "Output directory")->required();

  auto* split = app.add_subcommand("split", "Draw the validation and test splits");
  add_corpus_options(split, o.corpus, false);
  split->add_option("--seed", o.split_seed, "Split seed")->capture_default_str();
  split->add_option("--out", o.out, "Output directory")->required();

  auto* fit = app.add_subcommand("fit-topics", "Cluster texts into describable topics");
  fit->add_option("--source", o.topic_source, "corpus_train or guidelines_doc")
      ->check(CLI::IsMember({"corpus_train", "guidelines_doc"}))
      ->capture_default_str();
  fit->add_option("--corpus", o.corpus.corpus, "Corpus file (corpus_train source)");
  fit->add_option("--adapter", o.corpus.adapter, "Corpus layout")->capture_default_str();
  fit->add_option("--splits", o.corpus.splits, "Split manifest");
  fit->add_option("--guidelines", o.guidelines, "Guidelines document (defaults to the built-in long guideline)");
  fit->add_option("--embedder", o.embedder, "hashing or remote")
      ->check(CLI::IsMember({"hashing", "remote"}))
      ->capture_default_str();
  fit->add_option("--embedding-dim", o.embedding_dim, "Hashing embedder dimension")->capture_default_str();
  fit->add_option("--embedding-model", o.embedding_model, "Remote embedding model");
  fit->add_option("--pipeline", o.pipeline, "reduced-density, density or kmeans")
      ->check(CLI::IsMember({"reduced-density", "density", "kmeans"}))
      ->capture_default_str();
  fit->add_option("--n-neighbors", o.topic_params.reduction.n_neighbors)->capture_default_str();
  fit->add_option("--n-components", o.topic_params.reduction.n_components)->capture_default_str();
  fit->add_option("--min-dist", o.topic_params.reduction.min_dist)->capture_default_str();
  fit->add_option("--layout-epochs", o.topic_params.reduction.epochs)->capture_default_str();
  fit->add_option("--min-cluster-size", o.topic_params.min_cluster_size)->capture_default_str();
  fit->add_option("--min-samples", o.topic_params.min_samples)->capture_default_str();
  fit->add_option("--kmeans-k", o.topic_params.kmeans_k)->capture_default_str();
  fit->add_option("--min-support", o.topic_params.min_support)->capture_default_str();
  fit->add_option("--top-terms", o.topic_params.top_terms)->capture_default_str();
  fit->add_option("--seed", o.topic_params.seed)->capture_default_str();
  fit->add_option("--out", o.out, "Output directory")->required();
  add_gateway_options(fit, o.gateway);

  auto* label = app.add_subcommand("label-topics", "Attach restricted/acceptable labels to a topic model");
  label->add_option("--model", o.topic_model, "Topic model from fit-topics")->required();
  label->add_option("--labels", o.labels, "Edited label file")->required();
  label->add_option("--out", o.out, "Output directory")->required();

  auto* optimize = app.add_subcommand("optimize", "Self-correct a prompt on training errors");
  add_corpus_options(optimize, o.corpus, true);
  optimize->add_option("--prompt", o.prompt, "Catalog prompt name");
  optimize->add_option("--prompt-file", o.prompt_file, "Prompt text file");
  optimize->add_option("--batch-size", o.correction.batch_size)->capture_default_str();
  optimize->add_option("--batches", o.correction.batches)->capture_default_str();
  optimize->add_option("--epochs", o.correction.max_epochs)->capture_default_str();
  optimize->add_option("--seed", o.correction.seed)->capture_default_str();
  optimize->add_flag("--override-budget", o.correction.override_budget, "Allow batch_size x batches outside 6-20");
  optimize->add_option("--strike-limit", o.correction.strike_limit)->capture_default_str();
  optimize->add_option("--max-growth", o.correction.max_growth)->capture_default_str();
  optimize->add_option("--scoring", o.scoring, "final_batch or validation")
      ->check(CLI::IsMember({"final_batch", "validation"}))
      ->capture_default_str();
  optimize->add_option("--out", o.out, "Output directory")->required();
  add_gateway_options(optimize, o.gateway);

  auto* classify_cmd = app.add_subcommand("classify", "Predict verdicts for one split");
  add_corpus_options(classify_cmd, o.corpus, true);
  classify_cmd->add_option("--engine", o.engine, "prompt, fewshot, selfcorrect_prompt or topic")
      ->check(CLI::IsMember({"prompt", "fewshot", "selfcorrect_prompt", "topic"}))
      ->capture_default_str();
  classify_cmd->add_option("--split", o.split, "Split name, test, or all")->capture_default_str();
  classify_cmd->add_option("--prompt", o.prompt, "Catalog prompt name");
  classify_cmd->add_option("--prompt-file", o.prompt_file, "Prompt text file");
  classify_cmd->add_option("--shots", o.shots, "Examples per class (fewshot)")->capture_default_str();
  classify_cmd->add_option("--fewshot-seed", o.fewshot_seed)->capture_default_str();
  classify_cmd->add_option("--rationales", o.rationales, "Sidecar of {id, rationale} records");
  classify_cmd->add_option("--topic-model", o.topic_model, "Labeled topic model (topic)");
  classify_cmd->add_option("--on-parse-error", o.on_parse_error, "fail, positive or negative")
      ->check(CLI::IsMember({"fail", "positive", "negative"}))
      ->capture_default_str();
  classify_cmd->add_option("--max-output-tokens", o.max_output_tokens)->capture_default_str();
  classify_cmd->add_option("--workers", o.workers, "Parallel requests (default: gateway limit)");
  classify_cmd->add_option("--out", o.out, "Output directory")->required();
  add_gateway_options(classify_cmd, o.gateway);

  auto* evaluate = app.add_subcommand("evaluate", "Score prediction files against gold labels");
  add_corpus_options(evaluate, o.corpus, true);
  evaluate->add_option("--predictions", o.predictions, "Prediction file(s)")->required();
  evaluate->add_option("--split", o.eval_splits, "Restrict to these splits");
  evaluate->add_option("--out", o.out, "Output directory")->required();

  std::vector<const char*> argv{"fairscreen"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (*ingest) return cmd_ingest(o, out);
    if (*stats) return cmd_stats(o, out);
    if (*split) return cmd_split(o, out);
    if (*fit) return cmd_fit_topics(o, out, err, transport_factory);
    if (*label) return cmd_label_topics(o, out);
    if (*optimize) return cmd_optimize(o, out, transport_factory);
    if (*classify_cmd) return cmd_classify(o, out, transport_factory);
    if (*evaluate) return cmd_evaluate(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace fairscreen::cli
