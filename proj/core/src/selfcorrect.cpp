#include "fairscreen/selfcorrect.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "fairscreen/digest.hpp"
#include "fairscreen/error.hpp"
#include "fairscreen/jsonl.hpp"
#include "fairscreen/rng.hpp"

namespace fairscreen {

namespace {

std::string_view trim_view(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Replaces {name} placeholders in one left-to-right pass, so substituted text
// is never rescanned.
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string_view, std::less<>>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto it = values.find(tmpl.substr(i + 1, close - i - 1));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

}  // namespace

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNone: return "none";
    case ErrorKind::kFalsePositive: return "false_positive";
    case ErrorKind::kFalseNegative: return "false_negative";
  }
  return "none";
}

void validate_config(const CorrectionConfig& config) {
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (config.batches == 0) throw ConfigError("batch count must be positive");
  if (config.max_epochs == 0) throw ConfigError("max epochs must be positive");
  if (config.strike_limit < 0) throw ConfigError("strike limit must be non-negative");
  const std::size_t budget = config.batch_size * config.batches;
  if (!config.override_budget && (budget < config.budget_min || budget > config.budget_max)) {
    throw ConfigError("training budget " + std::to_string(config.batch_size) + " x " + std::to_string(config.batches) +
                      " = " + std::to_string(budget) + " is outside [" + std::to_string(config.budget_min) + ", " +
                      std::to_string(config.budget_max) + "]; pass the budget override to allow it");
  }
}

RevisionCheck validate_revision(std::string_view candidate, const PromptSpec& base, std::string_view sample_text,
                                double max_growth) {
  if (trim_view(candidate).empty()) return {false, "empty"};
  if (static_cast<double>(candidate.size()) > max_growth * static_cast<double>(base.body.size())) {
    return {false, "too long"};
  }
  if (!sample_text.empty() && candidate.find(sample_text) != std::string_view::npos) return {false, "sample leak"};
  if (candidate.find(classification_suffix()) != std::string_view::npos) return {false, "contains suffix"};
  return {};
}

bool predictions_stable(std::span<const std::vector<Verdict>> history) {
  if (history.size() < 2) return false;
  return history[history.size() - 1] == history[history.size() - 2];
}

ChatExchange correction_exchange(std::string_view current_prompt, std::string_view sample_text, ErrorKind error,
                                 int max_output_tokens) {
  if (error == ErrorKind::kNone) throw Error("correction_exchange: no error to correct");
  auto asset = [](std::string_view stem) { return trim_view(catalog::asset(stem)); };
  const auto instruction =
      asset(error == ErrorKind::kFalseNegative ? "correction_false_negative" : "correction_false_positive");
  const auto user = fill_template(asset("correction_user"),
                                  {{"prompt", current_prompt}, {"text", sample_text}, {"instruction", instruction}});
  return ChatExchange{std::string(asset("correction_system")), user, 0.0, max_output_tokens};
}

CorrectionResult self_correct(const PromptSpec& base, std::span<const Stimulus> train, const CorrectionConfig& config,
                              Gateway& gateway, std::span<const Stimulus> validation) {
  validate_config(config);
  if (train.empty()) throw ConfigError("self-correction needs training stimuli");
  if (!catalog::optimizable(base.name)) throw ConfigError("prompt " + base.name + " is excluded from self-correction");
  const std::size_t budget = config.batch_size * config.batches;
  if (train.size() < budget) {
    throw ConfigError("self-correction needs " + std::to_string(budget) + " training stimuli, have " +
                      std::to_string(train.size()));
  }
  if (config.scoring == CandidateScoring::kValidation && validation.empty()) {
    throw ConfigError("validation scoring requested without validation stimuli");
  }

  CorrectionResult result;
  Rng rng(config.seed);
  const auto drawn = rng.sample_indices(train.size(), budget);
  std::vector<std::vector<const Stimulus*>> batches(config.batches);
  for (std::size_t i = 0; i < budget; ++i) batches[i / config.batch_size].push_back(&train[drawn[i]]);
  for (const auto& batch : batches) {
    auto& ids = result.batch_ids.emplace_back();
    for (const auto* s : batch) ids.push_back(s->id);
  }

  const ClassifyOptions classify_options{ParseErrorPolicy::kFail, 16};
  std::string active = base.body;
  result.candidates.push_back({active, 0.0, 0, 0, -1, -1});

  for (std::size_t b = 0; b < batches.size(); ++b) {
    std::vector<std::vector<Verdict>> history;
    int strikes = 0;
    bool aborted = false;
    std::size_t epochs = 0;
    for (std::size_t epoch = 0; epoch < config.max_epochs && !aborted; ++epoch) {
      ++epochs;
      std::vector<Verdict> verdicts;
      std::size_t correct = 0;
      for (const Stimulus* s : batches[b]) {
        CorrectionStep step;
        step.sample_id = s->id;
        step.gold_unfair = s->unfair;
        step.prompt_before = active;
        step.epoch = epoch;
        step.batch = b;
        step.verdict = classify(PromptSpec{base.name, active, 0}, {}, *s, gateway, classify_options);
        const bool flagged = is_violation(step.verdict);
        step.error = flagged == s->unfair ? ErrorKind::kNone
                     : flagged            ? ErrorKind::kFalsePositive
                                          : ErrorKind::kFalseNegative;
        verdicts.push_back(step.verdict);
        if (step.error == ErrorKind::kNone) {
          ++correct;
          step.prompt_after = active;
          result.trace.emplace_back(std::move(step));
          continue;
        }

        MetaCall meta;
        meta.sample_id = s->id;
        meta.error = step.error;
        meta.prompt_before = active;
        meta.epoch = epoch;
        meta.batch = b;
        meta.response = gateway.complete(correction_exchange(active, s->text, step.error, config.meta_max_output_tokens));
        const std::string revision(trim_view(meta.response));
        const auto check = validate_revision(revision, base, s->text, config.max_growth);
        if (check.ok) {
          active = revision;
          result.candidates.push_back({active, 0.0, 0, 0, static_cast<int>(b), static_cast<int>(epoch)});
        } else {
          meta.rejection = check.reason;
          ++strikes;
        }
        meta.strikes = strikes;
        step.prompt_after = active;
        result.trace.emplace_back(std::move(step));
        result.trace.emplace_back(std::move(meta));
        if (strikes > config.strike_limit) {
          result.trace.emplace_back(BatchAbort{b, strikes});
          aborted = true;
          break;
        }
      }
      if (aborted) break;
      history.push_back(std::move(verdicts));
      if (correct == batches[b].size() || predictions_stable(history)) break;
    }
    result.epochs_run.push_back(epochs);
  }

  std::vector<const Stimulus*> scoring_set;
  if (config.scoring == CandidateScoring::kValidation) {
    for (const auto& s : validation) scoring_set.push_back(&s);
  } else {
    scoring_set = batches.back();
  }

  std::size_t best = 0;
  for (std::size_t c = 0; c < result.candidates.size(); ++c) {
    auto& cand = result.candidates[c];
    for (const Stimulus* s : scoring_set) {
      const Verdict v = classify(PromptSpec{base.name, cand.text, 0}, {}, *s, gateway, classify_options);
      const bool ok = is_violation(v) == s->unfair;
      cand.correct += ok;
      result.trace.emplace_back(CandidateScore{c, s->id, v, ok});
    }
    cand.scored = scoring_set.size();
    cand.accuracy = static_cast<double>(cand.correct) / static_cast<double>(cand.scored);
    if (cand.correct > result.candidates[best].correct) best = c;
  }
  result.best = result.candidates[best];
  return result;
}

void write_trace(const std::filesystem::path& dir, const CorrectionResult& result, const std::string& config_digest) {
  using Json = nlohmann::json;
  std::filesystem::create_directories(dir / "blobs");
  auto blob = [&](const std::string& text) {
    const auto digest = sha256_hex(text);
    const auto path = dir / "blobs" / (digest + ".txt");
    if (!std::filesystem::exists(path)) {
      std::ofstream out(path, std::ios::binary);
      out << text;
    }
    return digest;
  };

  std::ofstream out(dir / "trace.jsonl", std::ios::binary);
  if (!out) throw Error("cannot write trace in " + dir.string());
  jsonl::write(out, jsonl::meta_header("correction_trace", config_digest));
  for (const auto& event : result.trace) {
    Json rec = std::visit(
        [&](const auto& e) -> Json {
          using T = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<T, CorrectionStep>) {
            return {{"type", "step"},          {"batch", e.batch},
                    {"epoch", e.epoch},        {"sample_id", e.sample_id},
                    {"verdict", to_string(e.verdict)}, {"gold_unfair", e.gold_unfair},
                    {"error", to_string(e.error)},     {"prompt_before", blob(e.prompt_before)},
                    {"prompt_after", blob(e.prompt_after)}};
          } else if constexpr (std::is_same_v<T, MetaCall>) {
            return {{"type", "meta"},          {"batch", e.batch},
                    {"epoch", e.epoch},        {"sample_id", e.sample_id},
                    {"error", to_string(e.error)},     {"prompt_before", blob(e.prompt_before)},
                    {"response", blob(e.response)},    {"rejection", e.rejection},
                    {"strikes", e.strikes}};
          } else if constexpr (std::is_same_v<T, CandidateScore>) {
            return {{"type", "score"},
                    {"candidate", e.candidate},
                    {"candidate_prompt", blob(result.candidates.at(e.candidate).text)},
                    {"sample_id", e.sample_id},
                    {"verdict", to_string(e.verdict)},
                    {"correct", e.correct}};
          } else {
            return {{"type", "abort"}, {"batch", e.batch}, {"strikes", e.strikes}};
          }
        },
        event);
    jsonl::write(out, rec);
  }
  Json candidates = Json::array();
  for (const auto& c : result.candidates) {
    candidates.push_back({{"prompt", blob(c.text)},
                          {"accuracy", c.accuracy},
                          {"correct", c.correct},
                          {"scored", c.scored},
                          {"batch", c.batch},
                          {"epoch", c.epoch}});
  }
  jsonl::write(out, Json{{"type", "result"},
                         {"best", blob(result.best.text)},
                         {"accuracy", result.best.accuracy},
                         {"batches", result.batch_ids},
                         {"epochs_run", result.epochs_run},
                         {"candidates", candidates}});
}

}  // namespace fairscreen
