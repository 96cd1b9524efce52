#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fairscreen/corpus.hpp"
#include "fairscreen/gateway.hpp"
#include "fairscreen/prompting.hpp"

namespace fairscreen {

enum class ErrorKind { kNone, kFalsePositive, kFalseNegative };
std::string_view to_string(ErrorKind kind);

enum class CandidateScoring { kFinalBatch, kValidation };

struct CorrectionConfig {
  std::size_t batch_size = 5;  // samples per batch
  std::size_t batches = 2;
  std::size_t max_epochs = 3;
  std::uint64_t seed = 0;
  // batch_size * batches must fall in [budget_min, budget_max] unless
  // override_budget is set.
  std::size_t budget_min = 6;
  std::size_t budget_max = 20;
  bool override_budget = false;
  // Malformed revisions tolerated per batch before the batch is abandoned.
  int strike_limit = 2;
  CandidateScoring scoring = CandidateScoring::kFinalBatch;
  int meta_max_output_tokens = 1024;
  // Revisions longer than this multiple of the base body are rejected.
  double max_growth = 4.0;
};

// Throws ConfigError.
void validate_config(const CorrectionConfig& config);

struct CorrectionStep {
  std::string sample_id;
  Verdict verdict = Verdict::kNoViolation;
  bool gold_unfair = false;
  ErrorKind error = ErrorKind::kNone;
  std::string prompt_before;
  std::string prompt_after;
  std::size_t epoch = 0;
  std::size_t batch = 0;
};

// One call to the revision meta-prompt and what became of its answer.
struct MetaCall {
  std::string sample_id;
  ErrorKind error = ErrorKind::kNone;
  std::string prompt_before;
  std::string response;
  // Reason the revision was refused; empty when it was adopted.
  std::string rejection;
  int strikes = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;
};

struct CandidateScore {
  std::size_t candidate = 0;
  std::string sample_id;
  Verdict verdict = Verdict::kNoViolation;
  bool correct = false;
};

struct BatchAbort {
  std::size_t batch = 0;
  int strikes = 0;
};

using TraceEvent = std::variant<CorrectionStep, MetaCall, CandidateScore, BatchAbort>;

struct PromptCandidate {
  std::string text;
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t scored = 0;
  // -1 marks the base prompt.
  int batch = -1;
  int epoch = -1;
};

struct CorrectionResult {
  PromptCandidate best;
  std::vector<PromptCandidate> candidates;
  std::vector<TraceEvent> trace;
  std::vector<std::vector<std::string>> batch_ids;
  std::vector<std::size_t> epochs_run;
};

struct RevisionCheck {
  bool ok = true;
  std::string reason;
};

// Malformed when: empty, longer than max_growth x the base body, containing
// the training sample verbatim, or containing the classification suffix.
RevisionCheck validate_revision(std::string_view candidate, const PromptSpec& base,
                                std::string_view sample_text, double max_growth = 4.0);

// True iff the last two epochs produced identical verdict vectors; false with
// fewer than two epochs.
bool predictions_stable(std::span<const std::vector<Verdict>> history);

// The meta-call sent after a misclassification.
ChatExchange correction_exchange(std::string_view current_prompt, std::string_view sample_text,
                                 ErrorKind error, int max_output_tokens);

// Rewrites base.body on training errors, batch by batch, and returns the
// candidate scoring best on the final batch (or on `validation` when
// config.scoring says so). Sequential by construction.
CorrectionResult self_correct(const PromptSpec& base, std::span<const Stimulus> train,
                              const CorrectionConfig& config, Gateway& gateway,
                              std::span<const Stimulus> validation = {});

// trace.jsonl plus blobs/<sha256>.txt holding every distinct prompt text.
void write_trace(const std::filesystem::path& dir, const CorrectionResult& result,
                 const std::string& config_digest);

}  // namespace fairscreen
