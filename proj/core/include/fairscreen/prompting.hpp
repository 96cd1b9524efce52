#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairscreen/corpus.hpp"
#include "fairscreen/gateway.hpp"
#include "fairscreen/verdict.hpp"

namespace fairscreen {

// Instruction appended after the stimulus slot of every classification prompt.
std::string_view classification_suffix();

struct PromptSpec {
  // One of the five catalog names, or a free-form name for revised prompts.
  std::string name;
  std::string body;
  // Size reported for the catalog prompts; 0 for derived prompts.
  int nominal_token_count = 0;
};

namespace catalog {

inline constexpr std::string_view kGenericShort = "generic_short";
inline constexpr std::string_view kGenericLong = "generic_long";
inline constexpr std::string_view kGuidelineShort = "guideline_short";
inline constexpr std::string_view kGuidelineLong = "guideline_long";
inline constexpr std::string_view kDataDriven = "data_driven";

std::vector<std::string> base_prompt_names();
PromptSpec base_prompt(std::string_view name);

// Raw asset text by file stem (base prompts plus the correction framing).
std::string_view asset(std::string_view stem);

// guideline_long is classifiable but never fed to the correction loop.
bool optimizable(std::string_view name);

// A catalog file holds the prompt body followed by one newline.
PromptSpec load_prompt_file(const std::filesystem::path& path);
void write_prompt_file(const std::filesystem::path& path, const PromptSpec& spec);

}  // namespace catalog

struct FewShotExample {
  std::string id;
  std::string stimulus_text;
  Verdict label = Verdict::kNoViolation;
  std::string rationale;
};

struct TextRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
};

// full_text = body | examples | stimulus slot | suffix. Each range after the
// body starts with its blank-line separator, so the four ranges partition
// full_text exactly; `stimulus_text` locates the raw stimulus inside the slot.
struct AssembledPrompt {
  std::string full_text;
  TextRange body;
  TextRange examples;
  TextRange stimulus_slot;
  TextRange stimulus_text;
  TextRange suffix;
};

// Layout: body, blank line, example blocks (positive/negative alternating,
// positive first), blank line, "Text: <stimulus>", blank line, suffix.
// Throws ConfigError when the examples are not balanced between the classes.
AssembledPrompt assemble(const PromptSpec& spec, std::span<const FewShotExample> examples,
                         std::string_view stimulus_text);

// n positives and n negatives drawn uniformly without replacement. Rationales
// come from the stimulus itself, else from `rationales` (id -> text).
std::vector<FewShotExample> sample_fewshot(std::span<const Stimulus> train, std::size_t n,
                                           std::uint64_t seed,
                                           const std::map<std::string, std::string>& rationales = {});

enum class ParseErrorPolicy { kFail, kPositive, kNegative };
std::string_view to_string(ParseErrorPolicy policy);
ParseErrorPolicy parse_error_policy_from_string(std::string_view name);

struct ClassifyOptions {
  ParseErrorPolicy on_parse_error = ParseErrorPolicy::kFail;
  int max_output_tokens = 16;
};

ChatExchange classification_exchange(const AssembledPrompt& prompt, const ClassifyOptions& options);

Verdict classify(const PromptSpec& spec, std::span<const FewShotExample> examples,
                 const Stimulus& stimulus, Gateway& gateway, const ClassifyOptions& options = {});

}  // namespace fairscreen
