#include "fairscreen/prompting.hpp"

#include <fstream>
#include <sstream>

#include "fairscreen/error.hpp"
#include "fairscreen/gateway.hpp"
#include "fairscreen/rng.hpp"

namespace fairscreen {

namespace detail {
const std::map<std::string, std::string_view, std::less<>>& prompt_assets();
}

namespace {

std::string_view strip_trailing_newlines(std::string_view s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct BaseEntry {
  std::string_view name;
  int tokens;
};

constexpr BaseEntry kBase[] = {
    {catalog::kGenericShort, 53},   {catalog::kGenericLong, 191}, {catalog::kGuidelineShort, 197},
    {catalog::kGuidelineLong, 1081}, {catalog::kDataDriven, 142},
};

}  // namespace

std::string_view classification_suffix() { return strip_trailing_newlines(catalog::asset("suffix")); }

namespace catalog {

std::string_view asset(std::string_view stem) {
  const auto& assets = detail::prompt_assets();
  auto it = assets.find(stem);
  if (it == assets.end()) throw ConfigError("no prompt asset named \"" + std::string(stem) + "\"");
  return it->second;
}

std::vector<std::string> base_prompt_names() {
  std::vector<std::string> out;
  for (const auto& e : kBase) out.emplace_back(e.name);
  return out;
}

PromptSpec base_prompt(std::string_view name) {
  for (const auto& e : kBase) {
    if (e.name == name) return {std::string(name), std::string(strip_trailing_newlines(asset(name))), e.tokens};
  }
  throw ConfigError("unknown base prompt \"" + std::string(name) + "\"");
}

bool optimizable(std::string_view name) { return name != kGuidelineLong; }

PromptSpec load_prompt_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read prompt file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string content = ss.str();
  const auto body = strip_trailing_newlines(content);
  if (body.empty()) throw ConfigError("prompt file " + path.string() + " is empty");
  return {path.stem().string(), std::string(body), 0};
}

void write_prompt_file(const std::filesystem::path& path, const PromptSpec& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write prompt file " + path.string());
  out << spec.body << '\n';
}

}  // namespace catalog

AssembledPrompt assemble(const PromptSpec& spec, std::span<const FewShotExample> examples,
                         std::string_view stimulus_text) {
  std::vector<const FewShotExample*> positives, negatives;
  for (const auto& ex : examples) (is_violation(ex.label) ? positives : negatives).push_back(&ex);
  if (positives.size() != negatives.size()) {
    throw ConfigError("unbalanced few-shot examples: " + std::to_string(positives.size()) + " positive, " +
                      std::to_string(negatives.size()) + " negative");
  }

  AssembledPrompt out;
  std::string& text = out.full_text;
  text = spec.body;
  out.body = {0, text.size()};

  out.examples.begin = text.size();
  auto block = [&](const FewShotExample& ex) {
    text += "\n\nText: ";
    text += ex.stimulus_text;
    text += "\nViolation: ";
    text += is_violation(ex.label) ? "True" : "False";
    text += "\nReason: ";
    text += ex.rationale;
  };
  for (std::size_t i = 0; i < positives.size(); ++i) {
    block(*positives[i]);
    block(*negatives[i]);
  }
  out.examples.end = text.size();

  out.stimulus_slot.begin = text.size();
  text += "\n\nText: ";
  out.stimulus_text.begin = text.size();
  text += stimulus_text;
  out.stimulus_text.end = text.size();
  out.stimulus_slot.end = text.size();

  out.suffix.begin = text.size();
  text += "\n\n";
  text += classification_suffix();
  out.suffix.end = text.size();
  return out;
}

std::vector<FewShotExample> sample_fewshot(std::span<const Stimulus> train, std::size_t n, std::uint64_t seed,
                                           const std::map<std::string, std::string>& rationales) {
  if (n == 0) return {};
  auto rationale_of = [&](const Stimulus& s) -> std::optional<std::string> {
    if (s.rationale && !s.rationale->empty()) return s.rationale;
    if (auto it = rationales.find(s.id); it != rationales.end() && !it->second.empty()) return it->second;
    return std::nullopt;
  };

  std::vector<FewShotExample> pools[2];  // [0] positive, [1] negative
  std::size_t class_total[2] = {0, 0};
  for (const auto& s : train) {
    const int cls = s.unfair ? 0 : 1;
    ++class_total[cls];
    if (auto r = rationale_of(s)) pools[cls].push_back({s.id, s.text, verdict_of(s.unfair), std::move(*r)});
  }
  for (int cls : {0, 1}) {
    const char* name = cls == 0 ? "unfair" : "fair";
    if (class_total[cls] < n) {
      throw CorpusError("insufficient samples: need " + std::to_string(n) + " " + name + " training stimuli, found " +
                        std::to_string(class_total[cls]));
    }
    if (pools[cls].size() < n) {
      throw CorpusError("missing rationales: only " + std::to_string(pools[cls].size()) + " of " +
                        std::to_string(class_total[cls]) + " " + name + " training stimuli have one");
    }
  }

  Rng rng(seed);
  const auto pos = rng.sample_indices(pools[0].size(), n);
  const auto neg = rng.sample_indices(pools[1].size(), n);
  std::vector<FewShotExample> out;
  out.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(pools[0][pos[i]]);
    out.push_back(pools[1][neg[i]]);
  }
  return out;
}

std::string_view to_string(ParseErrorPolicy policy) {
  switch (policy) {
    case ParseErrorPolicy::kFail: return "fail";
    case ParseErrorPolicy::kPositive: return "positive";
    case ParseErrorPolicy::kNegative: return "negative";
  }
  return "fail";
}

ParseErrorPolicy parse_error_policy_from_string(std::string_view name) {
  if (name == "fail") return ParseErrorPolicy::kFail;
  if (name == "positive") return ParseErrorPolicy::kPositive;
  if (name == "negative") return ParseErrorPolicy::kNegative;
  throw ConfigError("unknown parse-error policy \"" + std::string(name) + "\"");
}

ChatExchange classification_exchange(const AssembledPrompt& prompt, const ClassifyOptions& options) {
  return ChatExchange{{}, prompt.full_text, 0.0, options.max_output_tokens};
}

Verdict classify(const PromptSpec& spec, std::span<const FewShotExample> examples, const Stimulus& stimulus,
                 Gateway& gateway, const ClassifyOptions& options) {
  const auto prompt = assemble(spec, examples, stimulus.text);
  const std::string raw = gateway.complete(classification_exchange(prompt, options));
  try {
    return parse_verdict(raw);
  } catch (const VerdictParseError& e) {
    switch (options.on_parse_error) {
      case ParseErrorPolicy::kPositive: return Verdict::kViolation;
      case ParseErrorPolicy::kNegative: return Verdict::kNoViolation;
      case ParseErrorPolicy::kFail: break;
    }
    throw ClassificationError(stimulus.id, e);
  }
}

}  // namespace fairscreen
