#pragma once

#include <string_view>

namespace fairscreen {

enum class Verdict { kViolation, kNoViolation };
std::string_view to_string(Verdict verdict);
Verdict verdict_from_string(std::string_view name);
inline bool is_violation(Verdict v) { return v == Verdict::kViolation; }
inline Verdict verdict_of(bool violation) {
  return violation ? Verdict::kViolation : Verdict::kNoViolation;
}

// trim -> first whitespace-delimited token -> strip trailing punctuation ->
// lowercase. "true" is a violation, "false" is not; anything else throws
// VerdictParseError carrying the raw text.
Verdict parse_verdict(std::string_view raw);

}  // namespace fairscreen
