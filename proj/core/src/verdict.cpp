#include "fairscreen/verdict.hpp"

#include <cctype>
#include <string>

#include "fairscreen/error.hpp"

namespace fairscreen {

std::string_view to_string(Verdict verdict) {
  return verdict == Verdict::kViolation ? "violation" : "no_violation";
}

Verdict verdict_from_string(std::string_view name) {
  if (name == "violation") return Verdict::kViolation;
  if (name == "no_violation") return Verdict::kNoViolation;
  throw Error("unknown verdict \"" + std::string(name) + "\"");
}

Verdict parse_verdict(std::string_view raw) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  std::size_t b = 0;
  while (b < raw.size() && is_space(raw[b])) ++b;
  std::size_t e = b;
  while (e < raw.size() && !is_space(raw[e])) ++e;
  std::string token(raw.substr(b, e - b));
  while (!token.empty() && std::ispunct(static_cast<unsigned char>(token.back()))) token.pop_back();
  for (char& c : token) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (token == "true") return Verdict::kViolation;
  if (token == "false") return Verdict::kNoViolation;
  throw VerdictParseError(std::string(raw));
}

}  // namespace fairscreen
