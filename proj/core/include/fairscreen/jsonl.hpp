#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

#include <nlohmann/json.hpp>

namespace fairscreen::jsonl {

using Json = nlohmann::json;

// Calls fn(record, line_number) for every non-blank line. Lines whose object
// carries a "_meta" key are artifact headers and are skipped. Malformed JSON
// throws CorpusError naming the line.
void for_each(std::istream& in, const std::function<void(const Json&, std::size_t)>& fn);
void for_each(const std::filesystem::path& path,
              const std::function<void(const Json&, std::size_t)>& fn);

// Compact single-line dump with a trailing newline.
void write(std::ostream& out, const Json& record);

// Header record naming what produced an artifact.
Json meta_header(const std::string& kind, const std::string& config_digest);

}  // namespace fairscreen::jsonl
