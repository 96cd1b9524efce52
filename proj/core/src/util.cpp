#include <array>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "fairscreen/digest.hpp"
#include "fairscreen/error.hpp"
#include "fairscreen/jsonl.hpp"
#include "fairscreen/rng.hpp"

namespace fairscreen {

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < 10; ++i) {
    if (i) out += ", ";
    out += ids[i];
  }
  if (ids.size() > 10) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

std::string coverage_message(const std::vector<std::string>& missing, const std::vector<std::string>& extra,
                             const std::vector<std::string>& duplicated) {
  std::string msg = "prediction coverage mismatch";
  if (!missing.empty()) msg += "; missing: " + join_ids(missing);
  if (!extra.empty()) msg += "; extra: " + join_ids(extra);
  if (!duplicated.empty()) msg += "; duplicated: " + join_ids(duplicated);
  return msg;
}

}  // namespace

CoverageError::CoverageError(std::vector<std::string> missing, std::vector<std::string> extra,
                             std::vector<std::string> duplicated)
    : Error(coverage_message(missing, extra, duplicated)),
      missing_(std::move(missing)),
      extra_(std::move(extra)),
      duplicated_(std::move(duplicated)) {}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw Error("Rng::below: zero bound");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

double Rng::unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::vector<std::size_t> Rng::sample_indices(std::size_t n, std::size_t k) {
  if (k > n) throw Error("Rng::sample_indices: k exceeds population");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

namespace jsonl {

void for_each(std::istream& in, const std::function<void(const Json&, std::size_t)>& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Json record;
    try {
      record = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw CorpusError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    if (record.is_object() && record.contains("_meta")) continue;
    fn(record, line_no);
  }
}

void for_each(const std::filesystem::path& path, const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read " + path.string());
  for_each(in, fn);
}

void write(std::ostream& out, const Json& record) { out << record.dump() << '\n'; }

Json meta_header(const std::string& kind, const std::string& config_digest) {
  return Json{{"_meta", Json{{"kind", kind}, {"config_digest", config_digest}}}};
}

}  // namespace jsonl
}  // namespace fairscreen
