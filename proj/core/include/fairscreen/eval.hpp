#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairscreen/corpus.hpp"
#include "fairscreen/verdict.hpp"

namespace fairscreen {

struct PredictionRecord {
  std::string id;
  Verdict verdict = Verdict::kNoViolation;
  std::string method;
  std::optional<std::string> timestamp;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

// {"id", "verdict": "violation"|"no_violation", "method", "timestamp"?} per
// line, preceded by a "_meta" header line when config_digest is non-empty.
void write_predictions(std::ostream& out, std::span<const PredictionRecord> records,
                       const std::string& config_digest);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
std::vector<PredictionRecord> read_predictions(std::istream& in);

// Violation is the positive class.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Throws CoverageError unless preds name each gold id exactly once.
ConfusionCounts confusion(std::span<const Stimulus> gold, std::span<const PredictionRecord> preds);

// Exact fraction; a zero denominator reads as 0.
struct Ratio {
  std::size_t num = 0;
  std::size_t den = 0;

  double value() const noexcept { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }
  // Half-up to two decimals, computed in integers.
  std::string render() const;
};

struct MetricsReport {
  std::string method;
  std::string split;
  ConfusionCounts counts;
  Ratio precision;
  Ratio recall;
  Ratio f1;  // 2tp / (2tp + fp + fn), identical to 2pr / (p + r)
};

MetricsReport prf(const ConfusionCounts& counts, std::string method = {}, std::string split = {});

enum class Subcategory { kKsa, kEmotion };
std::string_view to_string(Subcategory category);

struct SubcategoryResult {
  std::string method;
  Subcategory category = Subcategory::kKsa;
  Ratio recall;
};

// Recall over the stimuli flagged with `category`, pooled across every gold
// stimulus given (both test sets). Throws CoverageError when a gold id has no
// prediction.
SubcategoryResult subcategory_recall(std::span<const Stimulus> gold, std::span<const PredictionRecord> preds,
                                     Subcategory category, std::string method = {});

struct RenderedReport {
  std::string text;
  std::string jsonl;
};

RenderedReport render_report(std::span<const MetricsReport> reports,
                             std::span<const SubcategoryResult> subcategories,
                             const std::string& config_digest = {});

}  // namespace fairscreen
