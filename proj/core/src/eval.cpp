#include "fairscreen/eval.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include <fmt/format.h>

#include "fairscreen/error.hpp"
#include "fairscreen/jsonl.hpp"

namespace fairscreen {

namespace {

using Json = nlohmann::json;

PredictionRecord record_from_json(const Json& j, std::size_t line_no) {
  try {
    PredictionRecord r;
    r.id = j.at("id").get<std::string>();
    r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    r.method = j.at("method").get<std::string>();
    if (auto it = j.find("timestamp"); it != j.end() && !it->is_null()) r.timestamp = it->get<std::string>();
    if (r.id.empty()) throw CorpusError("empty id");
    return r;
  } catch (const Json::exception& e) {
    throw CorpusError(fmt::format("line {}: malformed prediction record ({})", line_no, e.what()));
  } catch (const Error& e) {
    throw CorpusError(fmt::format("line {}: malformed prediction record ({})", line_no, e.what()));
  }
}

// Verdict per gold id; throws CoverageError on any mismatch.
std::vector<Verdict> aligned_verdicts(std::span<const Stimulus> gold, std::span<const PredictionRecord> preds) {
  std::map<std::string_view, const PredictionRecord*> by_id;
  std::set<std::string> duplicated;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.id, &p).second) duplicated.insert(p.id);
  }
  std::vector<std::string> missing, extra;
  std::set<std::string_view> gold_ids;
  std::vector<Verdict> out;
  out.reserve(gold.size());
  for (const auto& s : gold) {
    gold_ids.insert(s.id);
    auto it = by_id.find(s.id);
    if (it == by_id.end()) {
      missing.push_back(s.id);
    } else {
      out.push_back(it->second->verdict);
    }
  }
  for (const auto& [id, _] : by_id) {
    if (!gold_ids.contains(id)) extra.emplace_back(id);
  }
  if (!missing.empty() || !extra.empty() || !duplicated.empty()) {
    throw CoverageError(std::move(missing), std::move(extra), {duplicated.begin(), duplicated.end()});
  }
  return out;
}

}  // namespace

void write_predictions(std::ostream& out, std::span<const PredictionRecord> records,
                       const std::string& config_digest) {
  if (!config_digest.empty()) jsonl::write(out, jsonl::meta_header("predictions", config_digest));
  for (const auto& r : records) {
    Json j{{"id", r.id}, {"verdict", to_string(r.verdict)}, {"method", r.method}};
    if (r.timestamp) j["timestamp"] = *r.timestamp;
    jsonl::write(out, j);
  }
}

std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::vector<PredictionRecord> out;
  jsonl::for_each(in, [&](const Json& j, std::size_t line_no) { out.push_back(record_from_json(j, line_no)); });
  return out;
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read predictions " + path.string());
  try {
    return read_predictions(in);
  } catch (const CorpusError& e) {
    throw CorpusError(path.string() + ": " + e.what());
  }
}

ConfusionCounts confusion(std::span<const Stimulus> gold, std::span<const PredictionRecord> preds) {
  const auto verdicts = aligned_verdicts(gold, preds);
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool flagged = is_violation(verdicts[i]);
    if (gold[i].unfair) {
      ++(flagged ? c.tp : c.fn);
    } else {
      ++(flagged ? c.fp : c.tn);
    }
  }
  return c;
}

std::string Ratio::render() const {
  if (den == 0) return "0.00";
  // round(100 * num / den) half-up, exactly.
  const std::size_t hundredths = (200 * num + den) / (2 * den);
  return fmt::format("{}.{:02}", hundredths / 100, hundredths % 100);
}

MetricsReport prf(const ConfusionCounts& counts, std::string method, std::string split) {
  MetricsReport r;
  r.method = std::move(method);
  r.split = std::move(split);
  r.counts = counts;
  r.precision = {counts.tp, counts.tp + counts.fp};
  r.recall = {counts.tp, counts.tp + counts.fn};
  r.f1 = {2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn};
  return r;
}

std::string_view to_string(Subcategory category) { return category == Subcategory::kKsa ? "ksa" : "emotion"; }

SubcategoryResult subcategory_recall(std::span<const Stimulus> gold, std::span<const PredictionRecord> preds,
                                     Subcategory category, std::string method) {
  const auto verdicts = aligned_verdicts(gold, preds);
  SubcategoryResult r;
  r.method = std::move(method);
  r.category = category;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool in_category = category == Subcategory::kKsa ? gold[i].ksa : gold[i].emotion;
    if (!in_category) continue;
    ++r.recall.den;
    if (is_violation(verdicts[i])) ++r.recall.num;
  }
  return r;
}

RenderedReport render_report(std::span<const MetricsReport> reports,
                             std::span<const SubcategoryResult> subcategories, const std::string& config_digest) {
  RenderedReport out;
  if (reports.empty() && subcategories.empty()) return out;

  std::string jsonl_text;
  auto emit = [&](const Json& j) { jsonl_text += j.dump() + '\n'; };
  if (!config_digest.empty()) emit(jsonl::meta_header("report", config_digest));

  std::size_t method_width = 6, split_width = 5;
  for (const auto& r : reports) {
    method_width = std::max(method_width, r.method.size());
    split_width = std::max(split_width, r.split.size());
  }
  for (const auto& s : subcategories) method_width = std::max(method_width, s.method.size());

  std::string& text = out.text;
  if (!reports.empty()) {
    text += fmt::format("{:<{}}  {:<{}}  {:>4}  {:>4}  {:>4}  {:>4}  {:>4}  {:>9}  {:>6}  {:>4}\n", "method",
                        method_width, "split", split_width, "n", "tp", "fp", "fn", "tn", "precision", "recall", "f1");
    for (const auto& r : reports) {
      const auto& c = r.counts;
      text += fmt::format("{:<{}}  {:<{}}  {:>4}  {:>4}  {:>4}  {:>4}  {:>4}  {:>9}  {:>6}  {:>4}\n", r.method,
                          method_width, r.split, split_width, c.total(), c.tp, c.fp, c.fn, c.tn,
                          r.precision.render(), r.recall.render(), r.f1.render());
      emit({{"type", "metrics"},
            {"method", r.method},
            {"split", r.split},
            {"tp", c.tp},
            {"fp", c.fp},
            {"fn", c.fn},
            {"tn", c.tn},
            {"precision", r.precision.render()},
            {"recall", r.recall.render()},
            {"f1", r.f1.render()},
            {"precision_exact", r.precision.value()},
            {"recall_exact", r.recall.value()},
            {"f1_exact", r.f1.value()}});
    }
  }
  if (!subcategories.empty()) {
    if (!text.empty()) text += '\n';
    text += fmt::format("{:<{}}  {:<8}  {:>7}  {:>6}\n", "method", method_width, "category", "flagged", "recall");
    for (const auto& s : subcategories) {
      text += fmt::format("{:<{}}  {:<8}  {:>7}  {:>6}\n", s.method, method_width, to_string(s.category),
                          fmt::format("{}/{}", s.recall.num, s.recall.den), s.recall.render());
      emit({{"type", "subcategory_recall"},
            {"method", s.method},
            {"category", to_string(s.category)},
            {"caught", s.recall.num},
            {"total", s.recall.den},
            {"recall", s.recall.render()},
            {"recall_exact", s.recall.value()}});
    }
  }
  out.jsonl = std::move(jsonl_text);
  return out;
}

}  // namespace fairscreen
