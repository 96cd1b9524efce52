// One PASS/FAIL/SKIP line per criterion. Exit 0 when everything ran passes,
// 77 when the only non-pass is a skip, 1 otherwise.
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "cli.hpp"
#include "fairscreen/corpus.hpp"
#include "fairscreen/error.hpp"
#include "fairscreen/eval.hpp"
#include "fairscreen/selfcorrect.hpp"
#include "fairscreen/topics.hpp"
#include "scenarios.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace fairscreen;
namespace t = fairscreen::testing;

namespace {

constexpr int kSkip = 77;

enum class Outcome { kPass, kFail, kSkip };

struct Result {
  Outcome outcome = Outcome::kPass;
  std::string detail;
};

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failure_.empty()) failure_ = what;
  }
  bool failed() const { return !failure_.empty(); }
  const std::string& failure() const { return failure_; }

 private:
  std::string failure_;
};

Result finish(const Check& c, std::string pass_detail) {
  if (c.failed()) return {Outcome::kFail, c.failure()};
  return {Outcome::kPass, std::move(pass_detail)};
}

// --- dataset fidelity -------------------------------------------------------

std::optional<fs::path> release_path() {
  if (const char* env = std::getenv("FAIRSCREEN_RELEASE_DATA"); env != nullptr && *env != '\0') return fs::path(env);
  for (const char* candidate : {"data/release/corpus.jsonl", "data/release/dataset.csv"}) {
    if (fs::exists(candidate)) return fs::path(candidate);
  }
  return std::nullopt;
}

Result dataset_fidelity() {
  const auto path = release_path();
  if (!path || !fs::exists(*path)) {
    return {Outcome::kSkip, "released dataset not present (set FAIRSCREEN_RELEASE_DATA)"};
  }
  const auto adapter = path->extension() == ".csv" ? kReleaseCsvAdapter : kCanonicalAdapter;
  const auto stats = corpus_stats(load_corpus(*path, adapter));
  Check c;
  for (const auto& row : t::kTable1) {
    const auto* got = stats.row(row.kind);
    const TypeCounts want{row.total, row.unfair, row.ksa, row.emotion};
    c.expect(got != nullptr && *got == want,
             fmt::format("{} differs from {}/{}/{}/{}", ItemType(row.kind).display_name(), row.total, row.unfair,
                         row.ksa, row.emotion));
  }
  const auto& tot = t::kTable1Totals;
  c.expect(stats.totals == TypeCounts{tot.total, tot.unfair, tot.ksa, tot.emotion},
           fmt::format("totals {}/{}/{}/{}", stats.totals.total, stats.totals.unfair, stats.totals.ksa,
                       stats.totals.emotion));
  return finish(c, "all rows and totals match");
}

// --- split protocol ---------------------------------------------------------

Result split_protocol() {
  const auto corpus = t::table1_corpus(2024);
  Check c;
  for (std::uint64_t seed = 0; seed < 100 && !c.failed(); ++seed) {
    const auto a = make_splits(corpus, seed);
    std::map<Split, std::pair<std::size_t, std::size_t>> counts;  // (unfair, fair)
    std::size_t covered = 0;
    for (const auto& s : corpus.stimuli) {
      const auto it = a.by_id.find(s.id);
      if (it == a.by_id.end()) continue;
      ++covered;
      (s.unfair ? counts[it->second].first : counts[it->second].second)++;
      c.expect(s.item_type.out_of_domain() == (it->second == Split::kTestOutOfDomain),
               fmt::format("seed {}: {} in wrong domain split", seed, s.id));
    }
    const auto pair = [](std::size_t u, std::size_t f) { return std::pair{u, f}; };
    c.expect(covered == corpus.size() && a.by_id.size() == corpus.size(), fmt::format("seed {}: coverage", seed));
    c.expect(counts[Split::kValidation] == pair(24, 24), fmt::format("seed {}: validation not 24/24", seed));
    c.expect(counts[Split::kTestInDomain] == pair(24, 24), fmt::format("seed {}: in-domain test not 24/24", seed));
    const auto& ood = counts[Split::kTestOutOfDomain];
    c.expect(ood.first + ood.second == 66, fmt::format("seed {}: out-of-domain test not 66", seed));
    c.expect(counts[Split::kUnassigned] == pair(0, 0), fmt::format("seed {}: unassigned stimuli", seed));
    c.expect(counts[Split::kTrain].first + counts[Split::kTrain].second == 601 - 48 - 48 - 66,
             fmt::format("seed {}: train remainder", seed));
  }
  return finish(c, "100 seeds: 48 (24/24), 48 (24/24), 66, disjoint, covering");
}

// --- metric oracle ----------------------------------------------------------

// |num/den - h/100| <= 1/200, in integers so the inclusive bound is exact.
bool within_half_hundredth(const Ratio& r, std::int64_t h) {
  const auto num = static_cast<std::int64_t>(r.num), den = static_cast<std::int64_t>(r.den);
  return std::llabs(200 * num - 2 * h * den) <= den;
}

Result metric_oracle() {
  struct Row {
    ConfusionCounts counts;
    std::int64_t p, r, f;
  };
  const Row rows[] = {{{14, 2, 10, 22}, 88, 58, 70}, {{17, 3, 7, 21}, 85, 71, 77}};
  Check c;
  for (const auto& row : rows) {
    const auto m = prf(row.counts);
    const auto label = fmt::format("({},{},{},{})", row.counts.tp, row.counts.fp, row.counts.fn, row.counts.tn);
    const auto hundredths = [](std::int64_t h) { return fmt::format("{}.{:02}", h / 100, h % 100); };
    c.expect(within_half_hundredth(m.precision, row.p), label + " precision");
    c.expect(within_half_hundredth(m.recall, row.r), label + " recall");
    c.expect(within_half_hundredth(m.f1, row.f), label + " f1");
    c.expect(m.precision.render() == hundredths(row.p), label + " rendered precision");
    c.expect(m.recall.render() == hundredths(row.r), label + " rendered recall");
    c.expect(m.f1.render() == hundredths(row.f), label + " rendered f1");
  }
  return finish(c, "0.88/0.58/0.70 and 0.85/0.71/0.77 within 0.005");
}

// --- self-correction contract -----------------------------------------------

template <class T>
std::size_t count_events(const CorrectionResult& r) {
  std::size_t n = 0;
  for (const auto& e : r.trace) n += std::holds_alternative<T>(e);
  return n;
}

Result self_correction() {
  const auto root = t::fixture_dir();
  Check c;
  const auto base = t::scenario_base();

  // (i)
  const auto zero = t::replay_scenario(t::scenario_transcript(root, t::Scenario::kZeroError));
  c.expect(zero.best.text == base.body, "(i) zero-error run changed the prompt");
  c.expect(zero.epochs_run == std::vector<std::size_t>{1}, "(i) zero-error run did not stop after one epoch");
  c.expect(count_events<MetaCall>(zero) == 0, "(i) zero-error run issued a meta-call");

  // (ii)
  const auto fn_path = t::scenario_transcript(root, t::Scenario::kSingleFalseNegative);
  const auto fn = t::replay_scenario(fn_path);
  c.expect(count_events<MetaCall>(fn) == 1, "(ii) expected exactly one meta-call");
  std::string injury;
  for (const auto& s : t::scenario_train()) {
    if (s.id == "sc-1") injury = s.text;
  }
  const auto meta = correction_exchange(base.body, injury, ErrorKind::kFalseNegative,
                                        t::scenario_config().meta_max_output_tokens);
  std::string instruction(catalog::asset("correction_false_negative"));
  while (!instruction.empty() && (instruction.back() == '\n' || instruction.back() == ' ')) instruction.pop_back();
  c.expect(meta.user_text.find(instruction) != std::string::npos, "(ii) meta-call lacks the false-negative instruction");
  std::size_t meta_records = 0;
  {
    std::istringstream in(t::read_file(fn_path));
    std::string line;
    const auto key = exchange_key(meta);
    while (std::getline(in, line)) meta_records += nlohmann::json::parse(line).at("key") == key;
  }
  c.expect(meta_records == 1, "(ii) recorded session does not hold exactly one such meta-call");

  // (iii)
  const auto bad = t::replay_scenario(t::scenario_transcript(root, t::Scenario::kMalformedRevision));
  bool struck = false;
  for (const auto& e : bad.trace) {
    if (const auto* m = std::get_if<MetaCall>(&e)) struck = struck || (!m->rejection.empty() && m->strikes >= 1);
  }
  c.expect(struck, "(iii) malformed revision recorded no strike");
  c.expect(bad.best.text == base.body && bad.candidates.size() == 1, "(iii) malformed revision was not rolled back");

  // (iv)
  for (std::size_t budget : {5, 21}) {
    CorrectionConfig cfg;
    cfg.batch_size = budget;
    cfg.batches = 1;
    bool rejected = false;
    try {
      validate_config(cfg);
    } catch (const ConfigError&) {
      rejected = true;
    }
    c.expect(rejected, fmt::format("(iv) budget {} accepted without override", budget));
    cfg.override_budget = true;
    try {
      validate_config(cfg);
    } catch (const ConfigError&) {
      c.expect(false, fmt::format("(iv) budget {} rejected despite override", budget));
    }
  }
  for (std::size_t budget : {6, 20}) {
    CorrectionConfig cfg;
    cfg.batch_size = budget;
    cfg.batches = 1;
    try {
      validate_config(cfg);
    } catch (const ConfigError&) {
      c.expect(false, fmt::format("(iv) budget {} rejected", budget));
    }
  }

  // Determinism.
  const auto again = t::replay_scenario(fn_path);
  c.expect(again.best.text == fn.best.text && again.trace.size() == fn.trace.size(), "replay is not deterministic");
  return finish(c, "(i)-(iv) hold under replay");
}

// --- topic oracle -----------------------------------------------------------

int exhaustive_nearest(const TopicModel& model, const Vector& v) {
  int best = -1;
  double best_d = 0.0;
  for (const auto& cl : model.clusters) {
    double dot = 0.0, nc = 0.0, nv = 0.0;
    for (std::size_t d = 0; d < v.size(); ++d) {
      dot += v[d] * cl.centroid[d];
      nc += cl.centroid[d] * cl.centroid[d];
      nv += v[d] * v[d];
    }
    const double dist = 1.0 - dot / std::sqrt(nc * nv);
    if (best < 0 || dist < best_d || (dist == best_d && cl.id < best)) {
      best = cl.id;
      best_d = dist;
    }
  }
  return best;
}

Result topic_oracle() {
  Check c;
  const auto fams = t::topic_families(3);
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 20 && !c.failed(); ++seed) {
    std::vector<std::string> texts;
    std::uint64_t state = seed * 7919 + 1;
    for (std::size_t i = 0; i < 60; ++i) texts.push_back(t::family_document(fams[i % 3], state));
    HashingEmbedder embedder(256);
    TopicParams params;
    params.seed = seed;
    auto model = fit_topics(texts, embedder, params);
    c.expect(!model.clusters.empty(), fmt::format("seed {}: no clusters", seed));
    for (const auto& cl : model.clusters) {
      c.expect(cl.support >= 5, fmt::format("seed {}: retained cluster below support 5", seed));
      model.labels[cl.id] = cl.id == 0 ? TopicLabel::kRestricted : TopicLabel::kAcceptable;
    }
    for (int i = 0; i < 30; ++i) {
      const auto doc = t::family_document(fams[static_cast<std::size_t>(i) % 3], state);
      const int oracle = exhaustive_nearest(model, embedder.embed(doc));
      const auto want = verdict_of(model.labels.at(oracle) == TopicLabel::kRestricted);
      c.expect(predict_topic(model, embedder, doc) == want, fmt::format("seed {}: held-out mismatch", seed));
      ++checked;
    }
  }

  // Support filtering by construction: duplicate groups always form density clusters,
  // so retention is decided by min_support alone.
  for (std::size_t extra : {5U, 4U}) {
    std::uint64_t state = 3;
    const auto a = t::family_document(fams[0], state);
    const auto b = t::family_document(fams[1], state);
    const auto small = t::family_document(fams[2], state);
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < 20; ++i) {
      texts.push_back(a);
      texts.push_back(b);
    }
    for (std::size_t i = 0; i < extra; ++i) texts.push_back(small);
    HashingEmbedder embedder(256);
    TopicParams params;
    params.pipeline = ClusterPipeline::kDensity;
    params.min_cluster_size = 3;
    params.min_samples = 3;
    Points points;
    for (const auto& text : texts) points.push_back(embedder.embed(text));
    const auto labels = DensityClusterer(3, 3).cluster(points, 0);
    c.expect(labels.back() != -1, fmt::format("{} duplicates did not form a density cluster", extra));
    const auto model = fit_topics(texts, embedder, params);
    const std::size_t want = extra >= 5 ? 3 : 2;
    c.expect(model.clusters.size() == want,
             fmt::format("{} extra documents gave {} clusters, want {}", extra, model.clusters.size(), want));
    for (const auto& cl : model.clusters) c.expect(cl.support >= 5, "retained cluster below support 5");
  }
  return finish(c, fmt::format("{} held-out predictions over 20 seeds match; support filter holds", checked));
}

// --- replay determinism -----------------------------------------------------

struct Session {
  std::string predictions_validation;
  std::string predictions_test;
  std::string report_text;
  std::string report_jsonl;
};

std::optional<Session> replay_session(const fs::path& out, bool& transport_used, std::string& error) {
  const auto fixture = t::fixture_dir() / "replay";
  const cli::TransportFactory factory = [&transport_used]() -> std::unique_ptr<Transport> {
    transport_used = true;
    return nullptr;
  };
  auto run = [&](std::vector<std::string> args) {
    std::ostringstream o, e;
    const int code = cli::run_command(args, o, e, factory);
    if (code != 0) error = e.str();
    return code == 0;
  };
  const auto corpus = (fixture / "corpus.jsonl").string();
  const auto transcript = (fixture / "transcript.jsonl").string();
  for (const char* split : {"validation", "test"}) {
    if (!run({"classify", "--corpus", corpus, "--split", split, "--engine", "prompt", "--prompt", "generic_short",
              "--transcript", transcript, "--out", (out / split).string()})) {
      return std::nullopt;
    }
  }
  if (!run({"evaluate", "--corpus", corpus, "--predictions", (out / "validation" / "predictions.jsonl").string(),
            "--predictions", (out / "test" / "predictions.jsonl").string(), "--out", (out / "eval").string()})) {
    return std::nullopt;
  }
  return Session{t::read_file(out / "validation" / "predictions.jsonl"),
                 t::read_file(out / "test" / "predictions.jsonl"), t::read_file(out / "eval" / "report.txt"),
                 t::read_file(out / "eval" / "report.jsonl")};
}

Result replay_determinism() {
  const t::TempDir dir;
  bool transport_used = false;
  std::string error;
  const auto a = replay_session(dir / "a", transport_used, error);
  const auto b = a ? replay_session(dir / "b", transport_used, error) : std::nullopt;
  Check c;
  c.expect(a && b, "replayed session failed: " + error);
  if (a && b) {
    c.expect(a->predictions_validation == b->predictions_validation, "validation predictions differ");
    c.expect(a->predictions_test == b->predictions_test, "test predictions differ");
    c.expect(a->report_text == b->report_text, "text reports differ");
    c.expect(a->report_jsonl == b->report_jsonl, "jsonl reports differ");
    c.expect(!a->report_text.empty(), "empty report");
  }
  c.expect(!transport_used, "replay constructed a network transport");
  return finish(c, "predictions and reports byte-identical; no transport used");
}

struct Criterion {
  const char* name;
  double limit_seconds;
  std::function<Result()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> kAll = {
      {"dataset_fidelity", 1.0, dataset_fidelity},   {"split_protocol", 5.0, split_protocol},
      {"metric_oracle", 1.0, metric_oracle},         {"self_correction", 10.0, self_correction},
      {"topic_oracle", 30.0, topic_oracle},          {"replay_determinism", 30.0, replay_determinism},
  };
  return kAll;
}

Outcome run_one(const Criterion& c) {
  const auto start = std::chrono::steady_clock::now();
  Result v;
  try {
    v = c.run();
  } catch (const std::exception& e) {
    v = {Outcome::kFail, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (v.outcome == Outcome::kPass && secs > c.limit_seconds) {
    v = {Outcome::kFail, fmt::format("took {:.2f}s, limit {:.0f}s", secs, c.limit_seconds)};
  }
  const char* tag = v.outcome == Outcome::kPass ? "PASS" : v.outcome == Outcome::kSkip ? "SKIP" : "FAIL";
  std::cout << fmt::format("{} {} ({:.3f}s): {}", tag, c.name, secs, v.detail) << std::endl;
  return v.outcome;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<const Criterion*> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string want = argv[i];
    const Criterion* found = nullptr;
    for (const auto& c : criteria()) {
      if (want == c.name) found = &c;
    }
    if (found == nullptr) {
      std::cerr << "unknown criterion " << want << "\n";
      return 2;
    }
    selected.push_back(found);
  }
  if (selected.empty()) {
    for (const auto& c : criteria()) selected.push_back(&c);
  }
  bool failed = false, skipped = false;
  for (const auto* c : selected) {
    const auto o = run_one(*c);
    failed = failed || o == Outcome::kFail;
    skipped = skipped || o == Outcome::kSkip;
  }
  if (failed) return 1;
  return skipped ? kSkip : 0;
}
