#include "fairscreen/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "fairscreen/error.hpp"
#include "fairscreen/jsonl.hpp"
#include "fairscreen/rng.hpp"

namespace fairscreen {

namespace {

using Kind = ItemType::Kind;
using jsonl::Json;

struct KindNames {
  Kind kind;
  const char* name;
  const char* display;
};

constexpr KindNames kKindNames[] = {
    {Kind::kReadTextAloud, "read_text_aloud", "Read a Text Aloud"},
    {Kind::kTalks, "talks", "Talks"},
    {Kind::kTextCompletion, "text_completion", "Text completion"},
    {Kind::kRespondToQuestions, "respond_to_questions", "Respond to Questions Using Information Provided"},
    {Kind::kConversations, "conversations", "*Conversations"},
    {Kind::kRespondToWrittenRequest, "respond_to_written_request", "*Respond to a Written Request"},
};

// Lowercase, every run of non-alphanumerics collapsed to one underscore.
std::string slug(std::string_view s) {
  std::string out;
  bool gap = false;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      if (gap && !out.empty()) out.push_back('_');
      out.push_back(static_cast<char>(std::tolower(c)));
      gap = false;
    } else {
      gap = true;
    }
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

ItemType ItemType::from_name(std::string_view name) {
  const std::string key = slug(name);
  for (const auto& k : kKindNames) {
    if (key == k.name || key == slug(k.display)) return ItemType(k.kind);
  }
  // Release spellings seen in item-bank exports.
  static const std::map<std::string, Kind> kAliases = {
      {"read_aloud", Kind::kReadTextAloud},
      {"read_a_text_aloud", Kind::kReadTextAloud},
      {"talk", Kind::kTalks},
      {"completion", Kind::kTextCompletion},
      {"respond_to_questions_using_information_provided", Kind::kRespondToQuestions},
      {"respond_to_questions_using_info_provided", Kind::kRespondToQuestions},
      {"conversation", Kind::kConversations},
      {"respond_to_a_written_request", Kind::kRespondToWrittenRequest},
      {"written_request", Kind::kRespondToWrittenRequest},
  };
  if (auto it = kAliases.find(key); it != kAliases.end()) return ItemType(it->second);
  ItemType other(Kind::kOther);
  other.other_ = key.empty() ? std::string(name) : key;
  return other;
}

std::string ItemType::name() const {
  for (const auto& k : kKindNames) {
    if (k.kind == kind_) return k.name;
  }
  return other_;
}

std::string ItemType::display_name() const {
  for (const auto& k : kKindNames) {
    if (k.kind == kind_) return k.display;
  }
  return other_;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kUnassigned: return "unassigned";
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTestInDomain: return "test_in_domain";
    case Split::kTestOutOfDomain: return "test_out_of_domain";
  }
  return "unassigned";
}

Split split_from_string(std::string_view name) {
  for (Split s : {Split::kUnassigned, Split::kTrain, Split::kValidation, Split::kTestInDomain,
                  Split::kTestOutOfDomain}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown split \"" + std::string(name) + "\"");
}

std::optional<std::string> check_stimulus(const Stimulus& s) {
  if (s.id.empty()) return "empty id";
  if (s.text.empty()) return "empty text";
  if (!s.unfair && (s.ksa || s.emotion)) return "ksa/emotion flagged on a stimulus without a fairness issue";
  if (s.unfair && !s.ksa && !s.emotion) return "fairness issue without a ksa or emotion category";
  return std::nullopt;
}

const Stimulus* Corpus::find(std::string_view id) const {
  for (const auto& s : stimuli) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

void validate_corpus(const Corpus& corpus) {
  std::set<std::string_view> seen;
  for (const auto& s : corpus.stimuli) {
    if (auto broken = check_stimulus(s)) {
      throw CorpusError("stimulus " + s.id + ": " + *broken);
    }
    if (!seen.insert(s.id).second) throw CorpusError("stimulus " + s.id + ": duplicate id");
  }
}

namespace {

bool json_flag(const Json& rec, const char* key, std::size_t line) {
  if (!rec.contains(key)) throw CorpusError(fmt::format("line {}: missing field \"{}\"", line, key));
  const auto& v = rec.at(key);
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer() && (v == 0 || v == 1)) return v.get<int>() == 1;
  throw CorpusError(fmt::format("line {}: field \"{}\" is not a boolean", line, key));
}

std::string json_string(const Json& rec, const char* key, std::size_t line) {
  if (!rec.contains(key)) throw CorpusError(fmt::format("line {}: missing field \"{}\"", line, key));
  const auto& v = rec.at(key);
  if (!v.is_string()) throw CorpusError(fmt::format("line {}: field \"{}\" is not a string", line, key));
  return v.get<std::string>();
}

}  // namespace

Corpus parse_canonical(std::istream& in, std::string source) {
  Corpus corpus;
  corpus.source = std::move(source);
  jsonl::for_each(in, [&](const Json& rec, std::size_t line) {
    if (!rec.is_object()) throw CorpusError(fmt::format("line {}: record is not an object", line));
    Stimulus s;
    s.id = json_string(rec, "id", line);
    s.item_type = ItemType::from_name(json_string(rec, "item_type", line));
    s.text = json_string(rec, "text", line);
    s.unfair = json_flag(rec, "unfair", line);
    s.ksa = json_flag(rec, "ksa", line);
    s.emotion = json_flag(rec, "emotion", line);
    if (rec.contains("split")) {
      try {
        s.split = split_from_string(json_string(rec, "split", line));
      } catch (const ConfigError& e) {
        throw CorpusError(fmt::format("line {}: {}", line, e.what()));
      }
    }
    if (rec.contains("rationale") && !rec.at("rationale").is_null()) {
      s.rationale = json_string(rec, "rationale", line);
    }
    corpus.stimuli.push_back(std::move(s));
  });
  if (corpus.stimuli.empty()) throw CorpusError("no records");
  validate_corpus(corpus);
  return corpus;
}

namespace {

// RFC 4180 records; quoted fields may span lines. Returns (first line, fields).
std::vector<std::pair<std::size_t, std::vector<std::string>>> read_csv(std::istream& in) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t row_line = 1;
  char c;
  auto end_field = [&] {
    fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    const bool blank = fields.size() == 1 && fields[0].empty();
    if (!blank) rows.emplace_back(row_line, std::move(fields));
    fields.clear();
  };
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      // tolerated before \n
    } else if (c == '\n') {
      end_row();
      ++line;
      row_line = line;
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw CorpusError(fmt::format("line {}: unterminated quoted field", row_line));
  if (!field.empty() || !fields.empty()) end_row();
  return rows;
}

std::optional<bool> parse_flag(std::string_view raw) {
  const std::string v = slug(raw);
  if (v.empty() || v == "0" || v == "false" || v == "no" || v == "n" || v == "none") return false;
  if (v == "1" || v == "true" || v == "yes" || v == "y" || v == "x") return true;
  return std::nullopt;
}

}  // namespace

Corpus parse_release_csv(std::istream& in, std::string source) {
  auto rows = read_csv(in);
  if (rows.empty()) throw CorpusError("no records");
  const auto& header = rows.front().second;

  auto column = [&](std::initializer_list<const char*> names) -> std::optional<std::size_t> {
    for (const char* n : names) {
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (slug(header[i]) == n) return i;
      }
    }
    return std::nullopt;
  };
  const auto id_col = column({"id", "stimulus_id", "item_id", "sample_id"});
  const auto type_col = column({"item_type", "type", "task_type", "item_task_type", "item_or_task_type"});
  const auto text_col = column({"text", "stimulus", "stimulus_text", "content"});
  const auto unfair_col = column({"unfair", "fairness", "fairness_issue", "label", "is_unfair"});
  const auto ksa_col = column({"ksa"});
  const auto emotion_col = column({"emotion"});
  const auto rationale_col = column({"rationale", "reason", "comment", "notes"});
  for (auto [col, name] : {std::pair{type_col, "item type"}, std::pair{text_col, "text"},
                           std::pair{unfair_col, "fairness"}, std::pair{ksa_col, "ksa"},
                           std::pair{emotion_col, "emotion"}}) {
    if (!col) throw CorpusError(fmt::format("line 1: release header lacks a {} column", name));
  }

  Corpus corpus;
  corpus.source = std::move(source);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& [line, f] = rows[r];
    auto cell = [&](std::optional<std::size_t> col) -> std::string {
      if (!col) return {};
      if (*col >= f.size()) throw CorpusError(fmt::format("line {}: expected {} fields, got {}", line, header.size(), f.size()));
      return f[*col];
    };
    auto flag = [&](std::optional<std::size_t> col, const char* name) {
      auto v = parse_flag(cell(col));
      if (!v) throw CorpusError(fmt::format("line {}: {} value \"{}\" is not a boolean", line, name, cell(col)));
      return *v;
    };
    Stimulus s;
    s.id = id_col ? trim(cell(id_col)) : fmt::format("row-{:04d}", r);
    s.item_type = ItemType::from_name(cell(type_col));
    s.text = trim(cell(text_col));
    s.unfair = flag(unfair_col, "fairness");
    s.ksa = flag(ksa_col, "ksa");
    s.emotion = flag(emotion_col, "emotion");
    if (rationale_col) {
      auto note = trim(cell(rationale_col));
      if (!note.empty()) s.rationale = std::move(note);
    }
    corpus.stimuli.push_back(std::move(s));
  }
  if (corpus.stimuli.empty()) throw CorpusError("no records");
  validate_corpus(corpus);
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, std::string_view adapter) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  if (adapter == kCanonicalAdapter) return parse_canonical(in, path.string());
  if (adapter == kReleaseCsvAdapter) return parse_release_csv(in, path.string());
  throw ConfigError("unknown corpus adapter \"" + std::string(adapter) + "\"");
}

void write_canonical(std::ostream& out, const Corpus& corpus) {
  for (const auto& s : corpus.stimuli) {
    Json rec{{"id", s.id},         {"item_type", s.item_type.name()},
             {"text", s.text},     {"unfair", s.unfair},
             {"ksa", s.ksa},       {"emotion", s.emotion}};
    if (s.split != Split::kUnassigned) rec["split"] = std::string(to_string(s.split));
    if (s.rationale) rec["rationale"] = *s.rationale;
    jsonl::write(out, rec);
  }
}

const TypeCounts* CorpusStats::row(ItemType::Kind kind) const {
  for (const auto& [type, counts] : rows) {
    if (type.kind() == kind) return &counts;
  }
  return nullptr;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats stats;
  for (Kind k : ItemType::kKnown) stats.rows.emplace_back(ItemType(k), TypeCounts{});
  for (const auto& s : corpus.stimuli) {
    auto it = std::find_if(stats.rows.begin(), stats.rows.end(),
                           [&](const auto& row) { return row.first == s.item_type; });
    if (it == stats.rows.end()) {
      stats.rows.emplace_back(s.item_type, TypeCounts{});
      it = std::prev(stats.rows.end());
    }
    for (TypeCounts* c : {&it->second, &stats.totals}) {
      ++c->total;
      c->unfair += s.unfair;
      c->ksa += s.ksa;
      c->emotion += s.emotion;
    }
  }
  return stats;
}

std::string render_stats(const CorpusStats& stats) {
  std::string out = fmt::format("{:<50} {:>6} {:>9} {:>5} {:>8}\n", "Item/Task Type", "Total", "Fairness", "KSA",
                                "Emotion");
  auto line = [&](const std::string& name, const TypeCounts& c) {
    out += fmt::format("{:<50} {:>6} {:>9} {:>5} {:>8}\n", name, c.total, c.unfair, c.ksa, c.emotion);
  };
  for (const auto& [type, counts] : stats.rows) line(type.display_name(), counts);
  line("Total", stats.totals);
  return out;
}

Split SplitAssignment::of(const std::string& id) const {
  auto it = by_id.find(id);
  return it == by_id.end() ? Split::kUnassigned : it->second;
}

std::vector<std::size_t> apportion(std::size_t slots, const std::vector<std::size_t>& weights,
                                   const std::vector<std::size_t>& capacity) {
  const std::size_t n = weights.size();
  if (capacity.size() != n) throw Error("apportion: weights/capacity size mismatch");
  if (std::accumulate(capacity.begin(), capacity.end(), std::size_t{0}) < slots) {
    throw Error("apportion: capacity below requested slots");
  }
  std::vector<std::size_t> result(n, 0);
  std::vector<bool> fixed(n, false);
  for (std::size_t i = 0; i < n; ++i) fixed[i] = capacity[i] == 0;
  std::size_t remaining = slots;

  while (remaining > 0) {
    std::size_t total_weight = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!fixed[i]) total_weight += weights[i];
    }
    const bool use_capacity = total_weight == 0;
    if (use_capacity) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!fixed[i]) total_weight += capacity[i];
      }
    }
    if (total_weight == 0) throw Error("apportion: no capacity left");

    std::vector<std::size_t> quota(n, 0), rem(n, 0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (fixed[i]) continue;
      const std::size_t w = use_capacity ? capacity[i] : weights[i];
      quota[i] = remaining * w / total_weight;
      rem[i] = remaining * w % total_weight;
      assigned += quota[i];
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
      if (!fixed[i]) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; assigned < remaining; ++k) {
      ++quota[order[k % order.size()]];
      ++assigned;
    }

    bool overflow = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!fixed[i] && quota[i] > capacity[i]) {
        remaining -= capacity[i];
        result[i] = capacity[i];
        fixed[i] = true;
        overflow = true;
      }
    }
    if (overflow) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (!fixed[i]) result[i] = quota[i];
    }
    remaining = 0;
  }
  return result;
}

SplitAssignment make_splits(const Corpus& corpus, std::uint64_t seed) {
  SplitAssignment out;
  out.seed = seed;
  Rng rng(seed);

  for (const auto& s : corpus.stimuli) {
    out.by_id[s.id] = s.item_type.out_of_domain() ? Split::kTestOutOfDomain
                      : s.item_type.in_domain()   ? Split::kTrain
                                                  : Split::kUnassigned;
  }

  constexpr auto& kTypes = ItemType::kInDomain;
  for (bool unfair : {true, false}) {
    std::vector<std::vector<std::string>> pools(kTypes.size());
    for (const auto& s : corpus.stimuli) {
      if (s.unfair != unfair || !s.item_type.in_domain()) continue;
      const auto t = std::find(kTypes.begin(), kTypes.end(), s.item_type.kind()) - kTypes.begin();
      pools[static_cast<std::size_t>(t)].push_back(s.id);
    }
    std::vector<std::size_t> available;
    for (const auto& p : pools) available.push_back(p.size());
    const std::size_t have = std::accumulate(available.begin(), available.end(), std::size_t{0});
    if (have < 2 * kHeldOutPerClass) {
      throw CorpusError(fmt::format("insufficient class counts: need at least {} {} in-domain stimuli, found {}",
                                    2 * kHeldOutPerClass, unfair ? "unfair" : "fair", have));
    }
    const auto held_out = apportion(2 * kHeldOutPerClass, available, available);
    const auto validation = apportion(kHeldOutPerClass, held_out, held_out);
    for (std::size_t t = 0; t < kTypes.size(); ++t) {
      rng.shuffle(std::span<std::string>(pools[t]));
      for (std::size_t i = 0; i < held_out[t]; ++i) {
        out.by_id[pools[t][i]] = i < validation[t] ? Split::kValidation : Split::kTestInDomain;
      }
    }
  }

  for (const auto& s : corpus.stimuli) ++out.stratification[s.item_type][out.by_id[s.id]];
  return out;
}

Corpus apply_splits(const Corpus& corpus, const SplitAssignment& splits) {
  Corpus out = corpus;
  for (auto& s : out.stimuli) s.split = splits.of(s.id);
  return out;
}

std::vector<Stimulus> select_split(const Corpus& corpus, Split split) {
  std::vector<Stimulus> out;
  for (const auto& s : corpus.stimuli) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

void write_split_manifest(std::ostream& out, const SplitAssignment& splits, const std::string& config_digest) {
  auto header = jsonl::meta_header("split_manifest", config_digest);
  header["_meta"]["seed"] = splits.seed;
  jsonl::write(out, header);
  for (const auto& [id, split] : splits.by_id) {
    jsonl::write(out, Json{{"id", id}, {"split", std::string(to_string(split))}});
  }
}

SplitAssignment read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read " + path.string());
  SplitAssignment out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    Json rec;
    try {
      rec = Json::parse(line);
      if (rec.contains("_meta")) {
        out.seed = rec["_meta"].value("seed", std::uint64_t{0});
        continue;
      }
      out.by_id[rec.at("id").get<std::string>()] = split_from_string(rec.at("split").get<std::string>());
    } catch (const Json::exception& e) {
      throw CorpusError(fmt::format("{}:{}: malformed split record ({})", path.string(), line_no, e.what()));
    }
  }
  return out;
}

std::map<std::string, std::string> load_rationales(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  jsonl::for_each(path, [&](const Json& rec, std::size_t line) {
    const auto id = json_string(rec, "id", line);
    auto note = trim(json_string(rec, "rationale", line));
    if (note.empty()) throw CorpusError(fmt::format("line {}: empty rationale for {}", line, id));
    out[id] = std::move(note);
  });
  return out;
}

}  // namespace fairscreen
