#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fairscreen {

// The six item/task types of the annotated release, plus an escape hatch for
// kinds the enumeration does not know about.
class ItemType {
 public:
  enum class Kind : std::uint8_t {
    kReadTextAloud,
    kTalks,
    kTextCompletion,
    kRespondToQuestions,
    kConversations,
    kRespondToWrittenRequest,
    kOther,
  };

  static constexpr std::array<Kind, 6> kKnown = {
      Kind::kReadTextAloud,  Kind::kTalks,         Kind::kTextCompletion,
      Kind::kRespondToQuestions, Kind::kConversations, Kind::kRespondToWrittenRequest};

  static constexpr std::array<Kind, 4> kInDomain = {
      Kind::kReadTextAloud, Kind::kTalks, Kind::kTextCompletion, Kind::kRespondToQuestions};

  ItemType() = default;
  explicit ItemType(Kind kind) : kind_(kind) {}

  // Canonical snake_case names map to known kinds; anything else becomes an
  // opaque kOther carrying the given name.
  static ItemType from_name(std::string_view name);

  Kind kind() const noexcept { return kind_; }
  std::string name() const;
  std::string display_name() const;

  // Conversations and Respond-to-a-Written-Request are held out as the
  // out-of-domain test set.
  bool out_of_domain() const noexcept {
    return kind_ == Kind::kConversations || kind_ == Kind::kRespondToWrittenRequest;
  }
  bool in_domain() const noexcept { return !out_of_domain() && kind_ != Kind::kOther; }

  friend bool operator==(const ItemType& a, const ItemType& b) {
    return a.kind_ == b.kind_ && (a.kind_ != Kind::kOther || a.other_ == b.other_);
  }
  friend bool operator<(const ItemType& a, const ItemType& b) {
    if (a.kind_ != b.kind_) return a.kind_ < b.kind_;
    return a.other_ < b.other_;
  }

 private:
  Kind kind_ = Kind::kReadTextAloud;
  std::string other_;
};

enum class Split : std::uint8_t {
  kUnassigned,
  kTrain,
  kValidation,
  kTestInDomain,
  kTestOutOfDomain,
};

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct Stimulus {
  std::string id;
  ItemType item_type;
  std::string text;
  bool unfair = false;
  bool ksa = false;
  bool emotion = false;
  Split split = Split::kUnassigned;
  // Reviewer note explaining the label, when the source provides one.
  std::optional<std::string> rationale;

  friend bool operator==(const Stimulus&, const Stimulus&) = default;
};

// Returns the first broken rule for a single record, if any.
std::optional<std::string> check_stimulus(const Stimulus& s);

struct Corpus {
  std::vector<Stimulus> stimuli;
  std::string source;

  const Stimulus* find(std::string_view id) const;
  std::size_t size() const noexcept { return stimuli.size(); }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Throws CorpusError on duplicate ids or a record breaking its invariants.
void validate_corpus(const Corpus& corpus);

// Registered on-disk layouts.
inline constexpr std::string_view kCanonicalAdapter = "canonical";
inline constexpr std::string_view kReleaseCsvAdapter = "release-csv";

Corpus load_corpus(const std::filesystem::path& path, std::string_view adapter = kCanonicalAdapter);
Corpus parse_canonical(std::istream& in, std::string source);
Corpus parse_release_csv(std::istream& in, std::string source);

// Canonical line-delimited form; load_corpus(write_canonical(c)) == c.
void write_canonical(std::ostream& out, const Corpus& corpus);

struct TypeCounts {
  std::size_t total = 0;
  std::size_t unfair = 0;
  std::size_t ksa = 0;
  std::size_t emotion = 0;

  friend bool operator==(const TypeCounts&, const TypeCounts&) = default;
};

struct CorpusStats {
  // Known kinds in enumeration order (always present, possibly zero), then
  // any extension kinds encountered.
  std::vector<std::pair<ItemType, TypeCounts>> rows;
  TypeCounts totals;

  const TypeCounts* row(ItemType::Kind kind) const;
};

CorpusStats corpus_stats(const Corpus& corpus);
std::string render_stats(const CorpusStats& stats);

inline constexpr std::size_t kHeldOutPerClass = 24;

struct SplitAssignment {
  std::map<std::string, Split> by_id;
  std::uint64_t seed = 0;
  // stratification[type][split] = count
  std::map<ItemType, std::map<Split, std::size_t>> stratification;

  Split of(const std::string& id) const;
};

// Balanced validation and in-domain test sets (24 unfair + 24 fair each,
// stratified over the in-domain types), every out-of-domain stimulus in the
// out-of-domain test set, the in-domain remainder in train.
SplitAssignment make_splits(const Corpus& corpus, std::uint64_t seed);

// Largest-remainder apportionment of `slots` proportional to `weights`,
// never exceeding `capacity`. Ties go to the lower index.
std::vector<std::size_t> apportion(std::size_t slots, const std::vector<std::size_t>& weights,
                                   const std::vector<std::size_t>& capacity);

// Returns a copy with every stimulus's split field set from the assignment.
Corpus apply_splits(const Corpus& corpus, const SplitAssignment& splits);
std::vector<Stimulus> select_split(const Corpus& corpus, Split split);

void write_split_manifest(std::ostream& out, const SplitAssignment& splits,
                          const std::string& config_digest);
SplitAssignment read_split_manifest(const std::filesystem::path& path);

// id -> rationale, from a line-delimited sidecar of {"id", "rationale"}.
std::map<std::string, std::string> load_rationales(const std::filesystem::path& path);

}  // namespace fairscreen
