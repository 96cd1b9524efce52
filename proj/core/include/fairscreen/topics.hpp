#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairscreen/verdict.hpp"

namespace fairscreen {

class Gateway;

using Vector = std::vector<double>;
using Points = std::vector<Vector>;

// Scales v to unit Euclidean norm; throws Error for a zero vector.
void normalize(Vector& v);
double cosine_distance(const Vector& a, const Vector& b);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  // Unit-norm vector of fixed dimension.
  virtual Vector embed(std::string_view text) = 0;
};

// Signed feature hashing of lowercase word unigrams and bigrams. Fully
// deterministic and dependency free; used offline and in tests.
class HashingEmbedder : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 256) : dimension_(dimension) {}
  std::string id() const override;
  Vector embed(std::string_view text) override;

 private:
  std::size_t dimension_;
};

// Remote sentence embedder reached through the gateway (record/replay aware).
class GatewayEmbedder : public Embedder {
 public:
  GatewayEmbedder(Gateway& gateway, std::string model) : gateway_(gateway), model_(std::move(model)) {}
  std::string id() const override { return "remote:" + model_; }
  Vector embed(std::string_view text) override;

 private:
  Gateway& gateway_;
  std::string model_;
};

// Lowercase alphanumeric tokens of two or more characters, stop words removed.
std::vector<std::string> content_terms(std::string_view text);
bool is_stop_word(std::string_view word);

// Neighborhood-graph reduction: fuzzy k-nearest-neighbor graph, spectral
// initialization, then attractive/repulsive layout optimization.
struct ReductionParams {
  std::size_t n_neighbors = 15;
  std::size_t n_components = 5;
  double min_dist = 0.0;
  std::size_t epochs = 200;
  friend bool operator==(const ReductionParams&, const ReductionParams&) = default;
};

class Reducer {
 public:
  virtual ~Reducer() = default;
  virtual Points reduce(const Points& points, std::uint64_t seed) const = 0;
};

class NeighborGraphReducer : public Reducer {
 public:
  explicit NeighborGraphReducer(ReductionParams params = {}) : params_(params) {}
  Points reduce(const Points& points, std::uint64_t seed) const override;

 private:
  ReductionParams params_;
};

// Label per point, -1 for noise.
class Clusterer {
 public:
  virtual ~Clusterer() = default;
  virtual std::vector<int> cluster(const Points& points, std::uint64_t seed) const = 0;
};

// Hierarchical density clustering over mutual-reachability distances with
// excess-of-mass cluster selection.
class DensityClusterer : public Clusterer {
 public:
  DensityClusterer(std::size_t min_cluster_size = 5, std::size_t min_samples = 5)
      : min_cluster_size_(min_cluster_size), min_samples_(min_samples) {}
  std::vector<int> cluster(const Points& points, std::uint64_t seed) const override;

 private:
  std::size_t min_cluster_size_;
  std::size_t min_samples_;
};

// Lloyd's algorithm with k-means++ seeding. Never emits noise.
class KMeansClusterer : public Clusterer {
 public:
  explicit KMeansClusterer(std::size_t k, std::size_t max_iterations = 100)
      : k_(k), max_iterations_(max_iterations) {}
  std::vector<int> cluster(const Points& points, std::uint64_t seed) const override;

 private:
  std::size_t k_;
  std::size_t max_iterations_;
};

enum class ClusterPipeline { kReducedDensity, kDensity, kKMeans };
std::string_view to_string(ClusterPipeline pipeline);
ClusterPipeline cluster_pipeline_from_string(std::string_view name);

struct TopicParams {
  ClusterPipeline pipeline = ClusterPipeline::kReducedDensity;
  ReductionParams reduction;
  std::size_t min_cluster_size = 5;
  std::size_t min_samples = 5;
  std::size_t kmeans_k = 8;
  // Clusters with fewer members are dropped.
  std::size_t min_support = 5;
  std::size_t top_terms = 10;
  std::uint64_t seed = 0;
  friend bool operator==(const TopicParams&, const TopicParams&) = default;
};

enum class TopicSource { kCorpusTrain, kGuidelinesDoc };
std::string_view to_string(TopicSource source);
TopicSource topic_source_from_string(std::string_view name);

enum class TopicLabel { kRestricted, kAcceptable };
std::string_view to_string(TopicLabel label);
TopicLabel topic_label_from_string(std::string_view name);

struct TermScore {
  std::string term;
  double score = 0.0;
  friend bool operator==(const TermScore&, const TermScore&) = default;
};

struct TopicCluster {
  int id = 0;
  Vector centroid;
  std::vector<std::string> members;
  std::size_t support = 0;
  std::vector<TermScore> top_terms;
  friend bool operator==(const TopicCluster&, const TopicCluster&) = default;
};

struct TopicModel {
  static constexpr int kFormatVersion = 1;

  std::vector<TopicCluster> clusters;  // ascending id
  std::map<int, TopicLabel> labels;
  TopicSource source = TopicSource::kCorpusTrain;
  std::string embedder_id;
  TopicParams params;
  std::string config_digest;

  const TopicCluster* find(int id) const;
  bool fully_labeled() const;

  friend bool operator==(const TopicModel&, const TopicModel&) = default;
};

// Class-based TF-IDF: L1-normalized term frequency within each cluster times
// log(1 + clusters / clusters_containing_term). Returns the top `k` terms
// per cluster, highest score first, ties broken alphabetically.
std::vector<std::vector<TermScore>> class_tfidf(const std::vector<std::vector<std::string>>& cluster_docs,
                                                std::size_t k);

// Embeds, clusters, keeps clusters with support >= min_support, and
// describes them. Outliers are excluded from every centroid. `ids` defaults
// to "doc-<index>".
TopicModel fit_topics(std::span<const std::string> texts, Embedder& embedder, const TopicParams& params,
                      std::span<const std::string> ids = {});

const std::vector<TermScore>& describe_topic(const TopicModel& model, int cluster_id);

// Nearest centroid by cosine distance; ties resolve to the lowest id.
int nearest_cluster(const TopicModel& model, const Vector& embedding);

Verdict predict_topic(const TopicModel& model, Embedder& embedder, std::string_view text);

// Blank-line separated passages, trimmed, empties dropped.
std::vector<std::string> segment_passages(std::string_view document);

struct TopicLabelRow {
  int cluster_id = 0;
  TopicLabel label = TopicLabel::kAcceptable;
  std::string note;
};

std::vector<TopicLabelRow> read_label_file(const std::filesystem::path& path);
void write_label_file(std::ostream& out, const std::vector<TopicLabelRow>& rows);
// Rows naming every retained cluster, all acceptable, notes = top terms.
std::vector<TopicLabelRow> label_template(const TopicModel& model);
// Throws ConfigError unless rows cover exactly the retained clusters.
void apply_labels(TopicModel& model, const std::vector<TopicLabelRow>& rows);

std::string render_topics(const TopicModel& model);

void save_topic_model(const std::filesystem::path& path, const TopicModel& model);
TopicModel load_topic_model(const std::filesystem::path& path);

}  // namespace fairscreen
