#include "fairscreen/topics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fairscreen/error.hpp"
#include "fairscreen/gateway.hpp"
#include "fairscreen/rng.hpp"

namespace fairscreen {

namespace {

constexpr double kNormTolerance = 1e-6;

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t basis = 0xcbf29ce484222325ULL) {
  std::uint64_t h = basis;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double squared_distance(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<std::vector<double>> pairwise_distances(const Points& points) {
  const std::size_t n = points.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) d[i][j] = d[j][i] = std::sqrt(squared_distance(points[i], points[j]));
  }
  return d;
}

}  // namespace

void normalize(Vector& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0 || !std::isfinite(norm)) throw Error("cannot normalize a zero or non-finite vector");
  for (double& x : v) x /= norm;
}

double cosine_distance(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error("cosine_distance: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string HashingEmbedder::id() const { return fmt::format("hashing-v1-d{}", dimension_); }

Vector HashingEmbedder::embed(std::string_view text) {
  Vector v(dimension_, 0.0);
  auto add = [&](std::string_view feature, double weight) {
    const std::uint64_t h = fnv1a(feature);
    const double sign = (fnv1a(feature, 0x84222325cbf29ce4ULL) & 1U) ? 1.0 : -1.0;
    v[h % dimension_] += sign * weight;
  };
  std::vector<std::string> terms;
  for (auto& w : word_tokens(text)) {
    if (!is_stop_word(w)) terms.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < terms.size(); ++i) {
    add(terms[i], 1.0);
    if (i + 1 < terms.size()) add(terms[i] + " " + terms[i + 1], 0.5);
  }
  if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
    // No content words (or they cancelled): fall back to the raw bytes.
    add(text.empty() ? std::string_view("\x01empty") : text, 1.0);
  }
  normalize(v);
  return v;
}

Vector GatewayEmbedder::embed(std::string_view text) {
  auto v = gateway_.embed(model_, text);
  if (v.empty()) throw GatewayError("embedder returned an empty vector");
  normalize(v);
  return v;
}

bool is_stop_word(std::string_view word) {
  static const std::set<std::string, std::less<>> kStop = {
      "a",       "about",   "above",   "after",   "again",   "against", "all",     "also",    "am",
      "an",      "and",     "any",     "are",     "as",      "at",      "be",      "because", "been",
      "before",  "being",   "below",   "between", "both",    "but",     "by",      "can",     "could",
      "did",     "do",      "does",    "doing",   "don",     "down",    "during",  "each",    "even",
      "every",   "few",     "for",     "from",    "further", "get",     "had",     "has",     "have",
      "having",  "he",      "her",     "here",    "hers",    "herself", "him",     "himself", "his",
      "how",     "however", "i",       "if",      "in",      "into",    "is",      "it",      "its",
      "itself",  "just",    "let",     "like",    "ll",      "may",     "me",      "might",   "more",
      "most",    "much",    "must",    "my",      "myself",  "no",      "nor",     "not",     "now",
      "of",      "off",     "on",      "once",    "one",     "only",    "or",      "other",   "our",
      "ours",    "ourselves", "out",   "over",    "own",     "re",      "same",    "shall",   "she",
      "should",  "so",      "some",    "such",    "than",    "that",    "the",     "their",   "theirs",
      "them",    "themselves", "then", "there",   "these",   "they",    "this",    "those",   "through",
      "to",      "too",     "under",   "until",   "up",      "us",      "ve",      "very",    "was",
      "we",      "well",    "were",    "what",    "when",    "where",   "which",   "while",   "who",
      "whom",    "why",     "will",    "with",    "within",  "without", "would",   "you",     "your",
      "yours",   "yourself", "yourselves",
  };
  return kStop.contains(word);
}

std::vector<std::string> content_terms(std::string_view text) {
  std::vector<std::string> out;
  for (auto& w : word_tokens(text)) {
    if (w.size() < 2 || is_stop_word(w)) continue;
    if (std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
    out.push_back(std::move(w));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Neighborhood-graph reduction

namespace {

// Fits 1 / (1 + a x^(2b)) to the target membership curve for min_dist with
// unit spread, by damped Gauss-Newton on 300 samples over [0, 3].
std::pair<double, double> curve_params(double min_dist) {
  constexpr int kSamples = 300;
  std::vector<double> xs(kSamples), ys(kSamples);
  for (int i = 0; i < kSamples; ++i) {
    xs[i] = 3.0 * i / (kSamples - 1);
    ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist));
  }
  auto residual_sum = [&](double a, double b) {
    double s = 0.0;
    for (int i = 0; i < kSamples; ++i) {
      const double f = 1.0 / (1.0 + a * std::pow(xs[i], 2 * b));
      s += (f - ys[i]) * (f - ys[i]);
    }
    return s;
  };
  double a = 1.0, b = 1.0, lambda = 1e-3;
  double cost = residual_sum(a, b);
  for (int iter = 0; iter < 200; ++iter) {
    double jtj[2][2] = {{0, 0}, {0, 0}}, jtr[2] = {0, 0};
    for (int i = 0; i < kSamples; ++i) {
      const double x = xs[i];
      if (x == 0.0) continue;
      const double p = std::pow(x, 2 * b);
      const double denom = 1.0 + a * p;
      const double f = 1.0 / denom;
      const double r = f - ys[i];
      const double da = -p / (denom * denom);
      const double db = -a * p * 2.0 * std::log(x) / (denom * denom);
      jtj[0][0] += da * da;
      jtj[0][1] += da * db;
      jtj[1][1] += db * db;
      jtr[0] += da * r;
      jtr[1] += db * r;
    }
    jtj[1][0] = jtj[0][1];
    const double m00 = jtj[0][0] * (1 + lambda), m11 = jtj[1][1] * (1 + lambda), m01 = jtj[0][1];
    const double det = m00 * m11 - m01 * m01;
    if (det == 0.0) break;
    const double step_a = -(m11 * jtr[0] - m01 * jtr[1]) / det;
    const double step_b = -(-m01 * jtr[0] + m00 * jtr[1]) / det;
    const double na = a + step_a, nb = b + step_b;
    if (na > 0 && nb > 0) {
      const double ncost = residual_sum(na, nb);
      if (ncost < cost) {
        const bool converged = cost - ncost < 1e-14;
        a = na;
        b = nb;
        cost = ncost;
        lambda *= 0.3;
        if (converged) break;
        continue;
      }
    }
    lambda *= 10;
    if (lambda > 1e12) break;
  }
  return {a, b};
}

}  // namespace

Points NeighborGraphReducer::reduce(const Points& points, std::uint64_t seed) const {
  const std::size_t n = points.size();
  const std::size_t dims = params_.n_components;
  if (n <= dims + 1) return points;
  const std::size_t k = std::min(params_.n_neighbors, n - 1);
  const auto dist = pairwise_distances(points);

  // Fuzzy k-nearest-neighbor memberships.
  std::vector<std::vector<std::size_t>> knn(n);
  double mean_distance = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[i][a] < dist[i][b]; });
    order.resize(k);
    knn[i] = std::move(order);
    for (auto j : knn[i]) mean_distance += dist[i][j];
  }
  mean_distance /= static_cast<double>(n * k);

  std::vector<std::vector<double>> w(n, std::vector<double>(n, 0.0));
  const double target = std::log2(static_cast<double>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const double rho = dist[i][knn[i].front()];
    auto mass = [&](double sigma) {
      double s = 0.0;
      for (auto j : knn[i]) s += std::exp(-std::max(0.0, dist[i][j] - rho) / sigma);
      return s;
    };
    double lo = 0.0, hi = std::numeric_limits<double>::infinity(), sigma = 1.0;
    for (int it = 0; it < 64; ++it) {
      const double m = mass(sigma);
      if (std::abs(m - target) < 1e-5) break;
      if (m > target) {
        hi = sigma;
        sigma = (lo + hi) / 2.0;
      } else {
        lo = sigma;
        sigma = std::isinf(hi) ? sigma * 2.0 : (lo + hi) / 2.0;
      }
    }
    sigma = std::max(sigma, 1e-3 * mean_distance);
    if (sigma <= 0.0) sigma = 1e-12;
    for (auto j : knn[i]) w[i][j] = std::exp(-std::max(0.0, dist[i][j] - rho) / sigma);
  }
  // Fuzzy union: A + A^T - A .* A^T.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = w[i][j], b = w[j][i];
      w[i][j] = w[j][i] = a + b - a * b;
    }
  }

  // Spectral initialization from the normalized graph Laplacian.
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) degree[i] = std::accumulate(w[i].begin(), w[i].end(), 0.0);
  Eigen::MatrixXd lap(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dij = degree[i] > 0 && degree[j] > 0 ? w[i][j] / std::sqrt(degree[i] * degree[j]) : 0.0;
      lap(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (i == j ? 1.0 : 0.0) - dij;
    }
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
  if (solver.info() != Eigen::Success) throw Error("spectral initialization failed");
  const Eigen::MatrixXd& eigenvectors = solver.eigenvectors();

  Rng rng(seed);
  Points y(n, Vector(dims, 0.0));
  double max_abs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dims; ++d) {
      y[i][d] = eigenvectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d + 1));
      max_abs = std::max(max_abs, std::abs(y[i][d]));
    }
  }
  const double expansion = max_abs > 0 ? 10.0 / max_abs : 1.0;
  for (auto& row : y) {
    for (double& v : row) v = v * expansion + (rng.unit() - 0.5) * 2e-4;
  }

  // Attractive/repulsive layout optimization over graph edges.
  const auto [a, b] = curve_params(params_.min_dist);
  const std::size_t epochs = std::max<std::size_t>(params_.epochs, 1);
  struct Edge {
    std::size_t head, tail;
    double epochs_per_sample;
    double next_sample;
    double next_negative;
  };
  double max_w = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_w = std::max(max_w, *std::max_element(w[i].begin(), w[i].end()));
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || w[i][j] < max_w / static_cast<double>(epochs) || w[i][j] <= 0.0) continue;
      const double eps = max_w / w[i][j];
      edges.push_back({i, j, eps, eps, eps / 5.0});
    }
  }
  constexpr int kNegativeRate = 5;
  auto clip = [](double g) { return std::clamp(g, -4.0, 4.0); };
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double alpha = 1.0 - static_cast<double>(epoch) / static_cast<double>(epochs);
    const double e = static_cast<double>(epoch);
    for (auto& edge : edges) {
      if (edge.next_sample > e) continue;
      auto& current = y[edge.head];
      auto& other = y[edge.tail];
      const double d2 = squared_distance(current, other);
      const double coeff = d2 > 0 ? (-2.0 * a * b * std::pow(d2, b - 1.0)) / (a * std::pow(d2, b) + 1.0) : 0.0;
      for (std::size_t d = 0; d < dims; ++d) {
        const double g = clip(coeff * (current[d] - other[d]));
        current[d] += g * alpha;
        other[d] -= g * alpha;
      }
      edge.next_sample += edge.epochs_per_sample;

      const double negatives_per_sample = edge.epochs_per_sample / kNegativeRate;
      const auto n_neg = static_cast<std::size_t>((e - edge.next_negative) / negatives_per_sample);
      for (std::size_t s = 0; s < n_neg; ++s) {
        const auto kidx = static_cast<std::size_t>(rng.below(n));
        if (kidx == edge.head) continue;
        const auto& neg = y[kidx];
        const double nd2 = squared_distance(current, neg);
        const double ncoeff = nd2 > 0 ? (2.0 * b) / ((0.001 + nd2) * (a * std::pow(nd2, b) + 1.0)) : 0.0;
        for (std::size_t d = 0; d < dims; ++d) {
          const double g = ncoeff > 0 ? clip(ncoeff * (current[d] - neg[d])) : 4.0;
          current[d] += g * alpha;
        }
      }
      edge.next_negative += static_cast<double>(n_neg) * negatives_per_sample;
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Density clustering

std::vector<int> DensityClusterer::cluster(const Points& points, std::uint64_t /*seed*/) const {
  const std::size_t n = points.size();
  std::vector<int> labels(n, -1);
  if (n < std::max<std::size_t>(min_cluster_size_, 2)) return labels;
  const auto dist = pairwise_distances(points);

  // Core distance: distance to the min_samples-th nearest point, self included.
  const std::size_t core_k = std::clamp<std::size_t>(min_samples_, 1, n);
  std::vector<double> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = dist[i];
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(core_k - 1), row.end());
    core[i] = row[core_k - 1];
  }
  auto reach = [&](std::size_t i, std::size_t j) { return std::max({core[i], core[j], dist[i][j]}); };

  // Prim's minimum spanning tree over mutual reachability.
  struct MstEdge {
    std::size_t a, b;
    double weight;
  };
  std::vector<MstEdge> mst;
  {
    std::vector<bool> in_tree(n, false);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> from(n, 0);
    std::size_t cur = 0;
    in_tree[0] = true;
    for (std::size_t added = 1; added < n; ++added) {
      for (std::size_t j = 0; j < n; ++j) {
        if (in_tree[j]) continue;
        const double r = reach(cur, j);
        if (r < best[j]) {
          best[j] = r;
          from[j] = cur;
        }
      }
      std::size_t next = n;
      for (std::size_t j = 0; j < n; ++j) {
        if (!in_tree[j] && (next == n || best[j] < best[next])) next = j;
      }
      in_tree[next] = true;
      mst.push_back({from[next], next, best[next]});
      cur = next;
    }
  }
  std::stable_sort(mst.begin(), mst.end(), [](const MstEdge& x, const MstEdge& y) { return x.weight < y.weight; });

  // Single-linkage hierarchy; internal node ids start at n.
  struct Node {
    std::size_t left, right;
    double distance;
    std::size_t size;
  };
  std::vector<Node> nodes;
  std::vector<std::size_t> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  auto size_of = [&](std::size_t x) { return x < n ? std::size_t{1} : nodes[x - n].size; };
  for (const auto& e : mst) {
    const std::size_t ra = find(e.a), rb = find(e.b);
    const std::size_t id = n + nodes.size();
    nodes.push_back({ra, rb, e.weight, size_of(ra) + size_of(rb)});
    parent[ra] = parent[rb] = id;
  }
  const std::size_t root = 2 * n - 2;

  // Condensed tree.
  struct Condensed {
    std::size_t parent;
    std::size_t child;  // < n: point, otherwise cluster label
    double lambda;
    std::size_t size;
  };
  auto lambda_of = [](double d) { return 1.0 / std::max(d, 1e-12); };
  std::vector<Condensed> condensed;
  std::vector<std::size_t> relabel(2 * n - 1, 0);
  std::size_t next_label = n + 1;
  relabel[root] = n;
  std::vector<double> birth(1, 0.0);  // indexed by label - n

  auto emit_points = [&](std::size_t node, std::size_t cluster, double lambda) {
    std::vector<std::size_t> stack{node};
    while (!stack.empty()) {
      const std::size_t x = stack.back();
      stack.pop_back();
      if (x < n) {
        condensed.push_back({cluster, x, lambda, 1});
      } else {
        stack.push_back(nodes[x - n].left);
        stack.push_back(nodes[x - n].right);
      }
    }
  };
  std::vector<std::size_t> queue{root};
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    const std::size_t node = queue[qi];
    if (node < n) continue;
    const Node& nd = nodes[node - n];
    const std::size_t label = relabel[node];
    const double lambda = lambda_of(nd.distance);
    const std::size_t ls = size_of(nd.left), rs = size_of(nd.right);
    const bool lbig = ls >= min_cluster_size_, rbig = rs >= min_cluster_size_;
    if (lbig && rbig) {
      for (std::size_t child : {nd.left, nd.right}) {
        relabel[child] = next_label++;
        birth.push_back(lambda);
        condensed.push_back({label, relabel[child], lambda, size_of(child)});
        queue.push_back(child);
      }
    } else {
      for (auto [child, big] : {std::pair{nd.left, lbig}, std::pair{nd.right, rbig}}) {
        if (big) {
          relabel[child] = label;
          queue.push_back(child);
        } else {
          emit_points(child, label, lambda);
        }
      }
    }
  }

  // Excess-of-mass selection; the root is never a candidate.
  const std::size_t n_clusters = next_label - n;
  std::vector<double> stability(n_clusters, 0.0);
  std::vector<std::vector<std::size_t>> children(n_clusters);
  for (const auto& c : condensed) {
    const std::size_t p = c.parent - n;
    stability[p] += (c.lambda - birth[p]) * static_cast<double>(c.size);
    if (c.child >= n) children[p].push_back(c.child - n);
  }
  std::vector<bool> selected(n_clusters, false);
  for (std::size_t c = n_clusters; c-- > 1;) {
    double subtree = 0.0;
    for (auto ch : children[c]) subtree += stability[ch];
    if (children[c].empty() || stability[c] >= subtree) {
      selected[c] = true;
      std::vector<std::size_t> stack(children[c]);
      while (!stack.empty()) {
        const auto x = stack.back();
        stack.pop_back();
        selected[x] = false;
        for (auto g : children[x]) stack.push_back(g);
      }
    } else {
      stability[c] = subtree;
    }
  }

  std::vector<std::size_t> cluster_parent(n_clusters, 0);
  for (const auto& c : condensed) {
    if (c.child >= n) cluster_parent[c.child - n] = c.parent - n;
  }
  std::vector<int> final_label(n_clusters, -1);
  int next = 0;
  for (std::size_t c = 1; c < n_clusters; ++c) {
    if (selected[c]) final_label[c] = next++;
  }
  for (const auto& c : condensed) {
    if (c.child >= n) continue;
    std::size_t cl = c.parent - n;
    while (cl != 0 && !selected[cl]) cl = cluster_parent[cl];
    if (cl != 0) labels[c.child] = final_label[cl];
  }
  return labels;
}

std::vector<int> KMeansClusterer::cluster(const Points& points, std::uint64_t seed) const {
  const std::size_t n = points.size();
  if (n == 0) return {};
  const std::size_t k = std::min(k_, n);
  if (k == 0) throw ConfigError("k-means needs k >= 1");
  Rng rng(seed);

  Points centers;
  centers.push_back(points[rng.below(n)]);
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) d2[i] = std::min(d2[i], squared_distance(points[i], c));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.below(n);
    } else {
      double target = rng.unit() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        target -= d2[pick];
        if (target < 0) break;
      }
    }
    centers.push_back(points[pick]);
  }

  std::vector<int> labels(n, -1);
  for (std::size_t iter = 0; iter < max_iterations_; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = squared_distance(points[i], centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = squared_distance(points[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Points sums(k, Vector(points[0].size(), 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(labels[i]);
      ++counts[c];
      for (std::size_t d = 0; d < points[i].size(); ++d) sums[c][d] += points[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // keep the previous center
      for (double& v : sums[c]) v /= static_cast<double>(counts[c]);
      centers[c] = std::move(sums[c]);
    }
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Topic model

std::string_view to_string(ClusterPipeline pipeline) {
  switch (pipeline) {
    case ClusterPipeline::kReducedDensity: return "reduced-density";
    case ClusterPipeline::kDensity: return "density";
    case ClusterPipeline::kKMeans: return "kmeans";
  }
  return "reduced-density";
}

ClusterPipeline cluster_pipeline_from_string(std::string_view name) {
  if (name == "reduced-density") return ClusterPipeline::kReducedDensity;
  if (name == "density") return ClusterPipeline::kDensity;
  if (name == "kmeans") return ClusterPipeline::kKMeans;
  throw ConfigError("unknown clustering pipeline \"" + std::string(name) + "\"");
}

std::string_view to_string(TopicSource source) {
  return source == TopicSource::kCorpusTrain ? "corpus_train" : "guidelines_doc";
}

TopicSource topic_source_from_string(std::string_view name) {
  if (name == "corpus_train") return TopicSource::kCorpusTrain;
  if (name == "guidelines_doc") return TopicSource::kGuidelinesDoc;
  throw ConfigError("unknown topic source \"" + std::string(name) + "\"");
}

std::string_view to_string(TopicLabel label) { return label == TopicLabel::kRestricted ? "restricted" : "acceptable"; }

TopicLabel topic_label_from_string(std::string_view name) {
  if (name == "restricted") return TopicLabel::kRestricted;
  if (name == "acceptable") return TopicLabel::kAcceptable;
  throw ConfigError("unknown topic label \"" + std::string(name) + "\" (expected restricted or acceptable)");
}

const TopicCluster* TopicModel::find(int id) const {
  for (const auto& c : clusters) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

bool TopicModel::fully_labeled() const {
  return !clusters.empty() &&
         std::all_of(clusters.begin(), clusters.end(), [&](const TopicCluster& c) { return labels.contains(c.id); });
}

std::vector<std::vector<TermScore>> class_tfidf(const std::vector<std::vector<std::string>>& cluster_docs,
                                                std::size_t k) {
  const double m = static_cast<double>(cluster_docs.size());
  std::map<std::string, std::size_t> df;
  std::vector<std::map<std::string, std::size_t>> tf(cluster_docs.size());
  for (std::size_t c = 0; c < cluster_docs.size(); ++c) {
    for (const auto& t : cluster_docs[c]) ++tf[c][t];
    for (const auto& [t, _] : tf[c]) ++df[t];
  }
  std::vector<std::vector<TermScore>> out(cluster_docs.size());
  for (std::size_t c = 0; c < cluster_docs.size(); ++c) {
    const double total = static_cast<double>(cluster_docs[c].size());
    for (const auto& [t, count] : tf[c]) {
      const double idf = std::log(1.0 + m / static_cast<double>(df[t]));
      out[c].push_back({t, static_cast<double>(count) / total * idf});
    }
    std::stable_sort(out[c].begin(), out[c].end(), [](const TermScore& x, const TermScore& y) {
      return x.score != y.score ? x.score > y.score : x.term < y.term;
    });
    if (out[c].size() > k) out[c].resize(k);
  }
  return out;
}

TopicModel fit_topics(std::span<const std::string> texts, Embedder& embedder, const TopicParams& params,
                      std::span<const std::string> ids) {
  const std::size_t floor = std::max<std::size_t>(params.min_support, 1);
  if (texts.size() < floor) {
    throw ConfigError(fmt::format("too few documents: {} (need at least {})", texts.size(), floor));
  }
  if (!ids.empty() && ids.size() != texts.size()) throw ConfigError("fit_topics: ids and texts differ in length");

  Points embeddings;
  embeddings.reserve(texts.size());
  for (const auto& t : texts) {
    auto v = embedder.embed(t);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (std::abs(std::sqrt(norm) - 1.0) > kNormTolerance) throw Error("embedder failure: vector is not unit norm");
    if (!embeddings.empty() && v.size() != embeddings.front().size()) {
      throw Error("embedder failure: inconsistent dimension");
    }
    embeddings.push_back(std::move(v));
  }

  std::vector<int> labels;
  switch (params.pipeline) {
    case ClusterPipeline::kReducedDensity: {
      const auto reduced = NeighborGraphReducer(params.reduction).reduce(embeddings, params.seed);
      labels = DensityClusterer(params.min_cluster_size, params.min_samples).cluster(reduced, params.seed);
      break;
    }
    case ClusterPipeline::kDensity:
      labels = DensityClusterer(params.min_cluster_size, params.min_samples).cluster(embeddings, params.seed);
      break;
    case ClusterPipeline::kKMeans:
      labels = KMeansClusterer(params.kmeans_k).cluster(embeddings, params.seed);
      break;
  }

  // Group members; retained clusters are numbered by first member position.
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) groups[labels[i]].push_back(i);
  }
  std::vector<std::vector<std::size_t>> retained;
  for (auto& [_, members] : groups) {
    if (members.size() >= params.min_support) retained.push_back(std::move(members));
  }
  std::sort(retained.begin(), retained.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });

  TopicModel model;
  model.embedder_id = embedder.id();
  model.params = params;
  std::vector<std::vector<std::string>> cluster_terms;
  for (std::size_t c = 0; c < retained.size(); ++c) {
    TopicCluster cluster;
    cluster.id = static_cast<int>(c);
    cluster.support = retained[c].size();
    cluster.centroid.assign(embeddings.front().size(), 0.0);
    auto& terms = cluster_terms.emplace_back();
    for (auto i : retained[c]) {
      cluster.members.push_back(ids.empty() ? fmt::format("doc-{}", i) : ids[i]);
      for (std::size_t d = 0; d < cluster.centroid.size(); ++d) cluster.centroid[d] += embeddings[i][d];
      for (auto& t : content_terms(texts[i])) terms.push_back(std::move(t));
    }
    for (double& x : cluster.centroid) x /= static_cast<double>(cluster.support);
    normalize(cluster.centroid);
    model.clusters.push_back(std::move(cluster));
  }
  auto tops = class_tfidf(cluster_terms, params.top_terms);
  for (std::size_t c = 0; c < model.clusters.size(); ++c) model.clusters[c].top_terms = std::move(tops[c]);
  return model;
}

const std::vector<TermScore>& describe_topic(const TopicModel& model, int cluster_id) {
  const auto* c = model.find(cluster_id);
  if (c == nullptr) throw ConfigError(fmt::format("unknown topic cluster {}", cluster_id));
  return c->top_terms;
}

int nearest_cluster(const TopicModel& model, const Vector& embedding) {
  if (model.clusters.empty()) throw ConfigError("topic model has no retained clusters");
  std::vector<const TopicCluster*> by_id;
  for (const auto& c : model.clusters) by_id.push_back(&c);
  std::sort(by_id.begin(), by_id.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  int best = by_id.front()->id;
  double best_d = cosine_distance(embedding, by_id.front()->centroid);
  for (std::size_t i = 1; i < by_id.size(); ++i) {
    const double d = cosine_distance(embedding, by_id[i]->centroid);
    if (d < best_d) {
      best_d = d;
      best = by_id[i]->id;
    }
  }
  return best;
}

Verdict predict_topic(const TopicModel& model, Embedder& embedder, std::string_view text) {
  if (!model.fully_labeled()) throw ConfigError("topic model is not fully labeled");
  if (embedder.id() != model.embedder_id) {
    throw ConfigError("embedder " + embedder.id() + " does not match model embedder " + model.embedder_id);
  }
  const int id = nearest_cluster(model, embedder.embed(text));
  return verdict_of(model.labels.at(id) == TopicLabel::kRestricted);
}

std::vector<std::string> segment_passages(std::string_view document) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t\r\n");
    if (b != std::string::npos) {
      const auto e = cur.find_last_not_of(" \t\r\n");
      out.push_back(cur.substr(b, e - b + 1));
    }
    cur.clear();
  };
  std::size_t pos = 0;
  while (pos <= document.size()) {
    auto nl = document.find('\n', pos);
    if (nl == std::string_view::npos) nl = document.size();
    const auto line = document.substr(pos, nl - pos);
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      flush();
    } else {
      if (!cur.empty()) cur.push_back('\n');
      cur.append(line);
    }
    pos = nl + 1;
  }
  flush();
  return out;
}

std::vector<TopicLabelRow> read_label_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read label file " + path.string());
  std::vector<TopicLabelRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() >= 2 && cols[0] == "cluster_id") continue;
    if (cols.size() < 2) throw ConfigError(fmt::format("{}:{}: expected cluster_id<TAB>label[<TAB>note]", path.string(), line_no));
    TopicLabelRow row;
    try {
      std::size_t used = 0;
      row.cluster_id = std::stoi(cols[0], &used);
      if (used != cols[0].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("{}:{}: bad cluster id \"{}\"", path.string(), line_no, cols[0]));
    }
    try {
      row.label = topic_label_from_string(cols[1]);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
    if (cols.size() > 2) row.note = cols[2];
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_label_file(std::ostream& out, const std::vector<TopicLabelRow>& rows) {
  out << "cluster_id\tlabel\tnote\n";
  for (const auto& r : rows) {
    std::string note = r.note;
    std::replace(note.begin(), note.end(), '\t', ' ');
    std::replace(note.begin(), note.end(), '\n', ' ');
    out << r.cluster_id << '\t' << to_string(r.label) << '\t' << note << '\n';
  }
}

std::vector<TopicLabelRow> label_template(const TopicModel& model) {
  std::vector<TopicLabelRow> rows;
  for (const auto& c : model.clusters) {
    std::string note;
    for (const auto& t : c.top_terms) note += (note.empty() ? "" : " ") + t.term;
    auto it = model.labels.find(c.id);
    rows.push_back({c.id, it == model.labels.end() ? TopicLabel::kAcceptable : it->second, note});
  }
  return rows;
}

void apply_labels(TopicModel& model, const std::vector<TopicLabelRow>& rows) {
  std::map<int, TopicLabel> labels;
  for (const auto& r : rows) {
    if (model.find(r.cluster_id) == nullptr) throw ConfigError(fmt::format("label file names unknown cluster {}", r.cluster_id));
    if (!labels.emplace(r.cluster_id, r.label).second) {
      throw ConfigError(fmt::format("label file labels cluster {} twice", r.cluster_id));
    }
  }
  for (const auto& c : model.clusters) {
    if (!labels.contains(c.id)) throw ConfigError(fmt::format("label file leaves cluster {} unlabeled", c.id));
  }
  model.labels = std::move(labels);
}

std::string render_topics(const TopicModel& model) {
  std::string out;
  for (const auto& c : model.clusters) {
    auto it = model.labels.find(c.id);
    out += fmt::format("topic {} (support {}){}:", c.id, c.support,
                       it == model.labels.end() ? "" : fmt::format(" [{}]", to_string(it->second)));
    for (const auto& t : c.top_terms) out += fmt::format(" {}({:.3f})", t.term, t.score);
    out += '\n';
  }
  return out;
}

void save_topic_model(const std::filesystem::path& path, const TopicModel& model) {
  using Json = nlohmann::json;
  Json clusters = Json::array();
  for (const auto& c : model.clusters) {
    Json terms = Json::array();
    for (const auto& t : c.top_terms) terms.push_back({t.term, t.score});
    clusters.push_back(
        {{"id", c.id}, {"support", c.support}, {"members", c.members}, {"centroid", c.centroid}, {"top_terms", terms}});
  }
  Json labels = Json::object();
  for (const auto& [id, label] : model.labels) labels[std::to_string(id)] = to_string(label);
  const auto& p = model.params;
  Json doc{{"format_version", TopicModel::kFormatVersion},
           {"embedder_id", model.embedder_id},
           {"source", to_string(model.source)},
           {"config_digest", model.config_digest},
           {"params",
            {{"pipeline", to_string(p.pipeline)},
             {"n_neighbors", p.reduction.n_neighbors},
             {"n_components", p.reduction.n_components},
             {"min_dist", p.reduction.min_dist},
             {"epochs", p.reduction.epochs},
             {"min_cluster_size", p.min_cluster_size},
             {"min_samples", p.min_samples},
             {"kmeans_k", p.kmeans_k},
             {"min_support", p.min_support},
             {"top_terms", p.top_terms},
             {"seed", p.seed}}},
           {"clusters", clusters},
           {"labels", labels}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write topic model " + path.string());
  out << doc.dump(1) << '\n';
}

TopicModel load_topic_model(const std::filesystem::path& path) {
  using Json = nlohmann::json;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read topic model " + path.string());
  TopicModel model;
  try {
    const Json doc = Json::parse(in);
    const int version = doc.at("format_version").get<int>();
    if (version != TopicModel::kFormatVersion) {
      throw ConfigError(fmt::format("{}: unsupported topic model version {}", path.string(), version));
    }
    model.embedder_id = doc.at("embedder_id").get<std::string>();
    model.source = topic_source_from_string(doc.at("source").get<std::string>());
    model.config_digest = doc.value("config_digest", "");
    const auto& p = doc.at("params");
    model.params.pipeline = cluster_pipeline_from_string(p.at("pipeline").get<std::string>());
    model.params.reduction.n_neighbors = p.at("n_neighbors").get<std::size_t>();
    model.params.reduction.n_components = p.at("n_components").get<std::size_t>();
    model.params.reduction.min_dist = p.at("min_dist").get<double>();
    model.params.reduction.epochs = p.at("epochs").get<std::size_t>();
    model.params.min_cluster_size = p.at("min_cluster_size").get<std::size_t>();
    model.params.min_samples = p.at("min_samples").get<std::size_t>();
    model.params.kmeans_k = p.at("kmeans_k").get<std::size_t>();
    model.params.min_support = p.at("min_support").get<std::size_t>();
    model.params.top_terms = p.at("top_terms").get<std::size_t>();
    model.params.seed = p.at("seed").get<std::uint64_t>();
    for (const auto& c : doc.at("clusters")) {
      TopicCluster cluster;
      cluster.id = c.at("id").get<int>();
      cluster.support = c.at("support").get<std::size_t>();
      cluster.members = c.at("members").get<std::vector<std::string>>();
      cluster.centroid = c.at("centroid").get<Vector>();
      for (const auto& t : c.at("top_terms")) cluster.top_terms.push_back({t.at(0).get<std::string>(), t.at(1).get<double>()});
      model.clusters.push_back(std::move(cluster));
    }
    for (const auto& [id, label] : doc.at("labels").items()) {
      model.labels[std::stoi(id)] = topic_label_from_string(label.get<std::string>());
    }
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": malformed topic model (" + e.what() + ")");
  }
  std::sort(model.clusters.begin(), model.clusters.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return model;
}

}  // namespace fairscreen
