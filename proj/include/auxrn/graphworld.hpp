#pragma once

// Deterministic synthetic navigation worlds: random geometric graphs with
// per-node appearance latents, panoramic observations, candidate action sets,
// shortest-path teachers and templated instructions.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "auxrn/rng.hpp"

namespace auxrn {

inline constexpr int kViewCount = 36;
inline constexpr int kViewFeatureDim = 32;
inline constexpr int kOrientationDim = 4;
inline constexpr int kCandidateDim = kViewFeatureDim + kOrientationDim;
inline constexpr int kLatentDim = 16;
inline constexpr int kMaxPathNodes = 10;           // T_max
inline constexpr int kMaxInstructionTokens = 40;   // L_max
inline constexpr int kVocabSize = 64;
inline constexpr double kWorldExtent = 10.0;       // meters
inline constexpr double kEdgeQuantum = 1.0 / 1024.0;

namespace token {
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kStop = 2;
inline constexpr int kLeft = 3;
inline constexpr int kRight = 4;
inline constexpr int kStraight = 5;
inline constexpr int kUp = 6;
inline constexpr int kDown = 7;
inline constexpr int kLandmarkBase = 8;
inline constexpr int kLandmarkCount = kVocabSize - kLandmarkBase;
}  // namespace token

using Orientation = std::array<double, 4>;  // (sin θ, cos θ, sin φ, cos φ)

// Wraps an angle into (-π, π].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  if (a > std::numbers::pi) a -= 2.0 * std::numbers::pi;
  return a;
}

inline Orientation orientation_quad(double theta, double phi) {
  return {std::sin(theta), std::cos(theta), std::sin(phi), std::cos(phi)};
}

namespace detail {

// Fixed projections shared by every world, so appearance is comparable
// across seen and unseen environments.
struct AppearanceModel {
  Eigen::MatrixXd latent_proj;     // kViewFeatureDim x kLatentDim
  Eigen::MatrixXd direction_proj;  // kViewFeatureDim x 8
  Eigen::MatrixXd landmark_protos; // kLandmarkCount x kLatentDim

  static const AppearanceModel& instance() {
    static const AppearanceModel model = [] {
      AppearanceModel m;
      Rng rng(0xA11CE5EEDULL);
      m.latent_proj.resize(kViewFeatureDim, kLatentDim);
      for (Eigen::Index i = 0; i < m.latent_proj.size(); ++i)
        m.latent_proj.data()[i] = rng.normal() / std::sqrt(static_cast<double>(kLatentDim));
      m.direction_proj.resize(kViewFeatureDim, 8);
      for (Eigen::Index i = 0; i < m.direction_proj.size(); ++i)
        m.direction_proj.data()[i] = 0.5 * rng.normal() / std::sqrt(8.0);
      m.landmark_protos.resize(token::kLandmarkCount, kLatentDim);
      for (Eigen::Index i = 0; i < m.landmark_protos.size(); ++i) m.landmark_protos.data()[i] = rng.normal();
      return m;
    }();
    return model;
  }
};

}  // namespace detail

inline Eigen::VectorXd node_latent(std::uint64_t world_seed, int node_id) {
  Rng rng(derive_seed(world_seed, 0x1A7E, static_cast<std::uint64_t>(node_id)));
  Eigen::VectorXd v(kLatentDim);
  for (int i = 0; i < kLatentDim; ++i) v(i) = rng.normal();
  return v;
}

inline int landmark_of(const Eigen::VectorXd& latent) {
  Eigen::Index best = 0;
  (detail::AppearanceModel::instance().landmark_protos * latent).maxCoeff(&best);
  return static_cast<int>(best);
}

// Appearance of a node seen from absolute direction (theta, phi).
inline Eigen::VectorXd view_feature(const Eigen::VectorXd& latent, double theta, double phi) {
  const auto& m = detail::AppearanceModel::instance();
  Eigen::VectorXd dir(8);
  dir << std::sin(theta), std::cos(theta), std::sin(2 * theta), std::cos(2 * theta), std::sin(phi), std::cos(phi),
      std::sin(theta) * std::cos(phi), std::cos(theta) * std::cos(phi);
  return (m.latent_proj * latent + m.direction_proj * dir).array().tanh().matrix();
}

struct NodeRecord {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  Eigen::VectorXd latent;
  int landmark = 0;
};

class NavGraph {
 public:
  NavGraph() = default;

  // Builds a graph from positions and undirected edges; latents are derived
  // from (seed, node id). Throws if the result violates any invariant.
  NavGraph(std::uint64_t seed, const std::vector<std::pair<double, double>>& positions,
           std::vector<std::pair<int, int>> edges)
      : seed_(seed) {
    const int n = static_cast<int>(positions.size());
    if (n < 2) throw std::invalid_argument("NavGraph: needs at least 2 nodes");
    nodes_.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto [x, y] = positions[static_cast<std::size_t>(i)];
      if (!std::isfinite(x) || !std::isfinite(y)) throw std::invalid_argument("NavGraph: non-finite position");
      NodeRecord r{i, x, y, node_latent(seed, i), 0};
      r.landmark = landmark_of(r.latent);
      nodes_.push_back(std::move(r));
    }
    adjacency_.assign(static_cast<std::size_t>(n), {});
    for (auto& [a, b] : edges) {
      if (a > b) std::swap(a, b);
      if (a < 0 || b >= n || a == b) throw std::invalid_argument("NavGraph: invalid edge");
    }
    std::sort(edges.begin(), edges.end());
    if (std::adjacent_find(edges.begin(), edges.end()) != edges.end())
      throw std::invalid_argument("NavGraph: duplicate edge");
    edges_ = std::move(edges);
    for (auto [a, b] : edges_) {
      adjacency_[static_cast<std::size_t>(a)].push_back(b);
      adjacency_[static_cast<std::size_t>(b)].push_back(a);
    }
    for (auto& nb : adjacency_) {
      if (nb.empty()) throw std::invalid_argument("NavGraph: isolated node");
      std::sort(nb.begin(), nb.end());
    }
    compute_distances();
  }

  std::uint64_t seed() const { return seed_; }
  int node_count() const { return static_cast<int>(nodes_.size()); }
  bool has_node(int id) const { return id >= 0 && id < node_count(); }

  const NodeRecord& node(int id) const {
    require_node(id);
    return nodes_[static_cast<std::size_t>(id)];
  }
  const std::vector<NodeRecord>& nodes() const { return nodes_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }

  // Neighbour ids in ascending order.
  const std::vector<int>& neighbours(int id) const {
    require_node(id);
    return adjacency_[static_cast<std::size_t>(id)];
  }

  bool has_edge(int a, int b) const {
    const auto& nb = neighbours(a);
    return std::binary_search(nb.begin(), nb.end(), b);
  }

  double euclidean(int a, int b) const {
    const auto& p = node(a);
    const auto& q = node(b);
    return std::hypot(q.x - p.x, q.y - p.y);
  }

  // Traversal length of an edge: Euclidean length rounded to kEdgeQuantum so
  // path sums are exact in binary floating point.
  double edge_length(int a, int b) const {
    if (!has_edge(a, b)) throw std::invalid_argument("edge_length: nodes are not adjacent");
    return quantize_length(euclidean(a, b));
  }

  static double quantize_length(double meters) {
    return std::max(1.0, std::round(meters / kEdgeQuantum)) * kEdgeQuantum;
  }

  // Absolute direction from a to b.
  double heading_between(int a, int b) const {
    const auto& p = node(a);
    const auto& q = node(b);
    return std::atan2(q.y - p.y, q.x - p.x);
  }

  // Geodesic (shortest-path) distance.
  double distance(int a, int b) const {
    require_node(a);
    require_node(b);
    return dist_[static_cast<std::size_t>(a) * nodes_.size() + static_cast<std::size_t>(b)];
  }

 private:
  void require_node(int id) const {
    if (!has_node(id)) throw std::out_of_range("unknown node id " + std::to_string(id));
  }

  void compute_distances() {
    const std::size_t n = nodes_.size();
    dist_.assign(n * n, std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    for (std::size_t s = 0; s < n; ++s) {
      double* d = &dist_[s * n];
      std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
      d[s] = 0.0;
      pq.emplace(0.0, static_cast<int>(s));
      while (!pq.empty()) {
        auto [du, u] = pq.top();
        pq.pop();
        if (du > d[u]) continue;
        for (int v : adjacency_[static_cast<std::size_t>(u)]) {
          const double nd = du + quantize_length(euclidean(u, v));
          if (nd < d[v]) {
            d[v] = nd;
            pq.emplace(nd, v);
          }
        }
      }
      for (std::size_t t = 0; t < n; ++t)
        if (!std::isfinite(d[t])) throw std::invalid_argument("NavGraph: graph is not connected");
    }
  }

  std::uint64_t seed_ = 0;
  std::vector<NodeRecord> nodes_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> adjacency_;
  std::vector<double> dist_;
};

// Random geometric graph on a kWorldExtent square: union of k-nearest
// neighbour edges, then components are joined by their closest node pair.
inline NavGraph generate_world(std::uint64_t seed, int n_nodes, double avg_degree) {
  if (n_nodes < 2) throw std::invalid_argument("generate_world: n_nodes must be >= 2");
  if (!(avg_degree >= 1.0)) throw std::invalid_argument("generate_world: avg_degree must be >= 1");
  Rng rng(derive_seed(seed, 0x6E0));
  const double min_spacing = 0.5;
  std::vector<std::pair<double, double>> pos;
  for (int i = 0; i < n_nodes; ++i) {
    std::pair<double, double> p;
    for (int attempt = 0; attempt < 100; ++attempt) {
      p = {rng.uniform(0.0, kWorldExtent), rng.uniform(0.0, kWorldExtent)};
      const bool clear = std::none_of(pos.begin(), pos.end(), [&](const auto& q) {
        return std::hypot(q.first - p.first, q.second - p.second) < min_spacing;
      });
      if (clear) break;
    }
    pos.push_back(p);
  }
  auto d2 = [&](int a, int b) {
    const double dx = pos[static_cast<std::size_t>(a)].first - pos[static_cast<std::size_t>(b)].first;
    const double dy = pos[static_cast<std::size_t>(a)].second - pos[static_cast<std::size_t>(b)].second;
    return dx * dx + dy * dy;
  };

  const int k = std::clamp(static_cast<int>(std::lround(avg_degree * 2.0 / 3.0)), 1, n_nodes - 1);
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n_nodes; ++i) {
    std::vector<int> order;
    for (int j = 0; j < n_nodes; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d2(i, a) < d2(i, b); });
    for (int m = 0; m < k; ++m) edges.emplace_back(std::min(i, order[static_cast<std::size_t>(m)]),
                                                   std::max(i, order[static_cast<std::size_t>(m)]));
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  // Connectivity repair.
  while (true) {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n_nodes));
    for (auto [a, b] : edges) {
      adj[static_cast<std::size_t>(a)].push_back(b);
      adj[static_cast<std::size_t>(b)].push_back(a);
    }
    std::vector<char> seen(static_cast<std::size_t>(n_nodes), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : adj[static_cast<std::size_t>(u)])
        if (!seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = 1;
          stack.push_back(v);
        }
    }
    if (std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; })) break;
    int best_a = -1, best_b = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < n_nodes; ++a) {
      if (!seen[static_cast<std::size_t>(a)]) continue;
      for (int b = 0; b < n_nodes; ++b) {
        if (seen[static_cast<std::size_t>(b)]) continue;
        if (d2(a, b) < best) {
          best = d2(a, b);
          best_a = a;
          best_b = b;
        }
      }
    }
    edges.emplace_back(std::min(best_a, best_b), std::max(best_a, best_b));
    std::sort(edges.begin(), edges.end());
  }
  return NavGraph(seed, pos, std::move(edges));
}

struct View {
  Eigen::VectorXd feature;  // kViewFeatureDim
  Orientation orientation;
};

struct PanoramicObservation {
  int node_id = 0;
  std::vector<View> views;

  // kCandidateDim x kViewCount matrix, one column per view (feature ++ quad).
  Eigen::MatrixXd as_matrix() const {
    Eigen::MatrixXd m(kCandidateDim, static_cast<Eigen::Index>(views.size()));
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      m.col(col).head(kViewFeatureDim) = views[i].feature;
      for (int j = 0; j < kOrientationDim; ++j) m(kViewFeatureDim + j, col) = views[i].orientation[static_cast<std::size_t>(j)];
    }
    return m;
  }
};

// 12 headings x 3 elevations; view i has heading-relative θ = (i % 12)·30°
// and φ = (i / 12 - 1)·30°.
inline PanoramicObservation observe(const NavGraph& graph, int node, double heading) {
  const NodeRecord& rec = graph.node(node);
  PanoramicObservation obs;
  obs.node_id = node;
  obs.views.reserve(kViewCount);
  const double step = std::numbers::pi / 6.0;
  for (int i = 0; i < kViewCount; ++i) {
    const double theta_rel = (i % 12) * step;
    const double phi = (i / 12 - 1) * step;
    obs.views.push_back(View{view_feature(rec.latent, heading + theta_rel, phi), orientation_quad(theta_rel, phi)});
  }
  return obs;
}

struct Candidate {
  std::optional<int> target;  // empty for stop
  Eigen::VectorXd feature;    // kViewFeatureDim
  Orientation orientation{};
  bool is_stop = false;

  Eigen::VectorXd full() const {
    Eigen::VectorXd v(kCandidateDim);
    v.head(kViewFeatureDim) = feature;
    for (int j = 0; j < kOrientationDim; ++j) v(kViewFeatureDim + j) = orientation[static_cast<std::size_t>(j)];
    return v;
  }
};

// One candidate per neighbour (ascending id), then the stop candidate.
inline std::vector<Candidate> candidates(const NavGraph& graph, int node, double heading) {
  const auto& nb = graph.neighbours(node);
  std::vector<Candidate> out;
  out.reserve(nb.size() + 1);
  for (int j : nb) {
    const double abs_dir = graph.heading_between(node, j);
    const double rel = wrap_angle(abs_dir - heading);
    out.push_back(Candidate{j, view_feature(graph.node(j).latent, abs_dir, 0.0), orientation_quad(rel, 0.0), false});
  }
  out.push_back(Candidate{std::nullopt, Eigen::VectorXd::Zero(kViewFeatureDim), Orientation{0, 0, 0, 0}, true});
  return out;
}

inline Eigen::MatrixXd candidate_matrix(const std::vector<Candidate>& cands) {
  Eigen::MatrixXd m(kCandidateDim, static_cast<Eigen::Index>(cands.size()));
  for (std::size_t i = 0; i < cands.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = cands[i].full();
  return m;
}

struct Instruction {
  std::vector<int> tokens;

  // l in I = {w_0 .. w_l}.
  std::size_t length() const { return tokens.empty() ? 0 : tokens.size() - 1; }
};

inline void validate_instruction(const Instruction& ins, bool require_framing = true) {
  if (ins.tokens.empty()) throw std::invalid_argument("instruction is empty");
  if (ins.tokens.size() > static_cast<std::size_t>(kMaxInstructionTokens))
    throw std::invalid_argument("instruction longer than L_max");
  for (int t : ins.tokens)
    if (t < 0 || t >= kVocabSize) throw std::out_of_range("token id outside vocabulary: " + std::to_string(t));
  if (require_framing && (ins.tokens.size() < 2 || ins.tokens.front() != token::kBos || ins.tokens.back() != token::kEos))
    throw std::invalid_argument("instruction must start with BOS and end with EOS");
}

enum class Split { TrainSeen, ValSeen, ValUnseen, TestUnseen, Augmented };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::TrainSeen: return "train-seen";
    case Split::ValSeen: return "val-seen";
    case Split::ValUnseen: return "val-unseen";
    case Split::TestUnseen: return "test-unseen";
    case Split::Augmented: return "augmented";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  for (Split v : {Split::TrainSeen, Split::ValSeen, Split::ValUnseen, Split::TestUnseen, Split::Augmented})
    if (s == split_name(v)) return v;
  throw std::invalid_argument("unknown split: " + s);
}

struct Episode {
  std::string episode_id;
  std::uint64_t world_seed = 0;
  int start = 0;
  int goal = 0;
  std::vector<int> teacher_path;
  Instruction instruction;
  Split split = Split::TrainSeen;
  double start_heading = 0.0;
};

// Index of the stop candidate at the goal; otherwise the neighbour minimizing
// edge length + remaining geodesic distance (lowest id on ties).
inline int teacher_action(const Episode& episode, const NavGraph& graph, int current_node) {
  const auto& nb = graph.neighbours(current_node);
  if (current_node == episode.goal) return static_cast<int>(nb.size());
  int best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < nb.size(); ++i) {
    const double c = graph.edge_length(current_node, nb[i]) + graph.distance(nb[i], episode.goal);
    if (c < best_cost) {
      best_cost = c;
      best = static_cast<int>(i);
    }
  }
  return best;
}

// Node sequence obtained by following teacher_action from start to goal.
inline std::vector<int> teacher_path(const NavGraph& graph, int start, int goal) {
  Episode probe;
  probe.start = start;
  probe.goal = goal;
  std::vector<int> path{start};
  int cur = start;
  while (cur != goal) {
    const int a = teacher_action(probe, graph, cur);
    cur = graph.neighbours(cur)[static_cast<std::size_t>(a)];
    path.push_back(cur);
    if (path.size() > static_cast<std::size_t>(graph.node_count())) throw std::logic_error("teacher_path: cycle");
  }
  return path;
}

// Quantized turn between the current heading and the hop direction.
inline int direction_token(double heading, double hop_direction) {
  const double d = wrap_angle(hop_direction - heading);
  if (std::abs(d) <= std::numbers::pi / 4.0) return token::kStraight;
  return d > 0 ? token::kLeft : token::kRight;
}

// [BOS, (direction, landmark) per hop, EOS]; a single-node path yields
// [BOS, STOP, EOS]. The seed is accepted for interface stability; the grammar
// has no stochastic choices.
inline Instruction synth_instruction(const std::vector<int>& path, const NavGraph& graph, std::uint64_t seed,
                                     double start_heading = 0.0) {
  (void)seed;
  if (path.empty()) throw std::invalid_argument("synth_instruction: empty path");
  Instruction ins;
  ins.tokens.push_back(token::kBos);
  if (path.size() == 1) {
    graph.node(path[0]);
    ins.tokens.push_back(token::kStop);
  }
  double heading = start_heading;
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (!graph.has_edge(path[i - 1], path[i])) throw std::invalid_argument("synth_instruction: path hop is not an edge");
    const double dir = graph.heading_between(path[i - 1], path[i]);
    ins.tokens.push_back(direction_token(heading, dir));
    ins.tokens.push_back(token::kLandmarkBase + graph.node(path[i]).landmark);
    heading = dir;
  }
  ins.tokens.push_back(token::kEos);
  validate_instruction(ins);
  return ins;
}

struct SplitFractions {
  double train = 0.6;
  double val_seen = 0.1;
  double val_unseen = 0.15;
  double test_unseen = 0.15;
};

struct WorldParams {
  int n_nodes = 10;
  double avg_degree = 3.0;
};

struct WorldAssignment {
  std::vector<std::uint64_t> seen;
  std::vector<std::uint64_t> val_unseen;
  std::vector<std::uint64_t> test_unseen;
};

struct Dataset {
  std::map<std::uint64_t, NavGraph> worlds;
  WorldAssignment assignment;
  std::vector<Episode> episodes;

  const NavGraph& world(std::uint64_t seed) const {
    auto it = worlds.find(seed);
    if (it == worlds.end()) throw std::out_of_range("unknown world seed " + std::to_string(seed));
    return it->second;
  }

  std::vector<const Episode*> split(Split s) const {
    std::vector<const Episode*> out;
    for (const auto& e : episodes)
      if (e.split == s) out.push_back(&e);
    return out;
  }
};

// The last seeds are held out: round(n·f) worlds for val-unseen, then for
// test-unseen (at least one each when the fraction is positive).
inline WorldAssignment assign_worlds(const std::vector<std::uint64_t>& seeds, const SplitFractions& f) {
  if (seeds.empty()) throw std::invalid_argument("make_dataset: empty world seed list");
  const int n = static_cast<int>(seeds.size());
  auto held = [n](double frac) { return frac > 0 ? std::max(1, static_cast<int>(std::lround(n * frac))) : 0; };
  const int n_vu = held(f.val_unseen);
  const int n_test = held(f.test_unseen);
  const int n_seen = n - n_vu - n_test;
  if ((f.train + f.val_seen > 0 && n_seen < 1) || n_seen < 0)
    throw std::invalid_argument("make_dataset: not enough worlds for the requested splits");
  WorldAssignment a;
  a.seen.assign(seeds.begin(), seeds.begin() + n_seen);
  a.val_unseen.assign(seeds.begin() + n_seen, seeds.begin() + n_seen + n_vu);
  a.test_unseen.assign(seeds.begin() + n_seen + n_vu, seeds.end());
  return a;
}

// Largest-remainder apportionment of total over the four fractions.
inline std::array<int, 4> split_counts(int total, const SplitFractions& f) {
  const std::array<double, 4> fr{f.train, f.val_seen, f.val_unseen, f.test_unseen};
  std::array<int, 4> counts{};
  std::array<double, 4> rem{};
  int assigned = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double exact = total * fr[i];
    counts[i] = static_cast<int>(std::floor(exact));
    rem[i] = exact - counts[i];
    assigned += counts[i];
  }
  while (assigned < total) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 4; ++i)
      if (rem[i] > rem[best]) best = i;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

// Samples a (start, goal) pair whose teacher path has 2..kMaxPathNodes nodes.
inline Episode sample_episode(const NavGraph& graph, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int start = static_cast<int>(rng.below(static_cast<std::size_t>(graph.node_count())));
    std::vector<int> goals;
    for (int g = 0; g < graph.node_count(); ++g) {
      if (g == start) continue;
      if (teacher_path(graph, start, g).size() <= static_cast<std::size_t>(kMaxPathNodes)) goals.push_back(g);
    }
    if (goals.empty()) continue;
    Episode e;
    e.world_seed = graph.seed();
    e.start = start;
    e.goal = goals[rng.below(goals.size())];
    e.teacher_path = teacher_path(graph, e.start, e.goal);
    return e;
  }
  throw std::runtime_error("sample_episode: no feasible start/goal pair");
}

inline Dataset make_dataset(const WorldAssignment& assignment, int total_episodes, const SplitFractions& f,
                            const WorldParams& params = {}) {
  const double fsum = f.train + f.val_seen + f.val_unseen + f.test_unseen;
  if (std::abs(fsum - 1.0) > 1e-9) throw std::invalid_argument("make_dataset: split fractions must sum to 1");
  if (f.train < 0 || f.val_seen < 0 || f.val_unseen < 0 || f.test_unseen < 0)
    throw std::invalid_argument("make_dataset: negative split fraction");
  if (total_episodes < 0) throw std::invalid_argument("make_dataset: negative episode count");
  std::vector<std::uint64_t> all = assignment.seen;
  all.insert(all.end(), assignment.val_unseen.begin(), assignment.val_unseen.end());
  all.insert(all.end(), assignment.test_unseen.begin(), assignment.test_unseen.end());
  if (all.empty()) throw std::invalid_argument("make_dataset: empty world seed list");
  {
    auto sorted = all;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("make_dataset: world seed sets overlap between seen and unseen splits");
  }

  Dataset ds;
  ds.assignment = assignment;
  for (auto s : all) ds.worlds.emplace(s, generate_world(s, params.n_nodes, params.avg_degree));

  const auto counts = split_counts(total_episodes, f);
  const std::array<Split, 4> splits{Split::TrainSeen, Split::ValSeen, Split::ValUnseen, Split::TestUnseen};
  const std::array<const std::vector<std::uint64_t>*, 4> pools{&assignment.seen, &assignment.seen,
                                                               &assignment.val_unseen, &assignment.test_unseen};
  for (std::size_t s = 0; s < 4; ++s) {
    if (counts[s] > 0 && pools[s]->empty())
      throw std::invalid_argument(std::string("make_dataset: no worlds for split ") + split_name(splits[s]));
    for (int j = 0; j < counts[s]; ++j) {
      const std::uint64_t ws = (*pools[s])[static_cast<std::size_t>(j) % pools[s]->size()];
      const NavGraph& g = ds.world(ws);
      Rng rng(derive_seed(ws, 0xE915 + s, static_cast<std::uint64_t>(j)));
      Episode e = sample_episode(g, rng);
      char id[48];
      std::snprintf(id, sizeof id, "%s-%05d", split_name(splits[s]), j);
      e.episode_id = id;
      e.split = splits[s];
      e.instruction = synth_instruction(e.teacher_path, g, derive_seed(ws, 0x1057, static_cast<std::uint64_t>(j)));
      ds.episodes.push_back(std::move(e));
    }
  }
  return ds;
}

inline Dataset make_dataset(const std::vector<std::uint64_t>& world_seeds, int episodes_per_world,
                            const SplitFractions& f, const WorldParams& params = {}) {
  if (episodes_per_world < 0) throw std::invalid_argument("make_dataset: negative episodes_per_world");
  return make_dataset(assign_worlds(world_seeds, f), static_cast<int>(world_seeds.size()) * episodes_per_world, f,
                      params);
}

}  // namespace auxrn
