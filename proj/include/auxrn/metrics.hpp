#pragma once

// TL / NE / OR / SR / SPL navigation metrics.

#include <algorithm>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxrn/graphworld.hpp"

namespace auxrn {

enum class DistanceKind { Geodesic, Euclidean };

struct EpisodeMetrics {
  std::string episode_id;
  double tl = 0.0;  // meters traversed
  double ne = 0.0;  // final distance to goal
  int oracle_success = 0;
  int success = 0;
  double spl = 0.0;
};

struct MetricSummary {
  std::size_t episodes = 0;
  double ne = 0.0;
  double oracle_success = 0.0;
  double success = 0.0;
  double spl = 0.0;
  double tl = 0.0;
};

inline double goal_distance(const NavGraph& g, int node, int goal, DistanceKind kind) {
  return kind == DistanceKind::Geodesic ? g.distance(node, goal) : g.euclidean(node, goal);
}

// SPL = SR · ℓ / max(TL, ℓ), ℓ the shortest-path length from start to goal.
inline EpisodeMetrics evaluate(const std::vector<int>& trajectory, const Episode& episode, const NavGraph& graph,
                               double success_radius = 1.0, DistanceKind kind = DistanceKind::Geodesic) {
  if (trajectory.empty() || trajectory.front() != episode.start)
    throw std::invalid_argument("evaluate: trajectory must begin at the episode start node");
  EpisodeMetrics m;
  m.episode_id = episode.episode_id;
  bool reached = goal_distance(graph, trajectory.front(), episode.goal, kind) <= success_radius;
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    m.tl += graph.edge_length(trajectory[i - 1], trajectory[i]);
    reached = reached || goal_distance(graph, trajectory[i], episode.goal, kind) <= success_radius;
  }
  m.ne = goal_distance(graph, trajectory.back(), episode.goal, kind);
  m.success = m.ne <= success_radius ? 1 : 0;
  m.oracle_success = reached ? 1 : 0;
  const double shortest = graph.distance(episode.start, episode.goal);
  const double denom = std::max(m.tl, shortest);
  m.spl = m.success == 0 ? 0.0 : (denom > 0.0 ? shortest / denom : 1.0);
  return m;
}

inline MetricSummary aggregate(const std::vector<EpisodeMetrics>& per_episode) {
  MetricSummary s;
  s.episodes = per_episode.size();
  if (per_episode.empty()) return s;
  for (const auto& m : per_episode) {
    s.ne += m.ne;
    s.oracle_success += m.oracle_success;
    s.success += m.success;
    s.spl += m.spl;
    s.tl += m.tl;
  }
  const double n = static_cast<double>(per_episode.size());
  s.ne /= n;
  s.oracle_success /= n;
  s.success /= n;
  s.spl /= n;
  s.tl /= n;
  return s;
}

// Fixed column order: NE, OR, SR, SPL, TL.
inline std::string summary_header() { return "split           episodes      NE      OR      SR     SPL      TL"; }

inline std::string summary_row(const std::string& split, const MetricSummary& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-15s %8zu %7.3f %7.3f %7.3f %7.3f %7.3f", split.c_str(), s.episodes, s.ne,
                s.oracle_success, s.success, s.spl, s.tl);
  return buf;
}

}  // namespace auxrn
