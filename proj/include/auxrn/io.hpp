#pragma once

// Plain-text serialization: graphs and episodes as JSON records, one per
// line, and small helpers for line-delimited logs and CSV.

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxrn/graphworld.hpp"
#include "auxrn/metrics.hpp"

namespace auxrn::io {

using ordered_json = nlohmann::ordered_json;

inline ordered_json graph_to_json(const NavGraph& g) {
  ordered_json j;
  j["seed"] = g.seed();
  ordered_json nodes = ordered_json::array();
  for (const auto& n : g.nodes()) nodes.push_back(ordered_json{{"id", n.id}, {"x", n.x}, {"y", n.y}});
  j["nodes"] = std::move(nodes);
  ordered_json edges = ordered_json::array();
  for (auto [a, b] : g.edges()) edges.push_back(ordered_json::array({a, b}));
  j["edges"] = std::move(edges);
  return j;
}

inline NavGraph graph_from_json(const nlohmann::json& j) {
  std::vector<std::pair<double, double>> pos;
  const auto& nodes = j.at("nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].at("id").get<int>() != static_cast<int>(i)) throw std::invalid_argument("graph: node ids must be 0..n-1 in order");
    pos.emplace_back(nodes[i].at("x").get<double>(), nodes[i].at("y").get<double>());
  }
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  return NavGraph(j.at("seed").get<std::uint64_t>(), pos, std::move(edges));
}

inline ordered_json episode_to_json(const Episode& e) {
  return ordered_json{{"episode_id", e.episode_id}, {"world_seed", e.world_seed}, {"start", e.start},
                      {"goal", e.goal},           {"path", e.teacher_path},   {"token_ids", e.instruction.tokens},
                      {"split", split_name(e.split)}};
}

inline Episode episode_from_json(const nlohmann::json& j) {
  Episode e;
  e.episode_id = j.at("episode_id").get<std::string>();
  e.world_seed = j.at("world_seed").get<std::uint64_t>();
  e.start = j.at("start").get<int>();
  e.goal = j.at("goal").get<int>();
  e.teacher_path = j.at("path").get<std::vector<int>>();
  e.instruction.tokens = j.at("token_ids").get<std::vector<int>>();
  e.split = parse_split(j.at("split").get<std::string>());
  return e;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Range, typename ToJson>
std::string to_jsonl(const Range& items, ToJson&& f) {
  std::string out;
  for (const auto& it : items) {
    out += f(it).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<nlohmann::json> parse_jsonl(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::vector<const NavGraph*> graphs;
  for (const auto& [_, g] : ds.worlds) graphs.push_back(&g);
  write_text(dir / "graphs.jsonl", to_jsonl(graphs, [](const NavGraph* g) { return graph_to_json(*g); }));
  write_text(dir / "dataset.jsonl", to_jsonl(ds.episodes, episode_to_json));
}

inline std::vector<Episode> read_episodes(const std::filesystem::path& file) {
  std::vector<Episode> out;
  for (const auto& j : parse_jsonl(read_text(file))) out.push_back(episode_from_json(j));
  return out;
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  for (const auto& j : parse_jsonl(read_text(dir / "graphs.jsonl"))) {
    NavGraph g = graph_from_json(j);
    ds.worlds.emplace(g.seed(), std::move(g));
  }
  ds.episodes = read_episodes(dir / "dataset.jsonl");
  std::set<std::uint64_t> seen, vu, test;
  for (const auto& e : ds.episodes) {
    ds.world(e.world_seed);
    if (e.split == Split::TrainSeen || e.split == Split::ValSeen) seen.insert(e.world_seed);
    if (e.split == Split::ValUnseen) vu.insert(e.world_seed);
    if (e.split == Split::TestUnseen) test.insert(e.world_seed);
  }
  ds.assignment = {{seen.begin(), seen.end()}, {vu.begin(), vu.end()}, {test.begin(), test.end()}};
  return ds;
}

inline ordered_json metrics_to_json(const EpisodeMetrics& m) {
  return ordered_json{{"episode_id", m.episode_id}, {"TL", m.tl},       {"NE", m.ne},
                      {"OR", m.oracle_success},     {"SR", m.success}, {"SPL", m.spl}};
}

inline std::string fmt(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Rows of a matrix as CSV lines.
inline std::string matrix_csv(const std::vector<std::vector<double>>& rows, const std::vector<std::string>& header = {}) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  if (!header.empty()) out += '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + fmt(r[i], "%.17g");
    out += '\n';
  }
  return out;
}

}  // namespace auxrn::io
