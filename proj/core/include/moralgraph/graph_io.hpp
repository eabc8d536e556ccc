#pragma once

// Graph export document and its validating import.

#include <filesystem>

#include <nlohmann/json.hpp>

#include "moralgraph/model.hpp"

namespace moralgraph {

inline constexpr int kGraphFormatVersion = 1;

/// {format_version, scenarios, contexts, participants, values, edges, omissions} plus, when the
/// graph is aggregated, {scores, winners, removed_cycle_edges, cycles, acceptance, pagerank,
/// scope, drop_entire_cycle, converged, iterations}. Omitted edges are listed under omissions
/// and nowhere else.
nlohmann::json export_graph(const MoralGraph& graph);

/// Inverse of export_graph; edges come back ordered by id. Throws SchemaError listing every problem with its path.
MoralGraph import_graph(const nlohmann::json& document);

/// Two-space indented export followed by a newline; stable byte-for-byte for equal graphs.
std::string export_graph_text(const MoralGraph& graph);
MoralGraph load_graph_file(const std::filesystem::path& path);

}  // namespace moralgraph
