#pragma once

// Edge acceptance, cycle breaking, PageRank, winners per context, context matching and
// alignment-target export.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "moralgraph/gateway.hpp"
#include "moralgraph/model.hpp"

namespace moralgraph {

// ---- acceptance ---------------------------------------------------------------------------

/// Throws InvalidArgument unless min_votes >= 1 and min_wiser_ratio is in (0.5, 1].
void validate(const AcceptancePolicy& policy);
void validate(const PageRankParams& params);

/// wiser / considered votes, where unsure votes count against when policy.count_unsure is set.
/// Zero when nothing was considered.
double wiser_ratio(const Tallies& t, bool count_unsure = false);

EdgeStatus classify_edge(const Tallies& t, const AcceptancePolicy& policy);

/// Assigns a status to every edge from its tallies.
void accept_edges(std::vector<WisdomEdge>& edges, const AcceptancePolicy& policy);

// ---- cycles -------------------------------------------------------------------------------

struct DetectedCycle {
    /// Edge ids in traversal order.
    std::vector<std::string> edges;
    std::vector<std::string> removed;
};

struct CycleBreakResult {
    std::vector<WisdomEdge> kept;
    std::vector<std::string> removed;
    std::vector<DetectedCycle> cycles;
};

/// Repeatedly finds the shortest cycle through the smallest node of the first strongly connected
/// component and removes its weakest edge (fewest wiser votes, then lowest ratio, then id), or
/// every edge on it when drop_entire_cycle is set. Output is acyclic.
CycleBreakResult detect_and_break_cycles(std::vector<WisdomEdge> edges, bool drop_entire_cycle = false);

bool is_acyclic(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges);

// ---- pagerank -----------------------------------------------------------------------------

struct PageRankResult {
    std::vector<double> scores;
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;
};

/// Power iteration over nodes 0..n-1. Edges point from the less wise to the wiser node and count
/// with multiplicity. Teleport is uniform and dangling mass is spread uniformly.
PageRankResult pagerank(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                        const PageRankParams& params = {});

struct ValueScores {
    std::map<std::string, double> scores;
    bool converged = false;
    int iterations = 0;
};

/// Throws InvalidArgument when an edge endpoint is not among values.
ValueScores pagerank(const std::vector<std::string>& values, const std::vector<WisdomEdge>& edges,
                     const PageRankParams& params = {});

// ---- winners ------------------------------------------------------------------------------

/// Winner per context: highest score among values touching the context's accepted, non-removed
/// edges, else among canonical cards from the context's scenario. Ties go to the smaller id.
std::map<std::string, std::string> winners_by_context(const MoralGraph& graph,
                                                      const std::map<std::string, double>& scores,
                                                      const std::vector<std::string>& removed_edges = {});

struct AggregationConfig {
    AcceptancePolicy acceptance;
    PageRankParams pagerank;
    RankingScope scope = RankingScope::global;
    bool drop_entire_cycle = false;
};

/// Full pass: statuses, cycle removal, scores and winners. Writes statuses into graph.edges and
/// stores the result in graph.aggregation.
const Aggregation& aggregate(MoralGraph& graph, const AggregationConfig& config = {});

/// Accepted edges minus the ones removed while breaking cycles.
std::vector<const WisdomEdge*> effective_edges(const MoralGraph& graph);

/// 1-based rank of `target` among `cohort` ordered by descending score, ties by id.
/// Throws NotFound when target is not in cohort.
int rank_of(const std::string& target, const std::vector<std::string>& cohort,
            const std::map<std::string, double>& scores);

// ---- contexts -----------------------------------------------------------------------------

/// One to five normalized, case-insensitively distinct "When ..." strings.
std::vector<std::string> derive_contexts(Gateway& gateway, std::string_view text);

struct ContextMatch {
    std::string context_id;
    double similarity = 0.0;
};

inline constexpr double kDefaultContextMatchThreshold = 0.5;

/// Nearest context by embedding cosine (ties by id); none when below threshold.
std::optional<ContextMatch> match_context(Gateway& gateway, std::string_view candidate,
                                          const std::vector<MoralContext>& contexts,
                                          double threshold = kDefaultContextMatchThreshold);

struct Retrieval {
    bool guidance = false;
    std::string context_id;
    std::string context_text;
    std::string winner_id;
    double similarity = 0.0;
    std::string rationale;
};

/// derive_contexts, then match_context, then the matched context's winner. Reports no guidance
/// instead of guessing when nothing matches.
Retrieval retrieve_value_for_state(Gateway& gateway, std::string_view state, const MoralGraph& graph,
                                   double threshold = kDefaultContextMatchThreshold);

// ---- alignment target ---------------------------------------------------------------------

struct AlignmentTargetRecord {
    std::string context;
    std::string preferred;
    std::string dispreferred;
    std::vector<std::string> provenance;
    bool transitive = false;

    bool operator==(const AlignmentTargetRecord&) const = default;
};

/// One record per effective edge (ordered by context, then edge id). With include_transitive,
/// every pair reachable in two or more steps within a context follows, carrying the edge ids of
/// a shortest path as provenance.
std::vector<AlignmentTargetRecord> export_alignment_target(const MoralGraph& graph, bool include_transitive);

std::string to_jsonl(const std::vector<AlignmentTargetRecord>& records);

void to_json(nlohmann::json& j, const AlignmentTargetRecord& r);
void to_json(nlohmann::json& j, const Aggregation& a);
void from_json(const nlohmann::json& j, Aggregation& a);

}  // namespace moralgraph
