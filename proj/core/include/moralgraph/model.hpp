#pragma once

// Domain types for scenarios, participants, contexts, values cards, wisdom edges and votes.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace moralgraph {

inline constexpr std::size_t kMaxPoliciesPerCard = 10;
inline constexpr std::size_t kMaxContextLength = 120;

struct Scenario {
    std::string id;
    std::string prompt;
    std::string tag;

    bool operator==(const Scenario&) const = default;
};

struct Participant {
    std::string id;
    std::map<std::string, std::string> demographics;
    std::string chosen_scenario;

    bool operator==(const Participant&) const = default;
};

/// A short "When ..." string naming a morally valent aspect of a scenario.
struct MoralContext {
    std::string id;
    std::string text;
    std::string source_scenario;

    bool operator==(const MoralContext&) const = default;
};

/// Normalizes free text into context form: trimmed, single line, starts with "When",
/// at most kMaxContextLength characters. Returns empty when nothing usable remains.
std::string normalize_context_text(std::string_view raw);

/// One line of a values card, e.g. "EXAMPLES of discipline that can inspire the user".
struct AttentionalPolicy {
    std::string text;

    /// Leading run of fully capitalized words ("SENSE OF ACHIEVEMENT"); empty if none.
    std::string attention_target() const;

    bool operator==(const AttentionalPolicy&) const = default;
};

enum class OriginKind { custom, canonical };

struct CardOrigin {
    OriginKind kind = OriginKind::custom;
    std::string participant_id;
    std::string scenario_id;
    std::string session_id;

    bool operator==(const CardOrigin&) const = default;
};

struct ValuesCard {
    std::string id;
    std::string title;
    std::string summary;
    std::vector<AttentionalPolicy> policies;
    CardOrigin origin;
    /// Custom card ids coalesced into this card (canonical cards only).
    std::vector<std::string> canonical_of;
    std::int64_t created_at = 0;

    bool is_canonical() const { return origin.kind == OriginKind::canonical; }
    bool operator==(const ValuesCard&) const = default;
};

/// True when title, summary and policies match, ignoring identity and provenance.
bool same_content(const ValuesCard& a, const ValuesCard& b);

struct ValidationReport {
    std::vector<std::string> errors;
    std::vector<std::string> warnings;

    bool ok() const { return errors.empty(); }
};

ValidationReport validate_card(const ValuesCard& card);

/// Canonical plain-text block:
///
///     Title: <title>
///     Summary: <summary>
///     Policies:
///     - <policy>
///
/// Throws InvalidArgument for invalid cards.
std::string render_card(const ValuesCard& card);

/// Inverse of render_card for the content fields. Throws InvalidArgument on malformed text.
ValuesCard parse_card(std::string_view text);

enum class VoteChoice { wiser, not_wiser, unsure };

std::string_view to_string(VoteChoice choice);
std::optional<VoteChoice> parse_vote_choice(std::string_view text);

struct WisdomVote {
    std::string participant_id;
    std::string edge_id;
    VoteChoice choice = VoteChoice::unsure;
    std::int64_t timestamp = 0;

    bool operator==(const WisdomVote&) const = default;
};

struct Tallies {
    std::int64_t wiser = 0;
    std::int64_t not_wiser = 0;
    std::int64_t unsure = 0;

    std::int64_t total() const { return wiser + not_wiser + unsure; }
    void add(VoteChoice choice, std::int64_t delta = 1);
    bool operator==(const Tallies&) const = default;
};

/// Fold of live votes into per-bucket counts.
Tallies tally(const std::vector<WisdomVote>& votes);

enum class EdgeStatus { candidate, accepted, rejected, omitted };

std::string_view to_string(EdgeStatus status);

/// Directed (less wise -> wiser) relation between two canonical cards within one context.
struct WisdomEdge {
    std::string id;
    std::string from_value;
    std::string to_value;
    std::string context;
    std::string story;
    Tallies tallies;
    EdgeStatus status = EdgeStatus::candidate;

    bool operator==(const WisdomEdge&) const = default;
};

struct AcceptancePolicy {
    std::int64_t min_votes = 3;
    double min_wiser_ratio = 0.66;
    bool count_unsure = false;

    bool operator==(const AcceptancePolicy&) const = default;
};

struct PageRankParams {
    double damping = 0.85;
    double tolerance = 1e-9;
    int max_iterations = 200;

    bool operator==(const PageRankParams&) const = default;
};

enum class RankingScope { global, per_context };

struct Aggregation {
    std::map<std::string, double> scores;
    std::map<std::string, std::string> winners;
    std::vector<std::string> removed_cycle_edges;
    /// Each detected cycle as the edge ids it consisted of.
    std::vector<std::vector<std::string>> cycles;
    AcceptancePolicy acceptance;
    PageRankParams pagerank;
    RankingScope scope = RankingScope::global;
    bool drop_entire_cycle = false;
    bool converged = true;
    int iterations = 0;

    bool operator==(const Aggregation&) const = default;
};

struct MoralGraph {
    std::vector<Scenario> scenarios;
    std::vector<MoralContext> contexts;
    std::vector<Participant> participants;
    std::vector<ValuesCard> values;
    std::vector<WisdomEdge> edges;
    std::optional<Aggregation> aggregation;

    const ValuesCard* find_value(std::string_view id) const;
    const MoralContext* find_context(std::string_view id) const;
    bool operator==(const MoralGraph&) const = default;
};

/// Structural invariants: endpoints and contexts exist, scores sum to one, winners known.
std::vector<std::string> check_graph_invariants(const MoralGraph& graph);

// JSON (stable field names).
void to_json(nlohmann::json& j, const Scenario& v);
void from_json(const nlohmann::json& j, Scenario& v);
void to_json(nlohmann::json& j, const Participant& v);
void from_json(const nlohmann::json& j, Participant& v);
void to_json(nlohmann::json& j, const MoralContext& v);
void from_json(const nlohmann::json& j, MoralContext& v);
void to_json(nlohmann::json& j, const AttentionalPolicy& v);
void from_json(const nlohmann::json& j, AttentionalPolicy& v);
void to_json(nlohmann::json& j, const CardOrigin& v);
void from_json(const nlohmann::json& j, CardOrigin& v);
void to_json(nlohmann::json& j, const ValuesCard& v);
void from_json(const nlohmann::json& j, ValuesCard& v);
void to_json(nlohmann::json& j, const WisdomVote& v);
void from_json(const nlohmann::json& j, WisdomVote& v);
void to_json(nlohmann::json& j, const Tallies& v);
void from_json(const nlohmann::json& j, Tallies& v);
void to_json(nlohmann::json& j, const WisdomEdge& v);
void from_json(const nlohmann::json& j, WisdomEdge& v);
void to_json(nlohmann::json& j, const AcceptancePolicy& v);
void from_json(const nlohmann::json& j, AcceptancePolicy& v);
void to_json(nlohmann::json& j, const PageRankParams& v);
void from_json(const nlohmann::json& j, PageRankParams& v);

NLOHMANN_JSON_SERIALIZE_ENUM(OriginKind, {{OriginKind::custom, "custom"}, {OriginKind::canonical, "canonical"}})
NLOHMANN_JSON_SERIALIZE_ENUM(VoteChoice, {{VoteChoice::wiser, "wiser"},
                                          {VoteChoice::not_wiser, "not_wiser"},
                                          {VoteChoice::unsure, "unsure"}})
NLOHMANN_JSON_SERIALIZE_ENUM(EdgeStatus, {{EdgeStatus::candidate, "candidate"},
                                          {EdgeStatus::accepted, "accepted"},
                                          {EdgeStatus::rejected, "rejected"},
                                          {EdgeStatus::omitted, "omitted"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RankingScope, {{RankingScope::global, "global"}, {RankingScope::per_context, "per_context"}})

}  // namespace moralgraph
