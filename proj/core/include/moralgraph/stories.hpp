#pragma once

// Transition stories between canonical values, story and card selection for voters, and the
// vote ledger whose fold produces edge tallies.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "moralgraph/dedup.hpp"
#include "moralgraph/gateway.hpp"
#include "moralgraph/model.hpp"

namespace moralgraph {

struct PolicyMapping {
    std::string old_policy;
    std::string change;

    bool operator==(const PolicyMapping&) const = default;
};

struct TransitionStory {
    std::string id;
    std::string from_value;
    std::string to_value;
    std::string context;
    std::string shared_good;
    std::string clarification;
    std::vector<PolicyMapping> policy_mappings;
    std::string final_story;

    bool operator==(const TransitionStory&) const = default;
};

/// Every chain field is filled and every policy of `from` has a mapping, in order.
bool chain_complete(const TransitionStory& story, const ValuesCard& from);

struct UpgradePair {
    std::string from;
    std::string to;

    bool operator==(const UpgradePair&) const = default;
};

class StoryEngine {
public:
    explicit StoryEngine(Gateway& gateway) : gateway_(gateway) {}

    /// Ordered (less wise, wiser) pairs among `cards` for `context`, skipping pairs that already
    /// have an edge in that context. Fewer than two cards or a gateway failure yields [].
    std::vector<UpgradePair> cluster_upgrade_pairs(const std::vector<ValuesCard>& cards, const MoralContext& context,
                                                   const std::vector<WisdomEdge>& existing_edges);

    /// Runs the chain: shared good, clarification, one mapping per source policy, final story.
    /// Throws PreconditionFailed when from and to are the same card; any gateway error
    /// propagates and nothing is returned.
    TransitionStory generate_story(const ValuesCard& from, const ValuesCard& to, const MoralContext& context,
                                   std::string story_id);

private:
    Gateway& gateway_;
};

// ---- selection ----------------------------------------------------------------------------

/// Up to `n` story ids ordered by ascending cosine distance between the participant's card
/// embedding and each story's from_value embedding, ties by story id.
/// Throws PreconditionFailed when the participant has no card.
std::vector<std::string> select_stories(const std::optional<EmbeddingVector>& participant_card,
                                        const std::vector<TransitionStory>& stories, const CanonicalPool& pool,
                                        std::size_t n = 3);

struct ImpressionCounts {
    std::int64_t impressions = 0;
    std::int64_t votes = 0;

    /// votes / impressions, zero before the first impression.
    double hotness() const;
    bool operator==(const ImpressionCounts&) const = default;
};

struct SlateConfig {
    std::size_t hottest = 12;
    std::size_t newest = 12;
    std::size_t slate = 6;
};

/// Union of the hottest and newest canonical cards, re-ranked by embedding distance to the
/// participant's card, first `slate` kept. Cards in `exclude` are never offered.
std::vector<std::string> select_vote_candidates(const std::optional<EmbeddingVector>& participant_card,
                                                const CanonicalPool& pool,
                                                const std::map<std::string, ImpressionCounts>& impressions,
                                                const std::set<std::string>& exclude = {}, SlateConfig config = {});

// ---- votes --------------------------------------------------------------------------------

enum class TargetKind { story, card };

/// Impressions and live votes. Story votes fold into edge tallies; card votes feed hotness.
class VoteLedger {
public:
    void record_impression(const std::string& participant, TargetKind kind, const std::string& target);
    bool shown(const std::string& participant, TargetKind kind, const std::string& target) const;

    /// Upserts the participant's vote on the story's edge and returns the refolded tallies.
    /// Throws PreconditionFailed when the story was never shown to the participant.
    Tallies record_story_vote(const std::string& participant, const std::string& story_id,
                              const std::string& edge_id, VoteChoice choice, std::int64_t timestamp);

    /// Upserts a card selection. Throws PreconditionFailed when the card was never shown.
    void record_card_vote(const std::string& participant, const std::string& card_id, bool selected);

    Tallies tallies(const std::string& edge_id) const;
    std::vector<WisdomVote> live_votes(const std::string& edge_id) const;
    std::vector<WisdomVote> all_votes() const;

    /// Per card: times shown and live selections.
    std::map<std::string, ImpressionCounts> card_counts() const;
    /// Live card selections by participant.
    std::map<std::string, std::set<std::string>> card_selections() const;
    const std::map<std::string, std::set<std::string>>& story_impressions() const { return story_shown_; }
    std::int64_t card_impressions(const std::string& card) const;

    bool operator==(const VoteLedger&) const = default;

    friend void to_json(nlohmann::json& j, const VoteLedger& v);
    friend void from_json(const nlohmann::json& j, VoteLedger& v);

private:
    // participant -> targets shown
    std::map<std::string, std::set<std::string>> story_shown_;
    std::map<std::string, std::set<std::string>> card_shown_;
    std::map<std::string, std::int64_t> card_impression_count_;
    // edge -> participant -> vote
    std::map<std::string, std::map<std::string, WisdomVote>> story_votes_;
    // card -> participant -> selected
    std::map<std::string, std::map<std::string, bool>> card_votes_;
};

void to_json(nlohmann::json& j, const PolicyMapping& v);
void from_json(const nlohmann::json& j, PolicyMapping& v);
void to_json(nlohmann::json& j, const TransitionStory& v);
void from_json(const nlohmann::json& j, TransitionStory& v);

NLOHMANN_JSON_SERIALIZE_ENUM(TargetKind, {{TargetKind::story, "story"}, {TargetKind::card, "card"}})

}  // namespace moralgraph
