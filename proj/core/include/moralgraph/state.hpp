#pragma once

// Derived state: a pure fold over the event log.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "moralgraph/aggregation.hpp"
#include "moralgraph/dedup.hpp"
#include "moralgraph/elicitation.hpp"
#include "moralgraph/events.hpp"
#include "moralgraph/model.hpp"
#include "moralgraph/stories.hpp"

namespace moralgraph {

/// Survey question recording whether a deduplicated card still represents its author.
inline constexpr std::string_view kEndorsementQuestion = "represents_me";

struct SurveyResponse {
    std::string participant_id;
    std::string question;
    int value = 0;
    std::string card_id;
    std::string custom_card_id;
    std::int64_t timestamp = 0;

    bool operator==(const SurveyResponse&) const = default;
};

struct State {
    std::vector<Scenario> scenarios;
    std::map<std::string, Participant> participants;
    std::map<std::string, ElicitationSession> sessions;
    std::map<std::string, ValuesCard> custom_cards;
    /// participant -> custom card id
    std::map<std::string, std::string> participant_card;
    std::map<std::string, std::string> custom_to_canonical;
    std::set<std::string> deferred_cards;
    CanonicalPool pool;
    std::map<std::string, MoralContext> contexts;
    std::map<std::string, TransitionStory> stories;
    std::map<std::string, WisdomEdge> edges;
    std::map<std::string, std::string> story_edge;
    VoteLedger votes;
    std::vector<SurveyResponse> surveys;
    std::optional<Aggregation> last_aggregation;
    std::int64_t next_offset = 0;

    State() = default;
    explicit State(std::vector<Scenario> scenarios) : scenarios(std::move(scenarios)) {}

    /// Applies one event. Events must arrive in offset order; throws Error on gaps or on an
    /// event inconsistent with the state.
    void apply(const Event& event);
    void apply_all(const std::vector<Event>& events);

    const Scenario* find_scenario(const std::string& id) const;
    /// Canonical id for a participant's card, if it has been deduplicated.
    std::optional<std::string> canonical_for_participant(const std::string& participant) const;

    /// Scenarios, contexts, participants, canonical values and edges with live tallies.
    /// No aggregation attached.
    MoralGraph graph() const;

    bool operator==(const State&) const = default;
};

void to_json(nlohmann::json& j, const SurveyResponse& v);
void from_json(const nlohmann::json& j, SurveyResponse& v);
void to_json(nlohmann::json& j, const State& v);
void from_json(const nlohmann::json& j, State& v);

}  // namespace moralgraph
