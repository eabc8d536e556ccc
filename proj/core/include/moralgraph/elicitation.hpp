#pragma once

// Interview state machine that takes a participant from a scenario prompt to a custom values card.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moralgraph/gateway.hpp"
#include "moralgraph/model.hpp"

namespace moralgraph {

enum class Phase { opening, probing, policy_gathering, constitutive_check, card_drafting, card_editing, done, abandoned };

enum class StrategyTag { similar_choices, underlying_good, user_history, role_models };

/// Classifier label for a participant message; each maps to one strategy.
enum class MessageClass { concrete_attention, slogan_or_rule, stuck_no_story, stuck_no_experience };

std::string_view to_string(Phase phase);
std::string_view to_string(StrategyTag tag);
std::string_view to_string(MessageClass label);
std::optional<MessageClass> parse_message_class(std::string_view s);
StrategyTag strategy_for(MessageClass label);

struct Turn {
    Role role = Role::assistant;
    std::string content;
    Phase phase = Phase::opening;

    bool operator==(const Turn&) const = default;
};

struct ElicitationSession {
    std::string id;
    std::string participant_id;
    std::string scenario_id;
    std::vector<Turn> transcript;
    Phase phase = Phase::opening;
    std::vector<AttentionalPolicy> draft_policies;
    std::optional<ValuesCard> draft_card;
    std::vector<StrategyTag> strategy_history;
    int edit_rounds = 0;
    bool confirmed = false;
    bool abandon_offered = false;
    /// Id of the card produced by finalize_card.
    std::string card_id;

    bool finished() const { return phase == Phase::done || phase == Phase::abandoned; }
    /// First participant message, or empty.
    std::string first_user_message() const;
    bool operator==(const ElicitationSession&) const = default;
};

struct ElicitationConfig {
    int max_edit_rounds = 5;
};

class Elicitor {
public:
    Elicitor(Gateway& gateway, std::vector<Scenario> scenarios, ElicitationConfig config = {});

    /// Opening turn quotes the scenario prompt verbatim. Throws NotFound for unknown scenarios.
    ElicitationSession start_session(const Participant& participant, const std::string& scenario_id,
                                     std::string session_id) const;

    /// Handles one participant message and returns the assistant reply. Throws InvalidArgument
    /// for blank messages and PreconditionFailed for finished sessions or exhausted edits; the
    /// session is left unchanged in both cases. Gateway errors propagate with the session
    /// unchanged.
    std::string advance(ElicitationSession& session, std::string_view user_message);

    /// Participant accepts the current draft. Requires card_editing with a draft.
    void confirm(ElicitationSession& session) const;

    /// Requires a confirmed session. A draft that fails validation sends the session back to
    /// card_drafting and throws InvalidArgument.
    ValuesCard finalize_card(ElicitationSession& session, std::string card_id, std::int64_t created_at) const;

    void abandon(ElicitationSession& session) const;

    const Scenario& scenario(const std::string& id) const;

private:
    struct Classification {
        MessageClass label = MessageClass::concrete_attention;
        std::vector<std::string> policies;
        std::vector<std::string> confirmed;
    };

    Classification classify(const ElicitationSession& s, std::string_view message);
    std::string probe(const ElicitationSession& s, StrategyTag strategy);
    std::optional<ValuesCard> articulate(const ElicitationSession& s, std::string_view edit_request);
    std::string draft_and_present(ElicitationSession& s, std::string_view edit_request);

    Gateway& gateway_;
    std::map<std::string, Scenario> scenarios_;
    ElicitationConfig config_;
};

/// Transcript as JSON: [{"role": "...", "content": "..."}].
nlohmann::json transcript_json(const ElicitationSession& session);
/// Transcript as "Participant: ..." / "Assistant: ..." lines.
std::string transcript_text(const ElicitationSession& session);

void to_json(nlohmann::json& j, const Turn& v);
void from_json(const nlohmann::json& j, Turn& v);
void to_json(nlohmann::json& j, const ElicitationSession& v);
void from_json(const nlohmann::json& j, ElicitationSession& v);

NLOHMANN_JSON_SERIALIZE_ENUM(Phase, {{Phase::opening, "opening"},
                                     {Phase::probing, "probing"},
                                     {Phase::policy_gathering, "policy_gathering"},
                                     {Phase::constitutive_check, "constitutive_check"},
                                     {Phase::card_drafting, "card_drafting"},
                                     {Phase::card_editing, "card_editing"},
                                     {Phase::done, "done"},
                                     {Phase::abandoned, "abandoned"}})
NLOHMANN_JSON_SERIALIZE_ENUM(StrategyTag, {{StrategyTag::similar_choices, "similar_choices"},
                                           {StrategyTag::underlying_good, "underlying_good"},
                                           {StrategyTag::user_history, "user_history"},
                                           {StrategyTag::role_models, "role_models"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Role, {{Role::system, "system"}, {Role::user, "user"}, {Role::assistant, "assistant"}})

}  // namespace moralgraph
