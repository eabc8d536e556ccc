#include "moralgraph/elicitation.hpp"

#include <algorithm>

#include "moralgraph/prompts.hpp"
#include "moralgraph/text.hpp"

namespace moralgraph {

using nlohmann::json;

namespace {

constexpr std::string_view kOpening =
    "Hi, and thanks for joining. Here is something a person might ask an AI assistant:\n\n"
    "\"{{prompt}}\"\n\n"
    "How do you think the assistant should respond? What should it keep in mind?";

constexpr std::string_view kConstitutiveCheck =
    "Before I write this up, I want to check something. Which of these do you care about in "
    "themselves, and not only because they lead somewhere else?\n{{policies}}";

constexpr std::string_view kDraftIntro = "Here is a draft of your values card:\n\n";
constexpr std::string_view kDraftOutro = "\nTell me what you would change, or confirm the card if it fits.";
constexpr std::string_view kDraftFailed =
    "I could not turn that into a card yet. Could you say a bit more about what matters most to you here?";
constexpr std::string_view kLastEdit =
    "\n\nThat was the last round of edits. You can confirm this card or end the session without one.";

std::string_view instruction(StrategyTag tag) {
    switch (tag) {
        case StrategyTag::similar_choices:
            return "Ask what they notice or look for when facing choices like this one, and invite a concrete "
                   "example.";
        case StrategyTag::underlying_good:
            return "They answered with a principle or slogan. Ask what deeper good that principle protects for "
                   "them, and what they would look for if the principle were set aside.";
        case StrategyTag::user_history:
            return "Ask for a moment from their own life when they acted on what they care about here.";
        case StrategyTag::role_models:
            return "Ask about someone they look up to who handles situations like this well, and what that "
                   "person pays attention to.";
    }
    return "";
}

std::string bullet_list(const std::vector<AttentionalPolicy>& policies) {
    if (policies.empty()) return "(none yet)";
    std::string out;
    for (std::size_t i = 0; i < policies.size(); ++i) {
        if (i) out += '\n';
        out += "- " + policies[i].text;
    }
    return out;
}

bool has_policy(const std::vector<AttentionalPolicy>& list, std::string_view text) {
    return std::any_of(list.begin(), list.end(), [&](const auto& p) { return text::iequals(p.text, text); });
}

}  // namespace

std::string_view to_string(Phase phase) {
    switch (phase) {
        case Phase::opening: return "opening";
        case Phase::probing: return "probing";
        case Phase::policy_gathering: return "policy_gathering";
        case Phase::constitutive_check: return "constitutive_check";
        case Phase::card_drafting: return "card_drafting";
        case Phase::card_editing: return "card_editing";
        case Phase::done: return "done";
        case Phase::abandoned: return "abandoned";
    }
    return "opening";
}

std::string_view to_string(StrategyTag tag) {
    switch (tag) {
        case StrategyTag::similar_choices: return "similar_choices";
        case StrategyTag::underlying_good: return "underlying_good";
        case StrategyTag::user_history: return "user_history";
        case StrategyTag::role_models: return "role_models";
    }
    return "similar_choices";
}

std::string_view to_string(MessageClass label) {
    switch (label) {
        case MessageClass::concrete_attention: return "concrete_attention";
        case MessageClass::slogan_or_rule: return "slogan_or_rule";
        case MessageClass::stuck_no_story: return "stuck_no_story";
        case MessageClass::stuck_no_experience: return "stuck_no_experience";
    }
    return "concrete_attention";
}

std::optional<MessageClass> parse_message_class(std::string_view s) {
    for (auto c : {MessageClass::concrete_attention, MessageClass::slogan_or_rule, MessageClass::stuck_no_story,
                   MessageClass::stuck_no_experience}) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

StrategyTag strategy_for(MessageClass label) {
    switch (label) {
        case MessageClass::concrete_attention: return StrategyTag::similar_choices;
        case MessageClass::slogan_or_rule: return StrategyTag::underlying_good;
        case MessageClass::stuck_no_story: return StrategyTag::user_history;
        case MessageClass::stuck_no_experience: return StrategyTag::role_models;
    }
    return StrategyTag::similar_choices;
}

std::string ElicitationSession::first_user_message() const {
    for (const auto& t : transcript)
        if (t.role == Role::user) return t.content;
    return {};
}

Elicitor::Elicitor(Gateway& gateway, std::vector<Scenario> scenarios, ElicitationConfig config)
    : gateway_(gateway), config_(config) {
    if (config_.max_edit_rounds < 1) throw InvalidArgument("max_edit_rounds must be positive");
    for (auto& s : scenarios) {
        auto id = s.id;
        scenarios_.emplace(std::move(id), std::move(s));
    }
}

const Scenario& Elicitor::scenario(const std::string& id) const {
    auto it = scenarios_.find(id);
    if (it == scenarios_.end()) throw NotFound("unknown scenario " + id);
    return it->second;
}

ElicitationSession Elicitor::start_session(const Participant& participant, const std::string& scenario_id,
                                           std::string session_id) const {
    const auto& sc = scenario(scenario_id);
    ElicitationSession s;
    s.id = std::move(session_id);
    s.participant_id = participant.id;
    s.scenario_id = sc.id;
    s.transcript.push_back({Role::assistant, text::fill_template(kOpening, {{"prompt", sc.prompt}}), Phase::opening});
    return s;
}

Elicitor::Classification Elicitor::classify(const ElicitationSession& s, std::string_view message) {
    std::string user = "Phase: " + std::string(to_string(s.phase)) + "\nCandidate policies:\n" +
                       bullet_list(s.draft_policies) + "\nMessage:\n" + std::string(message);
    auto request = make_request(PurposeTag::message_classification,
                                std::string(prompts::get("message_classification")), std::move(user), s.id);
    auto reply = gateway_.complete_chat(request);
    Classification c;
    try {
        auto j = json::parse(text::extract_json_block(reply));
        auto label = parse_message_class(j.at("classification").get<std::string>());
        if (!label) throw GatewayError(GatewayError::Kind::bad_response, "unknown classification in " + reply);
        c.label = *label;
        c.policies = j.value("policies", std::vector<std::string>{});
        c.confirmed = j.value("confirmed", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw GatewayError(GatewayError::Kind::bad_response, std::string("classification reply: ") + e.what());
    }
    return c;
}

std::string Elicitor::probe(const ElicitationSession& s, StrategyTag strategy) {
    ChatRequest request;
    request.purpose = PurposeTag::elicitation;
    request.budget_key = s.id;
    request.messages.push_back({Role::system, text::fill_template(prompts::get("elicitation"),
                                                                  {{"scenario", scenario(s.scenario_id).prompt},
                                                                   {"strategy_instruction", std::string(instruction(strategy))},
                                                                   {"policies", bullet_list(s.draft_policies)}})});
    for (const auto& t : s.transcript) request.messages.push_back({t.role, t.content});
    auto reply = std::string(text::trim(gateway_.complete_chat(request)));
    if (reply.empty()) throw GatewayError(GatewayError::Kind::bad_response, "empty interviewer reply");
    return reply;
}

std::optional<ValuesCard> Elicitor::articulate(const ElicitationSession& s, std::string_view edit_request) {
    std::string user = "Scenario: " + scenario(s.scenario_id).prompt + "\nConfirmed policies:\n" +
                       bullet_list(s.draft_policies) + "\n";
    if (s.draft_card) user += "Current card:\n" + render_card(*s.draft_card);
    if (!edit_request.empty()) user += "Edit request:\n" + std::string(edit_request) + "\n";
    auto reply = gateway_.complete_chat(make_request(
        PurposeTag::card_articulation, std::string(prompts::get("card_articulation")), std::move(user), s.id));
    ValuesCard card;
    try {
        auto j = json::parse(text::extract_json_block(reply));
        card.title = text::squash_whitespace(j.at("title").get<std::string>());
        card.summary = text::squash_whitespace(j.at("summary").get<std::string>());
        for (const auto& p : j.at("policies")) card.policies.push_back({text::squash_whitespace(p.get<std::string>())});
    } catch (const json::exception&) {
        return std::nullopt;
    }
    card.origin = {OriginKind::custom, s.participant_id, s.scenario_id, s.id};
    if (!validate_card(card).ok()) return std::nullopt;
    return card;
}

std::string Elicitor::draft_and_present(ElicitationSession& s, std::string_view edit_request) {
    auto card = articulate(s, edit_request);
    s.confirmed = false;
    if (!card) {
        s.phase = Phase::card_drafting;
        return std::string(kDraftFailed);
    }
    s.draft_card = std::move(card);
    s.phase = Phase::card_editing;
    return std::string(kDraftIntro) + render_card(*s.draft_card) + std::string(kDraftOutro);
}

std::string Elicitor::advance(ElicitationSession& session, std::string_view user_message) {
    if (session.finished()) throw PreconditionFailed("session " + session.id + " is already finished");
    auto message = std::string(text::trim(user_message));
    if (message.empty()) throw InvalidArgument("message is empty");
    if (session.phase == Phase::card_editing && session.edit_rounds >= config_.max_edit_rounds) {
        throw PreconditionFailed("edit limit reached; confirm the card or abandon the session");
    }

    ElicitationSession s = session;
    s.transcript.push_back({Role::user, message, s.phase});
    std::string reply;
    switch (s.phase) {
        case Phase::opening:
        case Phase::probing:
        case Phase::policy_gathering: {
            auto c = classify(s, message);
            std::size_t added = 0;
            for (const auto& raw : c.policies) {
                auto p = text::squash_whitespace(raw);
                if (p.empty() || has_policy(s.draft_policies, p) || s.draft_policies.size() >= kMaxPoliciesPerCard) {
                    continue;
                }
                s.draft_policies.push_back({p});
                ++added;
            }
            if (s.draft_policies.size() >= 2 && added == 0) {
                s.phase = Phase::constitutive_check;
                reply = text::fill_template(kConstitutiveCheck, {{"policies", bullet_list(s.draft_policies)}});
            } else {
                s.phase = s.draft_policies.empty() ? Phase::probing : Phase::policy_gathering;
                auto strategy = strategy_for(c.label);
                s.strategy_history.push_back(strategy);
                reply = probe(s, strategy);
            }
            break;
        }
        case Phase::constitutive_check: {
            auto c = classify(s, message);
            std::vector<AttentionalPolicy> kept;
            for (const auto& p : s.draft_policies) {
                bool yes = std::any_of(c.confirmed.begin(), c.confirmed.end(), [&](const std::string& x) {
                    return text::iequals(text::trim(x), p.text) ||
                           (!p.attention_target().empty() && text::iequals(text::trim(x), p.attention_target()));
                });
                if (yes) kept.push_back(p);
            }
            if (kept.empty()) {
                s.draft_policies.clear();
                s.phase = Phase::policy_gathering;
                auto strategy = strategy_for(c.label);
                s.strategy_history.push_back(strategy);
                reply = probe(s, strategy);
            } else {
                s.draft_policies = std::move(kept);
                s.phase = Phase::card_drafting;
                reply = draft_and_present(s, "");
            }
            break;
        }
        case Phase::card_drafting:
            reply = draft_and_present(s, message);
            break;
        case Phase::card_editing:
            ++s.edit_rounds;
            reply = draft_and_present(s, message);
            if (s.edit_rounds >= config_.max_edit_rounds) {
                s.abandon_offered = true;
                reply += kLastEdit;
            }
            break;
        case Phase::done:
        case Phase::abandoned:
            break;
    }
    s.transcript.push_back({Role::assistant, reply, s.phase});
    session = std::move(s);
    return reply;
}

void Elicitor::confirm(ElicitationSession& session) const {
    if (session.phase != Phase::card_editing || !session.draft_card) {
        throw PreconditionFailed("session " + session.id + " has no card awaiting confirmation");
    }
    session.confirmed = true;
}

ValuesCard Elicitor::finalize_card(ElicitationSession& session, std::string card_id, std::int64_t created_at) const {
    if (!session.confirmed || session.phase != Phase::card_editing || !session.draft_card) {
        throw PreconditionFailed("not confirmed");
    }
    ValuesCard card = *session.draft_card;
    card.id = std::move(card_id);
    card.created_at = created_at;
    card.origin = {OriginKind::custom, session.participant_id, session.scenario_id, session.id};
    auto report = validate_card(card);
    if (!report.ok()) {
        session.phase = Phase::card_drafting;
        session.confirmed = false;
        throw InvalidArgument("card failed validation: " + text::join(report.errors, "; "));
    }
    session.phase = Phase::done;
    session.card_id = card.id;
    session.draft_card = card;
    return card;
}

void Elicitor::abandon(ElicitationSession& session) const {
    if (session.phase == Phase::done) throw PreconditionFailed("session " + session.id + " is already done");
    session.phase = Phase::abandoned;
}

json transcript_json(const ElicitationSession& session) {
    json out = json::array();
    for (const auto& t : session.transcript) out.push_back({{"role", to_string(t.role)}, {"content", t.content}});
    return out;
}

std::string transcript_text(const ElicitationSession& session) {
    std::string out;
    for (const auto& t : session.transcript) {
        out += t.role == Role::user ? "Participant: " : "Assistant: ";
        out += t.content;
        out += '\n';
    }
    return out;
}

void to_json(json& j, const Turn& v) {
    j = json{{"role", v.role}, {"content", v.content}, {"phase", v.phase}};
}

void from_json(const json& j, Turn& v) {
    j.at("role").get_to(v.role);
    j.at("content").get_to(v.content);
    j.at("phase").get_to(v.phase);
}

void to_json(json& j, const ElicitationSession& v) {
    j = json{{"id", v.id},
             {"participant_id", v.participant_id},
             {"scenario_id", v.scenario_id},
             {"transcript", v.transcript},
             {"phase", v.phase},
             {"draft_policies", v.draft_policies},
             {"draft_card", v.draft_card ? json(*v.draft_card) : json(nullptr)},
             {"strategy_history", v.strategy_history},
             {"edit_rounds", v.edit_rounds},
             {"confirmed", v.confirmed},
             {"abandon_offered", v.abandon_offered},
             {"card_id", v.card_id}};
}

void from_json(const json& j, ElicitationSession& v) {
    j.at("id").get_to(v.id);
    j.at("participant_id").get_to(v.participant_id);
    j.at("scenario_id").get_to(v.scenario_id);
    j.at("transcript").get_to(v.transcript);
    j.at("phase").get_to(v.phase);
    j.at("draft_policies").get_to(v.draft_policies);
    if (j.contains("draft_card") && !j.at("draft_card").is_null()) {
        v.draft_card = j.at("draft_card").get<ValuesCard>();
    } else {
        v.draft_card.reset();
    }
    j.at("strategy_history").get_to(v.strategy_history);
    v.edit_rounds = j.value("edit_rounds", 0);
    v.confirmed = j.value("confirmed", false);
    v.abandon_offered = j.value("abandon_offered", false);
    v.card_id = j.value("card_id", std::string());
}

}  // namespace moralgraph
