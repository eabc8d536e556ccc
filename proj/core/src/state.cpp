#include "moralgraph/state.hpp"

#include <algorithm>

namespace moralgraph {

using nlohmann::json;

void State::apply(const Event& e) {
    if (e.offset != next_offset) {
        throw Error("event offset " + std::to_string(e.offset) + " applied where " + std::to_string(next_offset) +
                    " was expected");
    }
    const auto& p = e.payload;
    switch (e.kind) {
        case EventKind::session_turn: {
            auto participant = p.at("participant").get<Participant>();
            auto session = p.at("session").get<ElicitationSession>();
            participants[participant.id] = std::move(participant);
            sessions[session.id] = std::move(session);
            break;
        }
        case EventKind::card_created: {
            auto card = p.at("card").get<ValuesCard>();
            participant_card[card.origin.participant_id] = card.id;
            custom_cards[card.id] = std::move(card);
            break;
        }
        case EventKind::card_canonicalized: {
            const auto custom_id = p.at("custom_card_id").get<std::string>();
            auto it = custom_cards.find(custom_id);
            if (it == custom_cards.end()) throw Error("canonicalized unknown card " + custom_id);
            auto result = p.at("result").get<CanonicalizeResult>();
            Deduplicator::apply(pool, it->second, result);
            if (result.outcome == CanonicalizeOutcome::deferred) {
                deferred_cards.insert(custom_id);
            } else {
                deferred_cards.erase(custom_id);
                custom_to_canonical[custom_id] = result.canonical_id;
            }
            break;
        }
        case EventKind::story_created: {
            auto story = p.at("story").get<TransitionStory>();
            auto context = p.at("context").get<MoralContext>();
            const auto edge_id = p.at("edge_id").get<std::string>();
            if (!pool.find(story.from_value) || !pool.find(story.to_value)) {
                throw Error("story " + story.id + " links cards outside the canonical pool");
            }
            contexts.try_emplace(context.id, context);
            WisdomEdge edge;
            edge.id = edge_id;
            edge.from_value = story.from_value;
            edge.to_value = story.to_value;
            edge.context = story.context;
            edge.story = story.id;
            edges[edge_id] = std::move(edge);
            story_edge[story.id] = edge_id;
            stories[story.id] = std::move(story);
            break;
        }
        case EventKind::impression: {
            auto kind = p.at("target_kind").get<TargetKind>();
            votes.record_impression(p.at("participant").get<std::string>(), kind, p.at("target_id").get<std::string>());
            break;
        }
        case EventKind::vote: {
            const auto participant = p.at("participant").get<std::string>();
            const auto target = p.at("target_id").get<std::string>();
            if (p.at("target_kind").get<TargetKind>() == TargetKind::story) {
                auto edge = story_edge.find(target);
                if (edge == story_edge.end()) throw Error("vote on unknown story " + target);
                auto choice = p.at("choice").get<VoteChoice>();
                edges.at(edge->second).tallies =
                    votes.record_story_vote(participant, target, edge->second, choice, e.timestamp);
            } else {
                votes.record_card_vote(participant, target, p.at("selected").get<bool>());
            }
            break;
        }
        case EventKind::survey_response: {
            SurveyResponse r;
            r.participant_id = p.at("participant").get<std::string>();
            r.question = p.at("question").get<std::string>();
            r.value = p.at("value").get<int>();
            r.card_id = p.value("card_id", std::string());
            r.custom_card_id = p.value("custom_card_id", std::string());
            r.timestamp = e.timestamp;
            if (r.question == kEndorsementQuestion && !r.card_id.empty()) {
                pool.endorse(r.card_id, {r.participant_id, r.custom_card_id, r.value >= 4});
            }
            surveys.push_back(std::move(r));
            break;
        }
        case EventKind::aggregation_run:
            last_aggregation = p.at("aggregation").get<Aggregation>();
            break;
    }
    ++next_offset;
}

void State::apply_all(const std::vector<Event>& events) {
    for (const auto& e : events)
        if (e.offset >= next_offset) apply(e);
}

const Scenario* State::find_scenario(const std::string& id) const {
    for (const auto& s : scenarios)
        if (s.id == id) return &s;
    return nullptr;
}

std::optional<std::string> State::canonical_for_participant(const std::string& participant) const {
    auto card = participant_card.find(participant);
    if (card == participant_card.end()) return std::nullopt;
    auto canon = custom_to_canonical.find(card->second);
    if (canon == custom_to_canonical.end()) return std::nullopt;
    return canon->second;
}

MoralGraph State::graph() const {
    MoralGraph g;
    g.scenarios = scenarios;
    for (const auto& [id, c] : contexts) g.contexts.push_back(c);
    for (const auto& [id, p] : participants) g.participants.push_back(p);
    g.values = pool.cards();
    std::sort(g.values.begin(), g.values.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (const auto& [id, e] : edges) g.edges.push_back(e);
    return g;
}

void to_json(json& j, const SurveyResponse& v) {
    j = json{{"participant_id", v.participant_id}, {"question", v.question},        {"value", v.value},
             {"card_id", v.card_id},               {"custom_card_id", v.custom_card_id}, {"timestamp", v.timestamp}};
}

void from_json(const json& j, SurveyResponse& v) {
    j.at("participant_id").get_to(v.participant_id);
    j.at("question").get_to(v.question);
    j.at("value").get_to(v.value);
    j.at("card_id").get_to(v.card_id);
    j.at("custom_card_id").get_to(v.custom_card_id);
    j.at("timestamp").get_to(v.timestamp);
}

void to_json(json& j, const State& v) {
    json edges = json::array();
    for (const auto& [id, e] : v.edges) edges.push_back(e);
    json stories = json::array();
    for (const auto& [id, s] : v.stories) stories.push_back(s);
    json sessions = json::array();
    for (const auto& [id, s] : v.sessions) sessions.push_back(s);
    json cards = json::array();
    for (const auto& [id, c] : v.custom_cards) cards.push_back(c);
    json participants = json::array();
    for (const auto& [id, p] : v.participants) participants.push_back(p);
    json contexts = json::array();
    for (const auto& [id, c] : v.contexts) contexts.push_back(c);
    j = json{{"next_offset", v.next_offset},
             {"scenarios", v.scenarios},
             {"participants", participants},
             {"sessions", sessions},
             {"custom_cards", cards},
             {"participant_card", v.participant_card},
             {"custom_to_canonical", v.custom_to_canonical},
             {"deferred_cards", v.deferred_cards},
             {"pool", v.pool},
             {"contexts", contexts},
             {"stories", stories},
             {"edges", edges},
             {"story_edge", v.story_edge},
             {"votes", v.votes},
             {"surveys", v.surveys},
             {"last_aggregation", v.last_aggregation ? json(*v.last_aggregation) : json(nullptr)}};
}

void from_json(const json& j, State& v) {
    v = State{};
    j.at("next_offset").get_to(v.next_offset);
    j.at("scenarios").get_to(v.scenarios);
    for (const auto& p : j.at("participants")) {
        auto x = p.get<Participant>();
        v.participants[x.id] = x;
    }
    for (const auto& s : j.at("sessions")) {
        auto x = s.get<ElicitationSession>();
        v.sessions[x.id] = x;
    }
    for (const auto& c : j.at("custom_cards")) {
        auto x = c.get<ValuesCard>();
        v.custom_cards[x.id] = x;
    }
    j.at("participant_card").get_to(v.participant_card);
    j.at("custom_to_canonical").get_to(v.custom_to_canonical);
    j.at("deferred_cards").get_to(v.deferred_cards);
    j.at("pool").get_to(v.pool);
    for (const auto& c : j.at("contexts")) {
        auto x = c.get<MoralContext>();
        v.contexts[x.id] = x;
    }
    for (const auto& s : j.at("stories")) {
        auto x = s.get<TransitionStory>();
        v.stories[x.id] = x;
    }
    for (const auto& e : j.at("edges")) {
        auto x = e.get<WisdomEdge>();
        v.edges[x.id] = x;
    }
    j.at("story_edge").get_to(v.story_edge);
    j.at("votes").get_to(v.votes);
    j.at("surveys").get_to(v.surveys);
    if (!j.at("last_aggregation").is_null()) v.last_aggregation = j.at("last_aggregation").get<Aggregation>();
}

}  // namespace moralgraph
