#include "moralgraph/analytics.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "moralgraph/prompts.hpp"
#include "moralgraph/text.hpp"

namespace moralgraph {

using nlohmann::json;

std::string_view to_string(IdeologyBucket bucket) {
    switch (bucket) {
        case IdeologyBucket::not_ideological: return "not";
        case IdeologyBucket::slightly: return "slightly";
        case IdeologyBucket::very: return "very";
    }
    return "not";
}

IdeologyBucket ideology_bucket(int score) {
    if (score < 1 || score > 5) throw InvalidArgument("ideology score must be between 1 and 5");
    if (score <= 2) return IdeologyBucket::not_ideological;
    if (score == 3) return IdeologyBucket::slightly;
    return IdeologyBucket::very;
}

namespace {

/// "4", "4.", " 4\n" -> 4. Anything else -> nullopt.
std::optional<int> parse_score(std::string_view reply) {
    auto t = text::trim(reply);
    while (!t.empty() && (t.back() == '.' || t.back() == '!')) t.remove_suffix(1);
    if (t.size() != 1 || t[0] < '1' || t[0] > '5') return std::nullopt;
    return t[0] - '0';
}

std::string squash_answer(std::string_view reply) {
    auto t = text::lower(text::trim(reply));
    while (!t.empty() && (t.back() == '.' || t.back() == '!')) t.pop_back();
    return t;
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << std::fixed << v;
    return out.str();
}

}  // namespace

IdeologyRating rate_ideology(Gateway& gateway, std::string_view message) {
    auto msg = text::trim(message);
    if (msg.empty()) throw InvalidArgument("cannot rate an empty message");
    auto request = make_request(PurposeTag::ideology_judge, std::string(prompts::get("ideology_judge")), std::string(msg));
    std::string reply;
    for (int attempt = 0; attempt < 2; ++attempt) {
        reply = gateway.complete_chat(request);
        if (auto score = parse_score(reply)) return {*score, ideology_bucket(*score)};
    }
    throw GatewayError(GatewayError::Kind::bad_response, "ideology judge did not answer with a number: " + reply);
}

bool detect_experience(Gateway& gateway, const ElicitationSession& session, std::string_view experience) {
    if (session.first_user_message().empty()) throw InvalidArgument("transcript has no participant messages");
    if (text::trim(experience).empty()) throw InvalidArgument("experience description is empty");
    auto system = text::fill_template(prompts::get("experience_judge"), {{"experience", std::string(experience)}});
    auto reply = gateway.complete_chat(
        make_request(PurposeTag::experience_judge, std::move(system), transcript_text(session), session.id));
    auto answer = squash_answer(reply);
    if (answer == "yes") return true;
    if (answer == "no") return false;
    throw GatewayError(GatewayError::Kind::bad_response, "experience judge gave an ambiguous answer: " + reply);
}

// ---- trajectories -------------------------------------------------------------------------

RankTrajectory scaling_trajectory(const std::vector<Event>& events, const std::vector<Scenario>& scenarios,
                                  const std::string& target, const AggregationConfig& config, std::size_t stride) {
    if (stride == 0) throw InvalidArgument("stride must be positive");
    RankTrajectory out;
    out.target = target;
    State state(scenarios);
    std::int64_t votes = 0;

    auto record = [&](std::int64_t processed) {
        const auto* card = state.pool.find(target);
        if (!card) return;
        std::vector<std::string> cohort;
        for (const auto& c : state.pool.cards())
            if (c.origin.scenario_id == card->origin.scenario_id) cohort.push_back(c.id);
        auto graph = state.graph();
        const auto& agg = aggregate(graph, config);
        std::map<std::string, double> direct;
        for (const auto& [id, counts] : state.votes.card_counts()) direct[id] = static_cast<double>(counts.votes);
        out.steps.push_back({processed, votes, rank_of(target, cohort, agg.scores), rank_of(target, cohort, direct)});
    };

    for (std::size_t i = 0; i < events.size(); ++i) {
        state.apply(events[i]);
        if (events[i].kind != EventKind::vote) continue;
        ++votes;
        if (votes % static_cast<std::int64_t>(stride) == 0) record(static_cast<std::int64_t>(i) + 1);
    }
    auto total = static_cast<std::int64_t>(events.size());
    if (out.steps.empty() || out.steps.back().events_processed != total) record(total);
    if (out.steps.empty()) throw NotFound("log never creates card " + target);
    return out;
}

// ---- generalizability ---------------------------------------------------------------------

GeneralizabilityReport generalizability_report(const std::vector<Event>& events,
                                               const std::vector<Scenario>& scenarios) {
    State state(scenarios);
    state.apply_all(events);
    GeneralizabilityReport r;
    auto selections = state.votes.card_selections();
    std::map<std::string, std::set<std::string>> shown;
    for (const auto& e : events) {
        if (e.kind != EventKind::impression || e.payload.at("target_kind") != "card") continue;
        shown[e.payload.at("participant").get<std::string>()].insert(e.payload.at("target_id").get<std::string>());
    }
    for (const auto& [participant, cards] : shown) {
        auto p = state.participants.find(participant);
        std::string chosen = p == state.participants.end() ? std::string() : p->second.chosen_scenario;
        const auto& picked = selections[participant];
        for (const auto& id : cards) {
            const auto* card = state.pool.find(id);
            bool same = card && card->origin.scenario_id == chosen;
            bool voted = picked.count(id) > 0;
            (same ? r.same_impressions : r.cross_impressions) += 1;
            (same ? r.same_votes : r.cross_votes) += voted ? 1 : 0;
        }
    }
    auto rate = [](std::int64_t v, std::int64_t n) -> std::optional<double> {
        if (n == 0) return std::nullopt;
        return static_cast<double>(v) / static_cast<double>(n);
    };
    r.same_scenario_rate = rate(r.same_votes, r.same_impressions);
    r.cross_scenario_rate = rate(r.cross_votes, r.cross_impressions);
    return r;
}

// ---- surveys ------------------------------------------------------------------------------

std::vector<SurveyQuestionReport> survey_report(const std::vector<SurveyResponse>& responses) {
    std::map<std::string, SurveyQuestionReport> by_question;
    for (const auto& r : responses) {
        if (r.value < 1 || r.value > 5) {
            throw InvalidArgument("survey answer " + std::to_string(r.value) + " to " + r.question + " is out of range");
        }
        auto& row = by_question[r.question];
        row.question = r.question;
        ++row.responses;
        if (r.value >= 4) ++row.agree;
    }
    std::vector<SurveyQuestionReport> out;
    for (auto& [q, row] : by_question) {
        row.agree_rate = static_cast<double>(row.agree) / static_cast<double>(row.responses);
        out.push_back(row);
    }
    return out;
}

std::vector<RobustnessRow> robustness_table(Gateway& gateway, const State& state, std::string_view question) {
    std::vector<RobustnessRow> rows(3);
    rows[1].bucket = IdeologyBucket::slightly;
    rows[2].bucket = IdeologyBucket::very;
    std::vector<double> sums(3, 0.0);
    std::map<std::string, const ElicitationSession*> first_session;
    for (const auto& [id, s] : state.sessions) {
        if (s.first_user_message().empty()) continue;
        first_session.try_emplace(s.participant_id, &s);
    }
    for (const auto& [participant, session] : first_session) {
        auto rating = rate_ideology(gateway, session->first_user_message());
        auto& row = rows[static_cast<std::size_t>(rating.bucket)];
        ++row.participants;
        for (const auto& r : state.surveys) {
            if (r.participant_id != participant || r.question != question) continue;
            ++row.responses;
            sums[static_cast<std::size_t>(rating.bucket)] += r.value;
        }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].responses > 0) rows[i].mean_score = sums[i] / static_cast<double>(rows[i].responses);
    }
    return rows;
}

// ---- output -------------------------------------------------------------------------------

json to_json(const RankTrajectory& t) {
    json steps = json::array();
    for (const auto& s : t.steps) {
        steps.push_back({{"events_processed", s.events_processed},
                         {"votes_processed", s.votes_processed},
                         {"pagerank_rank", s.pagerank_rank},
                         {"direct_vote_rank", s.direct_vote_rank}});
    }
    return json{{"target", t.target}, {"steps", steps}};
}

json to_json(const GeneralizabilityReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return json{{"same_scenario_rate", opt(r.same_scenario_rate)},
                {"cross_scenario_rate", opt(r.cross_scenario_rate)},
                {"same_impressions", r.same_impressions},
                {"same_votes", r.same_votes},
                {"cross_impressions", r.cross_impressions},
                {"cross_votes", r.cross_votes}};
}

json to_json(const std::vector<SurveyQuestionReport>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"question", r.question}, {"responses", r.responses}, {"agree", r.agree}, {"agree_rate", r.agree_rate}});
    }
    return out;
}

json to_json(const std::vector<RobustnessRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        out.push_back({{"bucket", to_string(r.bucket)},
                       {"participants", r.participants},
                       {"responses", r.responses},
                       {"mean_score", r.mean_score ? json(*r.mean_score) : json(nullptr)}});
    }
    return out;
}

std::string trajectory_csv(const RankTrajectory& t) {
    std::string out = "events_processed,votes_processed,pagerank_rank,direct_vote_rank\n";
    for (const auto& s : t.steps) {
        out += std::to_string(s.events_processed) + "," + std::to_string(s.votes_processed) + "," +
               std::to_string(s.pagerank_rank) + "," + std::to_string(s.direct_vote_rank) + "\n";
    }
    return out;
}

std::string survey_csv(const std::vector<SurveyQuestionReport>& rows) {
    std::string out = "question,responses,agree,agree_rate\n";
    for (const auto& r : rows) {
        out += r.question + "," + std::to_string(r.responses) + "," + std::to_string(r.agree) + "," + fmt(r.agree_rate) + "\n";
    }
    return out;
}

std::string robustness_csv(const std::vector<RobustnessRow>& rows) {
    std::string out = "bucket,participants,responses,mean_score\n";
    for (const auto& r : rows) {
        out += std::string(to_string(r.bucket)) + "," + std::to_string(r.participants) + "," +
               std::to_string(r.responses) + "," + (r.mean_score ? fmt(*r.mean_score) : std::string()) + "\n";
    }
    return out;
}

}  // namespace moralgraph
