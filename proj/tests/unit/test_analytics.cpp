#include <doctest.h>

#include "fixture_inputs.hpp"
#include "moralgraph/analytics.hpp"
#include "oracles.hpp"

using namespace moralgraph;

namespace {

const SimulationResult& sim() {
    static const SimulationResult r = run_simulation(referral_chain_config(2, 120));
    return r;
}

std::unique_ptr<Gateway> fixtures() { return Gateway::replay(oracle::fixture_dir() / "llm"); }

}  // namespace

TEST_CASE("ideology judge over vendored replies") {
    auto gw = fixtures();
    auto strong = rate_ideology(*gw, fixture_inputs::kIdeologicalMessage);
    CHECK(strong.score == 5);
    CHECK(strong.bucket == IdeologyBucket::very);

    auto neutral = rate_ideology(*gw, fixture_inputs::kNeutralMessage);
    CHECK(neutral == IdeologyRating{1, IdeologyBucket::not_ideological});

    // Surrounding whitespace does not change the request.
    CHECK(rate_ideology(*gw, "  " + std::string(fixture_inputs::kNeutralMessage) + "\n").score == 1);

    CHECK_THROWS_AS(rate_ideology(*gw, "   "), InvalidArgument);
    try {
        rate_ideology(*gw, fixture_inputs::kEvasiveMessage);
        FAIL("expected bad_response");
    } catch (const GatewayError& e) {
        CHECK(e.kind() == GatewayError::Kind::bad_response);
    }
    try {
        rate_ideology(*gw, "A message nobody recorded.");
        FAIL("expected fixture_miss");
    } catch (const GatewayError& e) {
        CHECK(e.kind() == GatewayError::Kind::fixture_miss);
    }
}

TEST_CASE("score buckets") {
    CHECK(ideology_bucket(1) == IdeologyBucket::not_ideological);
    CHECK(ideology_bucket(2) == IdeologyBucket::not_ideological);
    CHECK(ideology_bucket(3) == IdeologyBucket::slightly);
    CHECK(ideology_bucket(4) == IdeologyBucket::very);
    CHECK(ideology_bucket(5) == IdeologyBucket::very);
    CHECK_THROWS_AS(ideology_bucket(0), InvalidArgument);
    CHECK_THROWS_AS(ideology_bucket(6), InvalidArgument);
    CHECK(to_string(IdeologyBucket::slightly) == "slightly");
}

TEST_CASE("experience judge over vendored replies") {
    auto gw = fixtures();
    auto desc = fixture_inputs::experience_description();
    CHECK(detect_experience(*gw, fixture_inputs::experience_session(true), desc));
    CHECK_FALSE(detect_experience(*gw, fixture_inputs::experience_session(false), desc));

    ElicitationSession empty;
    empty.id = "session-empty";
    CHECK_THROWS_AS(detect_experience(*gw, empty, desc), InvalidArgument);
    CHECK_THROWS_AS(detect_experience(*gw, fixture_inputs::experience_session(true), " "), InvalidArgument);
}

TEST_CASE("experience judge rejects ambiguous answers") {
    auto gw = Gateway::scripted([](const ChatRequest&) { return std::string("Possibly."); });
    try {
        detect_experience(*gw, fixture_inputs::experience_session(true), "anything");
        FAIL("expected bad_response");
    } catch (const GatewayError& e) {
        CHECK(e.kind() == GatewayError::Kind::bad_response);
    }
}

TEST_CASE("scaling trajectory") {
    const auto& r = sim();
    REQUIRE_FALSE(r.expert_card.empty());

    SUBCASE("stride controls sampling and the last step covers the whole log") {
        auto t = scaling_trajectory(r.events, r.deployment.scenarios, r.expert_card, r.deployment.aggregation, 50);
        REQUIRE(t.steps.size() >= 2);
        CHECK(t.steps.back().events_processed == static_cast<std::int64_t>(r.events.size()));
        for (std::size_t i = 0; i + 1 < t.steps.size(); ++i) {
            CHECK(t.steps[i].votes_processed == static_cast<std::int64_t>(50 * (i + 1)));
            CHECK(t.steps[i].events_processed < t.steps[i + 1].events_processed);
        }
        for (const auto& s : t.steps) {
            CHECK(s.pagerank_rank >= 1);
            CHECK(s.direct_vote_rank >= 1);
        }
    }

    SUBCASE("each step equals the trajectory of its prefix") {
        auto t = scaling_trajectory(r.events, r.deployment.scenarios, r.expert_card, r.deployment.aggregation, 80);
        for (const auto& step : t.steps) {
            std::vector<Event> prefix(r.events.begin(), r.events.begin() + step.events_processed);
            auto p = scaling_trajectory(prefix, r.deployment.scenarios, r.expert_card, r.deployment.aggregation, 80);
            CHECK(p.steps.back() == step);
        }
    }

    SUBCASE("a log without votes yields one step") {
        std::size_t first_vote = 0;
        while (r.events[first_vote].kind != EventKind::vote) ++first_vote;
        std::vector<Event> prefix(r.events.begin(), r.events.begin() + static_cast<std::ptrdiff_t>(first_vote));
        State state(r.deployment.scenarios);
        state.apply_all(prefix);
        REQUIRE_FALSE(state.pool.cards().empty());
        auto target = state.pool.cards().front().id;
        auto t = scaling_trajectory(prefix, r.deployment.scenarios, target, r.deployment.aggregation, 10);
        REQUIRE(t.steps.size() == 1);
        CHECK(t.steps[0].votes_processed == 0);
    }

    CHECK_THROWS_AS(scaling_trajectory(r.events, r.deployment.scenarios, r.expert_card, {}, 0), InvalidArgument);
    CHECK_THROWS_AS(scaling_trajectory(r.events, r.deployment.scenarios, "value-999999", {}, 10), NotFound);
}

TEST_CASE("generalizability") {
    const auto& r = sim();
    auto g = generalizability_report(r.events, r.deployment.scenarios);
    CHECK(g.same_impressions > 0);
    CHECK(g.cross_impressions > 0);
    REQUIRE(g.same_scenario_rate);
    REQUIRE(g.cross_scenario_rate);
    CHECK(*g.same_scenario_rate == doctest::Approx(double(g.same_votes) / double(g.same_impressions)));
    CHECK(*g.same_scenario_rate > *g.cross_scenario_rate);

    auto none = generalizability_report({}, r.deployment.scenarios);
    CHECK_FALSE(none.same_scenario_rate);
    CHECK_FALSE(none.cross_scenario_rate);
    CHECK(to_json(none)["same_scenario_rate"].is_null());
}

TEST_CASE("survey agreement") {
    std::vector<SurveyResponse> responses;
    for (int v : {5, 4, 3, 2}) responses.push_back({"p-" + std::to_string(v), "expressed_care", v});
    responses.push_back({"p-1", "other", 1});
    auto rows = survey_report(responses);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].question == "expressed_care");
    CHECK(rows[0].responses == 4);
    CHECK(rows[0].agree == 2);
    CHECK(rows[0].agree_rate == doctest::Approx(0.5));
    CHECK(rows[1].agree_rate == 0.0);
    CHECK(survey_csv(rows) == "question,responses,agree,agree_rate\nexpressed_care,4,2,0.500000\nother,1,0,0.000000\n");

    responses.push_back({"p-9", "other", 6});
    CHECK_THROWS_AS(survey_report(responses), InvalidArgument);
    CHECK(survey_report({}).empty());
}

TEST_CASE("robustness table covers every rated participant") {
    const auto& r = sim();
    REQUIRE(r.robustness.size() == 3);
    std::int64_t total = 0;
    for (const auto& row : r.robustness) {
        total += row.participants;
        if (row.mean_score) {
            CHECK(*row.mean_score >= 1.0);
            CHECK(*row.mean_score <= 5.0);
        }
    }
    State state(r.deployment.scenarios);
    state.apply_all(r.events);
    std::set<std::string> speakers;
    for (const auto& [id, s] : state.sessions)
        if (!s.first_user_message().empty()) speakers.insert(s.participant_id);
    CHECK(total == static_cast<std::int64_t>(speakers.size()));

    auto csv = robustness_csv(r.robustness);
    CHECK(csv.rfind("bucket,participants,responses,mean_score\nnot,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(to_json(r.robustness).size() == 3);
}

TEST_CASE("trajectory csv") {
    RankTrajectory t{"value-000001", {{10, 5, 2, 3}, {20, 10, 1, 3}}};
    CHECK(trajectory_csv(t) == "events_processed,votes_processed,pagerank_rank,direct_vote_rank\n10,5,2,3\n20,10,1,3\n");
    auto j = to_json(t);
    CHECK(j["target"] == "value-000001");
    CHECK(j["steps"][1]["pagerank_rank"] == 1);
}
