#include <doctest.h>

#include <atomic>
#include <thread>

#include "drive.hpp"
#include "moralgraph/engine.hpp"
#include "moralgraph/simulation.hpp"
#include "oracles.hpp"

using namespace moralgraph;

namespace {

struct World {
    SyntheticPopulationConfig config = referral_chain_config();
    std::unique_ptr<Gateway> gw = make_simulation_gateway(config);
    LogicalClock clock{0};
    Deployment deployment = simulation_deployment(config);

    const Archetype& arch(const std::string& key) const { return *config.find_archetype(key); }
};

// Four parenting participants, stories, and one round of votes.
void populate(Engine& engine, const World& w) {
    drive::interview(engine, w.arch("inspiring_discipline"), "p1");
    drive::interview(engine, w.arch("inspiring_discipline"), "p2", true);
    drive::interview(engine, w.arch("igniting_curiosity"), "p3");
    drive::interview(engine, w.arch("respect_for_authority"), "p4");
    for (auto p : {"p1", "p2", "p3", "p4"}) engine.endorse(p, true);
    engine.generate_stories();
    for (auto p : {"p1", "p2", "p3", "p4"}) {
        for (const auto& s : engine.next_stories(p)) engine.vote_story(p, s.id, VoteChoice::wiser);
        for (const auto& c : engine.next_cards(p)) engine.vote_card(p, c.id, c.title != "Respect for Authority");
        engine.survey(p, "expressed_care", 4);
    }
}

}  // namespace

TEST_CASE("participants flow from interview to graph") {
    World w;
    Engine engine(w.deployment, *w.gw, w.clock);
    auto first = drive::interview(engine, w.arch("inspiring_discipline"), "p1");
    CHECK(first.card.id == "card-000001");
    CHECK(first.canonical.outcome == CanonicalizeOutcome::inserted);
    CHECK(first.canonical.canonical_id == "value-000001");
    auto second = drive::interview(engine, w.arch("inspiring_discipline"), "p2", true);
    CHECK(second.canonical.outcome == CanonicalizeOutcome::coalesced);
    CHECK(second.canonical.canonical_id == "value-000001");
    drive::interview(engine, w.arch("igniting_curiosity"), "p3");
    drive::interview(engine, w.arch("respect_for_authority"), "p4");

    CHECK(engine.generate_stories() == 2);
    CHECK(engine.generate_stories() == 0);

    auto stories = engine.next_stories("p1");
    REQUIRE_FALSE(stories.empty());
    auto tallies = engine.vote_story("p1", stories[0].id, VoteChoice::wiser);
    CHECK(tallies == Tallies{1, 0, 0});
    CHECK(engine.vote_story("p1", stories[0].id, VoteChoice::unsure) == Tallies{0, 0, 1});

    auto cards = engine.next_cards("p3");
    REQUIRE_FALSE(cards.empty());
    for (const auto& c : cards) CHECK(c.id != "value-000002");  // never offered one's own card
    engine.vote_card("p3", cards[0].id, true);

    auto graph = engine.aggregate();
    CHECK(graph.values.size() == 3);
    CHECK(graph.edges.size() == 2);
    CHECK(graph.aggregation.has_value());
    CHECK(engine.events().back().kind == EventKind::aggregation_run);
    CHECK(check_graph_invariants(graph).empty());
}

TEST_CASE("preconditions and unknown ids") {
    World w;
    Engine engine(w.deployment, *w.gw, w.clock);
    CHECK_THROWS_AS(engine.start_session("p1", "nope"), NotFound);
    CHECK_THROWS_AS(engine.post_message("session-000404", "hi"), NotFound);
    auto s = engine.start_session("p1", "parenting");
    CHECK_THROWS_AS(engine.confirm_card(s.id), PreconditionFailed);
    CHECK_THROWS_AS(engine.post_message(s.id, "  "), InvalidArgument);
    CHECK_THROWS_AS(engine.next_stories("p1"), PreconditionFailed);
    CHECK_THROWS_AS(engine.endorse("p1", true), PreconditionFailed);
    CHECK_THROWS_AS(engine.survey("p1", "expressed_care", 6), InvalidArgument);
    engine.abandon_session(s.id);
    CHECK(engine.session(s.id).phase == Phase::abandoned);
    CHECK_THROWS_AS(engine.post_message(s.id, "hello?"), PreconditionFailed);
    CHECK_THROWS_AS(engine.session("session-000404"), NotFound);
    CHECK_THROWS_AS(engine.provenance("value-000404"), NotFound);

    populate(engine, w);
    auto story = engine.snapshot().stories.begin()->first;
    CHECK_THROWS_AS(engine.vote_story("stranger", story, VoteChoice::wiser), PreconditionFailed);
    CHECK_THROWS_AS(engine.vote_card("stranger", "value-000001", true), PreconditionFailed);
}

TEST_CASE("a failed model call leaves no trace in the log") {
    World w;
    int calls = 0;
    auto responder = make_scripted_responder(w.config);
    auto flaky = Gateway::scripted([&](const ChatRequest& r) {
        if (r.purpose == PurposeTag::message_classification && ++calls == 2) {
            throw GatewayError(GatewayError::Kind::upstream_unavailable, "down");
        }
        return responder(r);
    });
    Engine engine(w.deployment, *flaky, w.clock);
    auto s = engine.start_session("p1", "parenting");
    engine.post_message(s.id, w.arch("inspiring_discipline").opening);
    auto before = engine.dump_log();
    auto session = engine.session(s.id);
    CHECK_THROWS_AS(engine.post_message(s.id, w.arch("inspiring_discipline").followups()[0]), GatewayError);
    CHECK(engine.dump_log() == before);
    CHECK(engine.session(s.id) == session);
    engine.post_message(s.id, w.arch("inspiring_discipline").followups()[0]);
    CHECK(engine.session(s.id).draft_policies.size() == 1);
}

TEST_CASE("provenance, endorsements and retrieval") {
    World w;
    Engine engine(w.deployment, *w.gw, w.clock);
    populate(engine, w);
    auto p = engine.provenance("value-000001");
    CHECK(p["card"]["title"] == "Inspiring Discipline");
    CHECK(p["sources"].size() == 2);
    CHECK_FALSE(p["sources"][0]["transcript"].empty());
    CHECK(p["endorsements"].size() == 2);
    CHECK(p["edges"].size() >= 1);

    auto r = engine.retrieve("When motivation is an issue");
    CHECK(r.guidance);
    CHECK_FALSE(r.winner_id.empty());

    auto state = engine.snapshot();
    std::size_t endorsements = 0;
    for (const auto& s : state.surveys) endorsements += s.question == kEndorsementQuestion;
    CHECK(endorsements == 4);
}

TEST_CASE("a persistent engine restarts into the same state") {
    oracle::TempDir dir("engine");
    World w;
    w.deployment.snapshot_every = 7;
    std::string log;
    State state;
    {
        Engine engine(w.deployment, *w.gw, w.clock, dir.path());
        populate(engine, w);
        log = engine.dump_log();
        state = engine.snapshot();
        CHECK(oracle::read_file(dir.path() / "events.jsonl") == log);
    }
    std::size_t snapshots = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir.path() / "snapshots")) snapshots += e.path().extension() == ".json";
    CHECK(snapshots == state.next_offset / 7);

    {
        Engine reopened(w.deployment, *w.gw, w.clock, dir.path());
        CHECK(reopened.snapshot() == state);
        CHECK(reopened.dump_log() == log);
        reopened.survey("p1", "expressed_care", 5);
        CHECK(reopened.events().back().offset == state.next_offset);
    }

    // Without snapshots the state comes from the log alone.
    std::filesystem::remove_all(dir.path() / "snapshots");
    Engine replayed(w.deployment, *w.gw, w.clock, dir.path());
    CHECK(replayed.snapshot().next_offset == state.next_offset + 1);
    CHECK(replayed.snapshot().stories == state.stories);

    // The same calls against an in-memory engine write the same log.
    World fresh;
    Engine memory(fresh.deployment, *fresh.gw, fresh.clock);
    populate(memory, fresh);
    CHECK(memory.dump_log() == log);
}

TEST_CASE("one message per session at a time") {
    World w;
    auto responder = make_scripted_responder(w.config);
    std::atomic<int> inside{0};
    auto slow = Gateway::scripted([&](const ChatRequest& r) {
        if (r.purpose == PurposeTag::message_classification) {
            ++inside;
            std::this_thread::sleep_for(std::chrono::milliseconds(150));
        }
        return responder(r);
    });
    Engine engine(w.deployment, *slow, w.clock);
    auto a = engine.start_session("p1", "parenting");
    auto b = engine.start_session("p2", "parenting");
    const auto& opening = w.arch("inspiring_discipline").opening;

    std::atomic<int> busy{0}, ok{0};
    auto post = [&](const std::string& id) {
        try {
            engine.post_message(id, opening);
            ++ok;
        } catch (const PreconditionFailed&) {
            ++busy;
        }
    };
    std::thread t1(post, a.id), t2(post, a.id), t3(post, b.id);
    t1.join();
    t2.join();
    t3.join();
    CHECK(ok == 2);
    CHECK(busy == 1);
    CHECK(engine.session(a.id).transcript.size() == 3);
    CHECK(engine.session(b.id).transcript.size() == 3);
    const auto& events = engine.events();
    for (std::size_t i = 0; i < events.size(); ++i) CHECK(events[i].offset == static_cast<std::int64_t>(i));
}

TEST_CASE("deployment documents") {
    auto d = load_deployment(nlohmann::json::parse(R"({
        "scenarios": [{"id": "s1", "prompt": "A prompt", "tag": "t1"}],
        "acceptance": {"min_votes": 5, "min_wiser_ratio": 0.75, "count_unsure": true},
        "snapshot_every": 10,
        "unknown": 1})"));
    CHECK(d.scenarios.size() == 1);
    CHECK(d.aggregation.acceptance.min_votes == 5);
    CHECK(d.snapshot_every == 10);
    CHECK(load_deployment(to_json(d)).aggregation.acceptance == d.aggregation.acceptance);
    CHECK_THROWS(load_deployment(nlohmann::json::parse(R"({"scenarios": []})")));
    CHECK_THROWS(load_deployment(nlohmann::json::parse(
        R"({"scenarios": [{"id": "a", "prompt": "p", "tag": "t"}, {"id": "a", "prompt": "q", "tag": "u"}]})")));
    CHECK_THROWS(load_deployment(nlohmann::json::parse(
        R"({"scenarios": [{"id": "a", "prompt": "p", "tag": "t"}], "acceptance": {"min_wiser_ratio": 0.4}})")));
}
