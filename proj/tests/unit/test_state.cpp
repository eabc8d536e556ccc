#include <doctest.h>

#include "moralgraph/simulation.hpp"
#include "moralgraph/state.hpp"

using namespace moralgraph;

namespace {

const SimulationResult& small_run() {
    static const SimulationResult r = [] {
        auto config = referral_chain_config(3, 120);
        return run_simulation(config);
    }();
    return r;
}

}  // namespace

TEST_CASE("folding the log reproduces the engine's graph") {
    const auto& r = small_run();
    State state(r.deployment.scenarios);
    state.apply_all(r.events);
    CHECK(state.next_offset == static_cast<std::int64_t>(r.events.size()));
    auto graph = state.graph();
    CHECK_FALSE(graph.aggregation.has_value());
    CHECK(graph.values == r.graph.values);
    CHECK(graph.contexts == r.graph.contexts);
    REQUIRE(graph.edges.size() == r.graph.edges.size());
    for (std::size_t i = 0; i < graph.edges.size(); ++i) CHECK(graph.edges[i].tallies == r.graph.edges[i].tallies);
    REQUIRE(state.last_aggregation.has_value());
    CHECK(*state.last_aggregation == *r.graph.aggregation);
}

TEST_CASE("folding is deterministic and split folds agree") {
    const auto& r = small_run();
    State whole(r.deployment.scenarios);
    whole.apply_all(r.events);
    State split(r.deployment.scenarios);
    std::vector<Event> head(r.events.begin(), r.events.begin() + static_cast<long>(r.events.size() / 2));
    split.apply_all(head);
    split.apply_all(r.events);  // already-applied prefix is skipped
    CHECK(split == whole);
}

TEST_CASE("events must arrive in order") {
    const auto& r = small_run();
    State state(r.deployment.scenarios);
    CHECK_THROWS_AS(state.apply(r.events[1]), Error);
    state.apply(r.events[0]);
    CHECK_THROWS_AS(state.apply(r.events[0]), Error);
}

TEST_CASE("derived lookups") {
    const auto& r = small_run();
    State state(r.deployment.scenarios);
    state.apply_all(r.events);
    CHECK(state.find_scenario("parenting") != nullptr);
    CHECK(state.find_scenario("nope") == nullptr);
    for (const auto& [participant, card] : state.participant_card) {
        auto canonical = state.canonical_for_participant(participant);
        REQUIRE(canonical);
        CHECK(state.pool.find(*canonical) != nullptr);
        CHECK(state.custom_to_canonical.at(card) == *canonical);
    }
    CHECK_FALSE(state.canonical_for_participant("nobody").has_value());
    CHECK(state.deferred_cards.empty());
}

TEST_CASE("state json round trip") {
    const auto& r = small_run();
    State state(r.deployment.scenarios);
    state.apply_all(r.events);
    nlohmann::json j = state;
    auto back = j.get<State>();
    back.scenarios = state.scenarios;
    CHECK(back == state);
}
