#include <doctest.h>

#include "moralgraph/dedup.hpp"
#include "oracles.hpp"

using namespace moralgraph;

namespace {

CanonicalPool run_corpus(const std::vector<ValuesCard>& corpus, Gateway& gw, CanonicalPool pool = {}) {
    Deduplicator d(gw);
    for (const auto& c : corpus) d.canonicalize(pool, c);
    return pool;
}

}  // namespace

TEST_CASE("canonicalizing a corpus is deterministic and idempotent") {
    auto corpus = oracle::card_corpus(3, 300);
    auto gw = oracle::title_judge_gateway();
    auto first = run_corpus(corpus, *gw);
    auto second = run_corpus(corpus, *oracle::title_judge_gateway());
    CHECK(first == second);
    CHECK(first.size() > 1);
    CHECK(first.size() < corpus.size());

    auto again = run_corpus(corpus, *gw, first);
    CHECK(again == first);
}

TEST_CASE("pool size never shrinks and exact duplicates never grow it") {
    auto corpus = oracle::card_corpus(9, 200);
    auto gw = oracle::title_judge_gateway();
    Deduplicator d(*gw);
    CanonicalPool pool;
    for (const auto& c : corpus) {
        auto before = pool.size();
        auto r = d.canonicalize(pool, c);
        CHECK(pool.size() >= before);
        CHECK(pool.size() - before == (r.outcome == CanonicalizeOutcome::inserted ? 1u : 0u));

        auto dup = c;
        dup.id += "-again";
        auto calls = gw->calls_made();
        auto size = pool.size();
        auto again = d.canonicalize(pool, dup);
        CHECK(again.outcome == CanonicalizeOutcome::coalesced);
        CHECK(again.canonical_id == r.canonical_id);
        CHECK(pool.size() == size);
        CHECK(gw->calls_made() == calls);
    }
}

TEST_CASE("the judge must affirm all four criteria") {
    auto a = oracle::card("a", "Patience", {"MOMENTS when waiting helps"});
    auto b = oracle::card("b", "Patience", {"MOMENTS when waiting is wise"});
    for (int missing = 0; missing < 4; ++missing) {
        auto gw = Gateway::scripted([missing](const ChatRequest&) {
            nlohmann::json j = {{"same_attention", missing != 0},
                                {"mutual_endorsement", missing != 1},
                                {"same_granularity", missing != 2},
                                {"differences_are_oversight", missing != 3}};
            return "Here is my verdict:\n```json\n" + j.dump() + "\n```";
        });
        Deduplicator d(*gw);
        auto decision = d.judge_duplicate(a, b);
        CHECK_FALSE(decision.same_value);
        CHECK_FALSE(decision.deferred);
    }
    auto yes = Gateway::scripted([](const ChatRequest&) {
        return std::string(R"({"same_attention": true, "mutual_endorsement": true, "same_granularity": true,
                               "differences_are_oversight": true, "rationale": "same"})");
    });
    CHECK(Deduplicator(*yes).judge_duplicate(a, b).same_value);
}

TEST_CASE("identical cards short-circuit without a model call") {
    auto gw = Gateway::scripted([](const ChatRequest&) -> std::string { throw std::logic_error("no call expected"); });
    auto a = oracle::card("a", "Patience", {"MOMENTS when waiting helps"});
    auto b = a;
    b.id = "b";
    b.origin.participant_id = "someone else";
    auto d = Deduplicator(*gw).judge_duplicate(a, b);
    CHECK(d.same_value);
    CHECK(d.short_circuit);
    CHECK(gw->calls_made() == 0);
}

TEST_CASE("an unavailable or unreadable judge defers instead of merging") {
    auto base = oracle::card("seed", "Patience", {"MOMENTS when waiting helps"}, OriginKind::custom);
    auto near = oracle::card("new", "Patient Waiting", {"MOMENTS when waiting helps", "SIGNS of hurry"},
                             OriginKind::custom);
    for (std::string mode : {"down", "garbage"}) {
        auto gw = Gateway::scripted([mode](const ChatRequest&) -> std::string {
            if (mode == "down") throw GatewayError(GatewayError::Kind::upstream_unavailable, "down");
            return "I think they are similar.";
        });
        Deduplicator d(*gw, {5, 0.0});
        CanonicalPool pool;
        CHECK(d.canonicalize(pool, base).outcome == CanonicalizeOutcome::inserted);
        auto r = d.canonicalize(pool, near);
        CHECK(r.outcome == CanonicalizeOutcome::deferred);
        CHECK(pool.size() == 1);
        CHECK(pool.cards().front().canonical_of == std::vector<std::string>{"seed"});
    }
}

TEST_CASE("candidates below the similarity floor never reach the judge") {
    auto gw = Gateway::scripted([](const ChatRequest&) -> std::string { throw std::logic_error("no call expected"); });
    Deduplicator d(*gw);
    CanonicalPool pool;
    d.canonicalize(pool, oracle::card("c1", "Courage", {"CHOICES that take nerve"}, OriginKind::custom));
    auto r = d.canonicalize(pool, oracle::card("c2", "Wonder", {"QUESTIONS about stars and oceans"}, OriginKind::custom));
    CHECK(r.outcome == CanonicalizeOutcome::inserted);
    CHECK(r.canonical_id == "value-000002");
    CHECK(pool.size() == 2);
}

TEST_CASE("nearest orders by similarity then id") {
    FeatureHashEmbedder e;
    CanonicalPool pool;
    auto v = e.embed("MOMENTS of courage");
    pool.insert(oracle::card("value-2", "B", {"X Y"}), v);
    pool.insert(oracle::card("value-1", "A", {"X Y"}), v);
    pool.insert(oracle::card("value-3", "C", {"Z W"}), e.embed("unrelated words entirely"));
    auto n = pool.nearest(v, 2);
    REQUIRE(n.size() == 2);
    CHECK(n[0].canonical_id == "value-1");
    CHECK(n[1].canonical_id == "value-2");
    CHECK_THROWS_AS(pool.insert(oracle::card("value-1", "dup", {"X"}), v), InvalidArgument);
    CHECK_THROWS_AS(pool.insert(oracle::card("value-9", "custom", {"X"}, OriginKind::custom), v), InvalidArgument);
    CHECK_THROWS_AS(pool.coalesce("value-404", oracle::card("c", "c", {"X"})), NotFound);
}

TEST_CASE("invalid custom cards are refused") {
    auto gw = oracle::title_judge_gateway();
    Deduplicator d(*gw);
    CanonicalPool pool;
    auto bad = oracle::card("c1", "", {"X"}, OriginKind::custom);
    CHECK_THROWS_AS(d.canonicalize(pool, bad), InvalidArgument);
    CHECK(pool.size() == 0);
}

TEST_CASE("pool json round trip") {
    auto gw = oracle::title_judge_gateway();
    auto pool = run_corpus(oracle::card_corpus(1, 50), *gw);
    pool.endorse(pool.cards().front().id, {"p-1", "card-000001", true});
    nlohmann::json j = pool;
    CHECK(j.get<CanonicalPool>() == pool);
}
