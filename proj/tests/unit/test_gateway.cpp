#include <doctest.h>

#include <cmath>
#include <fstream>

#include "moralgraph/gateway.hpp"
#include "oracles.hpp"

using namespace moralgraph;

namespace {

ChatRequest hello(std::string key = {}) {
    return make_request(PurposeTag::ideology_judge, "You rate things.", "hello", std::move(key));
}

// Fails with a transient error a fixed number of times, then answers.
class Flaky final : public ChatBackend {
public:
    explicit Flaky(int failures) : failures_(failures) {}
    BackendReply complete(const ChatRequest&, const std::string&) override {
        ++calls;
        if (failures_-- > 0) throw TransientBackendError("503");
        return {"ok", 10};
    }
    std::string_view name() const override { return "flaky"; }
    int calls = 0;

private:
    int failures_;
};

GatewayConfig fast() {
    GatewayConfig c;
    c.backoff_base = std::chrono::milliseconds(0);
    return c;
}

}  // namespace

TEST_CASE("request digest matches an independent SHA-256") {
    // hashlib.sha256(b"system\x1fYou rate things.\x1euser\x1fhello\x1e").hexdigest()
    CHECK(request_digest(hello()) == "22811fbdb645ad21bc224f83244e0414fb0b34c49a140f9672c99a4a0ba4e41f");
    auto other = hello();
    other.messages.back().content = "hello ";
    CHECK(request_digest(other) != request_digest(hello()));
    // Budget key and sampling settings are not part of the identity of a request.
    auto keyed = hello("session-1");
    keyed.temperature = 0.7;
    CHECK(request_digest(keyed) == request_digest(hello()));
}

TEST_CASE("replay hits by purpose and digest, misses otherwise") {
    FixtureStore store;
    store.add({PurposeTag::ideology_judge, request_digest(hello()), "3"});
    Gateway gw(fast(), std::make_unique<ReplayBackend>(store), nullptr);
    CHECK(gw.complete_chat(hello()) == "3");

    auto wrong_purpose = hello();
    wrong_purpose.purpose = PurposeTag::experience_judge;
    try {
        gw.complete_chat(wrong_purpose);
        FAIL("expected a fixture miss");
    } catch (const GatewayError& e) {
        CHECK(e.kind() == GatewayError::Kind::fixture_miss);
        CHECK(std::string(e.what()).find("experience-judge") != std::string::npos);
    }
}

TEST_CASE("malformed requests are rejected") {
    Gateway gw(fast(), std::make_unique<ReplayBackend>(FixtureStore{}), nullptr);
    ChatRequest empty;
    CHECK_THROWS_AS(gw.complete_chat(empty), GatewayError);
    ChatRequest no_system;
    no_system.messages.push_back({Role::user, "hi"});
    try {
        gw.complete_chat(no_system);
        FAIL("expected invalid_request");
    } catch (const GatewayError& e) {
        CHECK(e.kind() == GatewayError::Kind::invalid_request);
    }
}

TEST_CASE("transient failures are retried up to the limit") {
    auto config = fast();
    config.max_retries = 2;
    {
        auto backend = std::make_unique<Flaky>(2);
        auto* raw = backend.get();
        Gateway gw(config, std::move(backend), nullptr);
        CHECK(gw.complete_chat(hello()) == "ok");
        CHECK(raw->calls == 3);
    }
    {
        auto backend = std::make_unique<Flaky>(3);
        auto* raw = backend.get();
        Gateway gw(config, std::move(backend), nullptr);
        try {
            gw.complete_chat(hello());
            FAIL("expected upstream_unavailable");
        } catch (const GatewayError& e) {
            CHECK(e.kind() == GatewayError::Kind::upstream_unavailable);
        }
        CHECK(raw->calls == 3);
    }
}

TEST_CASE("token budget is enforced per key") {
    auto config = fast();
    config.session_token_budget = 25;
    Gateway gw(config, std::make_unique<Flaky>(0), nullptr);
    CHECK(gw.complete_chat(hello("s1")) == "ok");
    CHECK(gw.tokens_used("s1") == 10);
    CHECK(gw.complete_chat(hello("s1")) == "ok");
    CHECK(gw.tokens_used("s1") == 20);
    try {
        gw.complete_chat(hello("s1"));
        FAIL("expected budget_exceeded");
    } catch (const GatewayError& e) {
        CHECK(e.kind() == GatewayError::Kind::budget_exceeded);
    }
    CHECK(gw.tokens_used("s1") == 20);
    CHECK(gw.complete_chat(hello("s2")) == "ok");
    CHECK(gw.complete_chat(hello()) == "ok");
    CHECK(gw.calls_made() == 4);
}

TEST_CASE("recorded fixtures replay identically") {
    oracle::TempDir dir("gateway");
    auto config = fast();
    config.record_dir = dir.path() / "fixtures";
    config.audit_log = dir.path() / "audit.jsonl";
    auto recorder = Gateway::scripted([](const ChatRequest& r) { return "echo: " + r.messages.back().content; }, config);
    auto a = make_request(PurposeTag::dedup_judge, "judge", "first");
    auto b = make_request(PurposeTag::story_chain_step, "story", "second");
    CHECK(recorder->complete_chat(a) == "echo: first");
    CHECK(recorder->complete_chat(b) == "echo: second");

    auto store = FixtureStore::load(config.record_dir);
    CHECK(store.size() == 2);
    auto replay = Gateway::replay(config.record_dir);
    CHECK(replay->complete_chat(a) == "echo: first");
    CHECK(replay->complete_chat(b) == "echo: second");
    CHECK_THROWS_AS(replay->complete_chat(make_request(PurposeTag::dedup_judge, "judge", "third")), GatewayError);

    auto audit = oracle::read_file(config.audit_log);
    CHECK(std::count(audit.begin(), audit.end(), '\n') == 2);
    CHECK(nlohmann::json::parse(audit.substr(0, audit.find('\n')))["purpose_tag"] == "dedup-judge");
    CHECK_THROWS_AS(FixtureStore::load(dir.path() / "missing"), NotFound);
}

TEST_CASE("feature hash embedder") {
    FeatureHashEmbedder e;
    auto a = e.embed("EXAMPLES of steady effort that inspire");
    auto b = e.embed("examples of steady efforts that inspired");
    auto c = e.embed("SAFETY of everyone in the room");
    CHECK(a.dimension() == 256);
    CHECK(std::fabs(l2_norm(a) - 1.0) < 1e-12);
    CHECK(a == e.embed("EXAMPLES of steady effort that inspire"));
    CHECK(cosine(a, b) > cosine(a, c));
    CHECK(FeatureHashEmbedder(7).embed("x y z") != FeatureHashEmbedder(8).embed("x y z"));

    // Brute-force cosine.
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * c.values[i];
        na += a.values[i] * a.values[i];
        nb += c.values[i] * c.values[i];
    }
    CHECK(cosine(a, c) == doctest::Approx(dot / std::sqrt(na * nb)).epsilon(1e-12));
    CHECK_THROWS_AS(cosine(a, EmbeddingVector{{1.0}}), InvalidArgument);

    Gateway gw(fast(), std::make_unique<ReplayBackend>(FixtureStore{}), nullptr);
    CHECK_THROWS_AS(gw.embed("   "), InvalidArgument);
    CHECK(gw.embed("the of and").dimension() == 256);
}

TEST_CASE("purpose tags round trip") {
    for (auto tag : {PurposeTag::elicitation, PurposeTag::message_classification, PurposeTag::card_articulation,
                     PurposeTag::dedup_judge, PurposeTag::upgrade_clustering, PurposeTag::story_chain_step,
                     PurposeTag::context_derivation, PurposeTag::ideology_judge, PurposeTag::experience_judge}) {
        CHECK(parse_purpose_tag(to_string(tag)) == tag);
    }
    CHECK_FALSE(parse_purpose_tag("chat").has_value());
}
