#include <doctest.h>

#include <httplib.h>

#include "moralgraph/api.hpp"
#include "moralgraph/simulation.hpp"

using namespace moralgraph;
using nlohmann::json;

namespace {

struct Fixture {
    SyntheticPopulationConfig config = referral_chain_config();
    std::unique_ptr<Gateway> gw = make_simulation_gateway(config);
    LogicalClock clock{0};
    Engine engine{simulation_deployment(config), *gw, clock};
    Api api{engine};

    json call(std::string_view method, std::string_view path, const json& body = json::object(), int expect = 200,
              std::map<std::string, std::string> query = {}) {
        auto r = api.handle(method, path, query, body.dump());
        INFO(method << " " << path << " -> " << r.body);
        CHECK(r.status == expect);
        return r.content_type == "application/json" ? json::parse(r.body) : json(r.body);
    }

    std::string interview(const std::string& key, const std::string& participant) {
        const auto& a = *config.find_archetype(key);
        auto started = call("POST", "/sessions", {{"participant_id", participant}, {"scenario_id", a.scenario_id}}, 201);
        std::string id = started["session"]["id"];
        CHECK_FALSE(started["reply"].get<std::string>().empty());
        std::vector<std::string> lines{a.opening};
        for (const auto& f : a.followups()) lines.push_back(f);
        lines.emplace_back(kCloser);
        lines.emplace_back(kConfirmAll);
        for (const auto& line : lines) call("POST", "/sessions/" + id + "/messages", {{"text", line}});
        auto confirmed = call("POST", "/sessions/" + id + "/card/confirm");
        return confirmed["canonical"]["canonical_id"];
    }
};

}  // namespace

TEST_CASE("a participant journey over the handler") {
    Fixture f;
    auto discipline = f.interview("inspiring_discipline", "p1");
    auto curiosity = f.interview("igniting_curiosity", "p2");
    f.interview("respect_for_authority", "p3");
    CHECK(discipline != curiosity);

    auto session = f.call("GET", "/sessions/session-000001");
    CHECK(session["session"]["card_id"] == "card-000001");

    CHECK(f.call("POST", "/stories/generate")["created"].get<int>() > 0);
    auto stories = f.call("GET", "/stories/next", {}, 200, {{"participant", "p1"}})["stories"];
    REQUIRE_FALSE(stories.empty());
    CHECK(stories[0].contains("from_card"));
    CHECK(stories[0].contains("to_card"));
    auto tallies = f.call("POST", "/votes", {{"participant_id", "p1"}, {"story_id", stories[0]["id"]}, {"choice", "wiser"}});
    CHECK(tallies["tallies"]["wiser"] == 1);

    auto cards = f.call("GET", "/cards", {}, 200, {{"participant", "p1"}})["cards"];
    REQUIRE_FALSE(cards.empty());
    f.call("POST", "/votes", {{"participant_id", "p1"}, {"card_id", cards[0]["id"]}, {"selected", true}});
    f.call("POST", "/survey", {{"participant_id", "p1"}, {"question", "expressed_care"}, {"value", 5}});

    auto agg = f.call("POST", "/aggregate");
    CHECK(agg["aggregation"].contains("winners"));
    auto graph = f.call("GET", "/graph");
    CHECK(graph["values"].size() == 3);
    auto winners = f.call("GET", "/graph/winners")["winners"];
    CHECK_FALSE(winners.empty());
    auto one = f.call("GET", "/graph/winners", {}, 200, {{"context", "when motivation is an issue"}});
    CHECK(one["context"]["text"] == "When motivation is an issue");
    f.call("GET", "/graph/winners", {}, 404, {{"context", "When nothing applies"}});

    auto prov = f.call("GET", "/graph/provenance", {}, 200, {{"card", discipline}});
    CHECK(prov.is_object());

    auto r = f.api.handle("GET", "/export/alignment-target", {}, "");
    CHECK(r.status == 200);
    CHECK(r.content_type == "application/x-ndjson");
}

TEST_CASE("errors map to statuses") {
    Fixture f;
    SUBCASE("malformed body") {
        auto r = f.api.handle("POST", "/sessions", {}, "{not json");
        CHECK(r.status == 400);
        CHECK(json::parse(r.body).contains("error"));
    }
    SUBCASE("schema problems are listed") {
        auto body = f.call("POST", "/sessions", {{"participant_id", "p1"}}, 400);
        CHECK(body["problems"][0] == "/scenario_id: required string");
    }
    SUBCASE("non-object body") {
        CHECK(f.api.handle("POST", "/votes", {}, "[1,2]").status == 400);
    }
    SUBCASE("bad vote choice") {
        f.call("POST", "/votes", {{"participant_id", "p1"}, {"story_id", "story-000001"}, {"choice", "maybe"}}, 400);
    }
    SUBCASE("card vote without a flag") {
        f.call("POST", "/votes", {{"participant_id", "p1"}, {"card_id", "value-000001"}}, 400);
    }
    SUBCASE("survey range") {
        f.call("POST", "/survey", {{"participant_id", "p1"}, {"question", "expressed_care"}, {"value", 6}}, 400);
        f.call("POST", "/survey", {{"participant_id", "p1"}, {"question", "expressed_care"}, {"value", "5"}}, 400);
    }
    SUBCASE("missing query parameter") { f.call("GET", "/stories/next", {}, 400); }
    SUBCASE("unknown things") {
        f.call("GET", "/sessions/session-999999", {}, 404);
        f.call("POST", "/sessions", {{"participant_id", "p1"}, {"scenario_id", "nowhere"}}, 404);
        f.call("DELETE", "/graph", {}, 404);
        f.call("GET", "/nothing", {}, 404);
    }
    SUBCASE("confirm before a draft exists") {
        auto s = f.call("POST", "/sessions", {{"participant_id", "p1"}, {"scenario_id", "parenting"}}, 201);
        f.call("POST", "/sessions/" + s["session"]["id"].get<std::string>() + "/card/confirm", json::object(), 409);
    }
}

TEST_CASE("gateway failures map to 429 and 502") {
    auto config = referral_chain_config();
    LogicalClock clock{0};
    const auto& a = *config.find_archetype("inspiring_discipline");

    SUBCASE("token budget") {
        GatewayConfig gc;
        gc.session_token_budget = 5;
        auto gw = Gateway::scripted(make_scripted_responder(config), gc);
        Engine engine(simulation_deployment(config), *gw, clock);
        Api api(engine);
        auto s = json::parse(api.handle("POST", "/sessions", {}, json{{"participant_id", "p"}, {"scenario_id", a.scenario_id}}.dump()).body);
        auto r = api.handle("POST", "/sessions/" + s["session"]["id"].get<std::string>() + "/messages", {},
                            json{{"text", a.opening}}.dump());
        CHECK(r.status == 429);
    }
    SUBCASE("model unavailable") {
        GatewayConfig gc;
        gc.max_retries = 1;
        gc.backoff_base = std::chrono::milliseconds(0);
        auto gw = Gateway::scripted([](const ChatRequest&) -> std::string { throw TransientBackendError("down"); }, gc);
        Engine engine(simulation_deployment(config), *gw, clock);
        Api api(engine);
        auto s = json::parse(api.handle("POST", "/sessions", {}, json{{"participant_id", "p"}, {"scenario_id", a.scenario_id}}.dump()).body);
        auto r = api.handle("POST", "/sessions/" + s["session"]["id"].get<std::string>() + "/messages", {},
                            json{{"text", a.opening}}.dump());
        CHECK(r.status == 502);
    }
}

TEST_CASE("served over http") {
    Fixture f;
    int port = f.api.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client client("127.0.0.1", port);
    auto created = client.Post("/sessions", json{{"participant_id", "p1"}, {"scenario_id", "parenting"}}.dump(),
                               "application/json");
    REQUIRE(created);
    CHECK(created->status == 201);
    auto id = json::parse(created->body)["session"]["id"].get<std::string>();

    auto got = client.Get("/sessions/" + id);
    REQUIRE(got);
    CHECK(got->status == 200);
    CHECK(got->get_header_value("Content-Type") == "application/json");

    auto winners = client.Get("/graph/winners?context=When%20motivation%20is%20an%20issue");
    REQUIRE(winners);
    CHECK(winners->status == 404);  // no cards yet, so no context either

    auto missing = client.Get("/nowhere");
    REQUIRE(missing);
    CHECK(missing->status == 404);

    CHECK_THROWS_AS(f.api.start("127.0.0.1", 0), PreconditionFailed);
    f.api.stop();
    CHECK_FALSE(client.Get("/graph"));
}
