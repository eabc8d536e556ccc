#include <doctest.h>

#include <fstream>

#include "moralgraph/events.hpp"
#include "oracles.hpp"

using namespace moralgraph;
using nlohmann::json;

namespace {

json survey(int value) { return {{"participant", "p1"}, {"question", "expressed_care"}, {"value", value}}; }

void append_raw(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << bytes;
}

}  // namespace

TEST_CASE("offsets are dense from zero") {
    EventLog log;
    CHECK_FALSE(log.persistent());
    CHECK(log.append(EventKind::survey_response, survey(4), 10) == 0);
    CHECK(log.append(EventKind::survey_response, survey(5), 11) == 1);
    CHECK(log.next_offset() == 2);
    CHECK(log.events()[1].timestamp == 11);
}

TEST_CASE("malformed payloads are rejected and leave the log alone") {
    oracle::TempDir dir("events");
    EventLog log(dir.path() / "events.jsonl");
    log.append(EventKind::survey_response, survey(4), 1);
    auto bytes = oracle::read_file(log.path());

    try {
        log.append(EventKind::survey_response, survey(9), 2);
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        REQUIRE(e.problems().size() == 1);
        CHECK(e.problems()[0] == "/payload/value: must be between 1 and 5");
    }
    CHECK_THROWS_AS(log.append(EventKind::vote, json{{"participant", "p"}, {"target_kind", "story"}, {"target_id", "s"},
                                                     {"choice", "maybe"}},
                               3),
                    SchemaError);
    CHECK_THROWS_AS(log.append(EventKind::card_created, json::array(), 4), SchemaError);
    CHECK_THROWS_AS(log.append(EventKind::session_turn, json{{"session", json::object()}}, 5), SchemaError);
    CHECK(log.next_offset() == 1);
    CHECK(oracle::read_file(log.path()) == bytes);
}

TEST_CASE("payload problems carry paths") {
    auto problems = validate_payload(EventKind::story_created, json{{"story", {{"id", 3}}}});
    CHECK(std::find(problems.begin(), problems.end(), "/payload/edge_id: missing") != problems.end());
    CHECK(std::find(problems.begin(), problems.end(), "/payload/story/id: expected string") != problems.end());
    CHECK(validate_payload(EventKind::aggregation_run, json{{"aggregation", json::object()}}).empty());
}

TEST_CASE("a persistent log reopens with the same events and bytes") {
    oracle::TempDir dir("events");
    auto path = dir.path() / "log" / "events.jsonl";
    std::string dumped;
    {
        EventLog log(path);
        for (int i = 1; i <= 5; ++i) log.append(EventKind::survey_response, survey(i), i * 100);
        dumped = log.dump();
        CHECK(oracle::read_file(path) == dumped);
    }
    EventLog reopened(path);
    CHECK(reopened.next_offset() == 5);
    CHECK(reopened.dump() == dumped);
    CHECK(reopened.append(EventKind::survey_response, survey(3), 600) == 5);
}

TEST_CASE("a torn final line is cut off on open") {
    oracle::TempDir dir("events");
    auto path = dir.path() / "events.jsonl";
    {
        EventLog log(path);
        log.append(EventKind::survey_response, survey(2), 1);
    }
    auto good = oracle::read_file(path);
    append_raw(path, R"({"offset":1,"kind":"survey_response","timest)");
    {
        EventLog log(path);
        CHECK(log.next_offset() == 1);
        CHECK(oracle::read_file(path) == good);
        log.append(EventKind::survey_response, survey(3), 2);
    }
    EventLog again(path);
    CHECK(again.next_offset() == 2);
}

TEST_CASE("a complete but unparsable final line is treated as torn") {
    oracle::TempDir dir("events");
    auto path = dir.path() / "events.jsonl";
    { EventLog(path).append(EventKind::survey_response, survey(2), 1); }
    append_raw(path, "{not json}\n");
    EventLog log(path);
    CHECK(log.next_offset() == 1);
}

TEST_CASE("corruption before the end is an error") {
    oracle::TempDir dir("events");
    auto path = dir.path() / "events.jsonl";
    { EventLog(path).append(EventKind::survey_response, survey(2), 1); }
    auto good = oracle::read_file(path);
    append_raw(path, "garbage\n" + good);
    CHECK_THROWS_AS(EventLog{path}, Error);
}

TEST_CASE("offset gaps are an error") {
    oracle::TempDir dir("events");
    auto path = dir.path() / "events.jsonl";
    Event e{3, EventKind::survey_response, 1, survey(1)};
    append_raw(path, serialize_event(e) + "\n");
    CHECK_THROWS_AS(EventLog{path}, Error);
}

TEST_CASE("serialize and parse round trip") {
    Event e{7, EventKind::impression, 99, json{{"participant", "p"}, {"target_kind", "card"}, {"target_id", "v"}}};
    auto line = serialize_event(e);
    CHECK(line.find('\n') == std::string::npos);
    CHECK(parse_event(line) == e);
    CHECK_THROWS(parse_event(R"({"offset":0,"kind":"nope","timestamp":0,"payload":{}})"));
    for (auto k : {EventKind::session_turn, EventKind::card_created, EventKind::card_canonicalized,
                   EventKind::story_created, EventKind::impression, EventKind::vote, EventKind::survey_response,
                   EventKind::aggregation_run}) {
        CHECK(parse_event_kind(to_string(k)) == k);
    }
}
