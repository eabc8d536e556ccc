#include "moralgraph/api.hpp"

#include <regex>
#include <thread>

#include <httplib.h>

#include "moralgraph/graph_io.hpp"
#include "moralgraph/text.hpp"

namespace moralgraph {

using nlohmann::json;

struct Api::Server {
    httplib::Server http;
    std::thread thread;
};

namespace {

ApiResponse reply(int status, const json& body) { return {status, "application/json", body.dump()}; }

ApiResponse error(int status, const std::string& message, const std::vector<std::string>& problems = {}) {
    json body = {{"error", message}};
    if (!problems.empty()) body["problems"] = problems;
    return reply(status, body);
}

json parse_body(std::string_view body) {
    if (text::trim(body).empty()) return json::object();
    auto j = json::parse(body);
    if (!j.is_object()) throw InvalidArgument("request body must be a JSON object");
    return j;
}

std::string required_string(const json& body, const char* key) {
    if (!body.contains(key) || !body.at(key).is_string() || text::trim(body.at(key).get<std::string>()).empty()) {
        throw SchemaError({std::string("/") + key + ": required string"});
    }
    return body.at(key).get<std::string>();
}

std::string required_param(const std::map<std::string, std::string>& query, const char* key) {
    auto it = query.find(key);
    if (it == query.end() || it->second.empty()) throw InvalidArgument(std::string("missing query parameter ") + key);
    return it->second;
}

json session_view(const ElicitationSession& s) {
    return json{{"id", s.id},
                {"participant_id", s.participant_id},
                {"scenario_id", s.scenario_id},
                {"phase", s.phase},
                {"draft_card", s.draft_card ? json(*s.draft_card) : json(nullptr)},
                {"edit_rounds", s.edit_rounds},
                {"abandon_offered", s.abandon_offered},
                {"card_id", s.card_id}};
}

}  // namespace

Api::Api(Engine& engine) : engine_(engine) {}

Api::~Api() { stop(); }

ApiResponse Api::handle(std::string_view method, std::string_view raw_path, const std::map<std::string, std::string>& query,
                        std::string_view raw_body) {
    static const std::regex session_messages(R"(^/sessions/([^/]+)/messages$)");
    static const std::regex session_confirm(R"(^/sessions/([^/]+)/card/confirm$)");
    static const std::regex session_abandon(R"(^/sessions/([^/]+)/abandon$)");
    static const std::regex session_get(R"(^/sessions/([^/]+)$)");
    const std::string path(raw_path);
    std::smatch m;
    try {
        if (method == "POST") {
            auto body = parse_body(raw_body);
            if (path == "/sessions") {
                auto participant = required_string(body, "participant_id");
                auto scenario = required_string(body, "scenario_id");
                auto demographics = body.value("demographics", std::map<std::string, std::string>{});
                auto s = engine_.start_session(participant, scenario, demographics);
                return reply(201, {{"session", session_view(s)}, {"reply", s.transcript.back().content}});
            }
            if (std::regex_match(path, m, session_messages)) {
                auto text = required_string(body, "text");
                auto answer = engine_.post_message(m[1], text);
                return reply(200, {{"reply", answer}, {"session", session_view(engine_.session(m[1]))}});
            }
            if (std::regex_match(path, m, session_confirm)) {
                auto r = engine_.confirm_card(m[1]);
                return reply(200, {{"card", r.card},
                                   {"canonical",
                                    {{"outcome", to_string(r.canonical.outcome)},
                                     {"canonical_id", r.canonical.canonical_id},
                                     {"rationale", r.canonical.rationale}}}});
            }
            if (std::regex_match(path, m, session_abandon)) {
                engine_.abandon_session(m[1]);
                return reply(200, {{"session", session_view(engine_.session(m[1]))}});
            }
            if (path == "/votes") {
                auto participant = required_string(body, "participant_id");
                if (body.contains("story_id")) {
                    auto choice = parse_vote_choice(required_string(body, "choice"));
                    if (!choice) throw SchemaError({"/choice: must be wiser, not_wiser or unsure"});
                    auto tallies = engine_.vote_story(participant, required_string(body, "story_id"), *choice);
                    return reply(200, {{"tallies", tallies}});
                }
                if (!body.contains("selected") || !body.at("selected").is_boolean()) {
                    throw SchemaError({"/selected: required boolean"});
                }
                engine_.vote_card(participant, required_string(body, "card_id"), body.at("selected").get<bool>());
                return reply(200, {{"ok", true}});
            }
            if (path == "/survey") {
                auto participant = required_string(body, "participant_id");
                auto question = required_string(body, "question");
                if (!body.contains("value") || !body.at("value").is_number_integer()) {
                    throw SchemaError({"/value: required integer"});
                }
                int value = body.at("value").get<int>();
                if (value < 1 || value > 5) throw SchemaError({"/value: must be between 1 and 5"});
                if (question == kEndorsementQuestion) engine_.endorse(participant, value >= 4);
                else engine_.survey(participant, question, value);
                return reply(200, {{"ok", true}});
            }
            if (path == "/stories/generate") {
                return reply(200, {{"created", engine_.generate_stories()}});
            }
            if (path == "/aggregate") {
                auto g = engine_.aggregate();
                return reply(200, {{"aggregation", *g.aggregation}});
            }
            if (path == "/retrieve") {
                auto r = engine_.retrieve(required_string(body, "state"));
                return reply(200, {{"guidance", r.guidance},
                                   {"context_id", r.context_id},
                                   {"context_text", r.context_text},
                                   {"winner_id", r.winner_id},
                                   {"similarity", r.similarity},
                                   {"rationale", r.rationale}});
            }
        } else if (method == "GET") {
            if (std::regex_match(path, m, session_get)) return reply(200, {{"session", session_view(engine_.session(m[1]))}});
            if (path == "/cards") {
                json cards = json::array();
                if (auto p = query.find("participant"); p != query.end() && !p->second.empty()) {
                    for (const auto& c : engine_.next_cards(p->second)) cards.push_back(c);
                } else {
                    for (const auto& c : engine_.graph().values) cards.push_back(c);
                }
                return reply(200, {{"cards", cards}});
            }
            if (path == "/stories/next") {
                json stories = json::array();
                for (const auto& s : engine_.next_stories(required_param(query, "participant"))) {
                    json entry = s;
                    if (auto from = engine_.canonical_card(s.from_value)) entry["from_card"] = *from;
                    if (auto to = engine_.canonical_card(s.to_value)) entry["to_card"] = *to;
                    stories.push_back(std::move(entry));
                }
                return reply(200, {{"stories", stories}});
            }
            if (path == "/graph") return reply(200, export_graph(engine_.graph()));
            if (path == "/graph/winners") {
                auto g = engine_.graph();
                const auto& winners = g.aggregation->winners;
                auto describe = [&](const MoralContext& c) {
                    auto w = winners.find(c.id);
                    json entry = {{"context", c}, {"winner", nullptr}};
                    if (w != winners.end()) entry["winner"] = *g.find_value(w->second);
                    return entry;
                };
                auto q = query.find("context");
                if (q == query.end() || q->second.empty()) {
                    json all = json::array();
                    for (const auto& c : g.contexts) all.push_back(describe(c));
                    return reply(200, {{"winners", all}});
                }
                for (const auto& c : g.contexts) {
                    if (c.id == q->second || text::iequals(c.text, q->second)) return reply(200, describe(c));
                }
                throw NotFound("unknown context " + q->second);
            }
            if (path == "/graph/provenance") return reply(200, engine_.provenance(required_param(query, "card")));
            if (path == "/export/alignment-target") {
                auto t = query.find("transitive");
                bool transitive = t != query.end() && (t->second == "1" || t->second == "true");
                return {200, "application/x-ndjson", to_jsonl(export_alignment_target(engine_.graph(), transitive))};
            }
        }
        return error(404, "no route for " + std::string(method) + " " + path);
    } catch (const SchemaError& e) {
        return error(400, "schema violation", e.problems());
    } catch (const InvalidArgument& e) {
        return error(400, e.what());
    } catch (const json::exception& e) {
        return error(400, std::string("malformed JSON: ") + e.what());
    } catch (const NotFound& e) {
        return error(404, e.what());
    } catch (const PreconditionFailed& e) {
        return error(409, e.what());
    } catch (const GatewayError& e) {
        return error(e.kind() == GatewayError::Kind::budget_exceeded ? 429 : 502, e.what());
    }
}

int Api::start(const std::string& host, int port) {
    if (server_) throw PreconditionFailed("server already running");
    server_ = std::make_unique<Server>();
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params) query[k] = v;
        auto r = handle(req.method, req.path, query, req.body);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    server_->http.Get(R"(/.*)", route);
    server_->http.Post(R"(/.*)", route);
    int bound = port;
    if (port == 0) {
        bound = server_->http.bind_to_any_port(host);
    } else if (!server_->http.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) {
        server_.reset();
        throw Error("cannot bind " + host + ":" + std::to_string(port));
    }
    server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
    server_->http.wait_until_ready();
    return bound;
}

void Api::serve(const std::string& host, int port) {
    start(host, port);
    server_->thread.join();
}

void Api::stop() {
    if (!server_) return;
    server_->http.stop();
    if (server_->thread.joinable()) server_->thread.join();
    server_.reset();
}

}  // namespace moralgraph
