#include "moralgraph/engine.hpp"

#include <algorithm>
#include <fstream>
#include <regex>

#include "moralgraph/text.hpp"

namespace moralgraph {

using nlohmann::json;

std::int64_t SystemClock::now() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

// ---- deployment ---------------------------------------------------------------------------

Deployment load_deployment(const json& doc) {
    Deployment d;
    if (!doc.is_object() || !doc.contains("scenarios")) throw SchemaError({"/scenarios: missing section"});
    try {
        doc.at("scenarios").get_to(d.scenarios);
        if (doc.contains("acceptance")) d.aggregation.acceptance = doc.at("acceptance").get<AcceptancePolicy>();
        if (doc.contains("pagerank")) d.aggregation.pagerank = doc.at("pagerank").get<PageRankParams>();
        d.aggregation.scope = doc.value("scope", RankingScope::global);
        d.aggregation.drop_entire_cycle = doc.value("drop_entire_cycle", false);
        if (doc.contains("dedup")) {
            d.dedup.k = doc.at("dedup").value("k", d.dedup.k);
            d.dedup.min_similarity = doc.at("dedup").value("min_similarity", d.dedup.min_similarity);
        }
        d.elicitation.max_edit_rounds = doc.value("max_edit_rounds", d.elicitation.max_edit_rounds);
        d.stories_per_participant = doc.value("stories_per_participant", d.stories_per_participant);
        d.context_match_threshold = doc.value("context_match_threshold", d.context_match_threshold);
        d.experience = doc.value("experience", std::map<std::string, std::string>{});
        d.snapshot_every = doc.value("snapshot_every", d.snapshot_every);
    } catch (const json::exception& e) {
        throw SchemaError({std::string("/: ") + e.what()});
    }
    std::vector<std::string> problems;
    std::set<std::string> ids, tags;
    if (d.scenarios.empty()) problems.emplace_back("/scenarios: at least one scenario is required");
    for (std::size_t i = 0; i < d.scenarios.size(); ++i) {
        const auto& s = d.scenarios[i];
        const auto path = "/scenarios/" + std::to_string(i);
        if (s.id.empty() || !ids.insert(s.id).second) problems.push_back(path + "/id: missing or duplicate");
        if (text::trim(s.prompt).empty()) problems.push_back(path + "/prompt: empty");
        if (!s.tag.empty() && !tags.insert(s.tag).second) problems.push_back(path + "/tag: duplicate");
    }
    if (!problems.empty()) throw SchemaError(problems);
    validate(d.aggregation.acceptance);
    validate(d.aggregation.pagerank);
    return d;
}

Deployment load_deployment_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open deployment file " + path.string());
    return load_deployment(json::parse(in));
}

json to_json(const Deployment& d) {
    return json{{"scenarios", d.scenarios},
                {"acceptance", d.aggregation.acceptance},
                {"pagerank", d.aggregation.pagerank},
                {"scope", d.aggregation.scope},
                {"drop_entire_cycle", d.aggregation.drop_entire_cycle},
                {"dedup", {{"k", d.dedup.k}, {"min_similarity", d.dedup.min_similarity}}},
                {"max_edit_rounds", d.elicitation.max_edit_rounds},
                {"stories_per_participant", d.stories_per_participant},
                {"context_match_threshold", d.context_match_threshold},
                {"experience", d.experience},
                {"snapshot_every", d.snapshot_every}};
}

// ---- engine -------------------------------------------------------------------------------

Engine::Engine(Deployment deployment, Gateway& gateway, Clock& clock)
    : deployment_(std::move(deployment)),
      gateway_(gateway),
      clock_(clock),
      elicitor_(gateway, deployment_.scenarios, deployment_.elicitation),
      dedup_(gateway, deployment_.dedup),
      stories_(gateway),
      state_(deployment_.scenarios) {}

Engine::Engine(Deployment deployment, Gateway& gateway, Clock& clock, const std::filesystem::path& storage_dir)
    : Engine(std::move(deployment), gateway, clock) {
    storage_dir_ = storage_dir;
    std::filesystem::create_directories(storage_dir / "snapshots");
    log_ = EventLog(storage_dir / "events.jsonl");
    load_snapshot();
    state_.apply_all(log_.events());
}

void Engine::load_snapshot() {
    static const std::regex pattern(R"(snapshot-(\d+)\.json)");
    std::int64_t best = -1;
    std::filesystem::path best_path;
    for (const auto& entry : std::filesystem::directory_iterator(*storage_dir_ / "snapshots")) {
        std::smatch m;
        auto name = entry.path().filename().string();
        if (!std::regex_match(name, m, pattern)) continue;
        auto offset = std::stoll(m[1].str());
        if (offset <= log_.next_offset() && offset > best) {
            best = offset;
            best_path = entry.path();
        }
    }
    if (best < 0) return;
    std::ifstream in(best_path);
    State loaded = json::parse(in).get<State>();
    loaded.scenarios = deployment_.scenarios;
    state_ = std::move(loaded);
}

void Engine::maybe_snapshot() {
    if (!storage_dir_ || deployment_.snapshot_every == 0) return;
    if (state_.next_offset % static_cast<std::int64_t>(deployment_.snapshot_every) != 0) return;
    auto dir = *storage_dir_ / "snapshots";
    auto final_path = dir / ("snapshot-" + std::to_string(state_.next_offset) + ".json");
    auto tmp = final_path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        out << json(state_).dump();
    }
    std::filesystem::rename(tmp, final_path);
}

std::int64_t Engine::append(EventKind kind, json payload) {
    auto offset = log_.append(kind, std::move(payload), clock_.now());
    state_.apply(log_.events().back());
    maybe_snapshot();
    return offset;
}

std::string Engine::allocate_id(std::string_view prefix, std::size_t n) const {
    return text::make_id(prefix, static_cast<long long>(n) + 1);
}

void Engine::session_event(const ElicitationSession& s) {
    Participant p;
    if (auto it = state_.participants.find(s.participant_id); it != state_.participants.end()) p = it->second;
    p.id = s.participant_id;
    if (p.chosen_scenario.empty()) p.chosen_scenario = s.scenario_id;
    append(EventKind::session_turn, json{{"participant", p}, {"session", s}});
}

ElicitationSession Engine::start_session(const std::string& participant_id, const std::string& scenario_id,
                                         const std::map<std::string, std::string>& demographics) {
    std::lock_guard lock(mutex_);
    if (participant_id.empty()) throw InvalidArgument("participant id is empty");
    Participant p{participant_id, demographics, scenario_id};
    if (auto it = state_.participants.find(participant_id); it != state_.participants.end()) {
        p = it->second;
        if (!demographics.empty()) p.demographics = demographics;
    }
    auto s = elicitor_.start_session(p, scenario_id, allocate_id("session", state_.sessions.size()));
    p.chosen_scenario = scenario_id;
    append(EventKind::session_turn, json{{"participant", p}, {"session", s}});
    return s;
}

std::string Engine::post_message(const std::string& session_id, const std::string& text) {
    {
        std::lock_guard busy(busy_mutex_);
        if (!busy_sessions_.insert(session_id).second) {
            throw PreconditionFailed("session " + session_id + " already has a message in flight");
        }
    }
    struct Release {
        Engine& e;
        const std::string& id;
        ~Release() {
            std::lock_guard busy(e.busy_mutex_);
            e.busy_sessions_.erase(id);
        }
    } release{*this, session_id};

    ElicitationSession s;
    {
        std::lock_guard lock(mutex_);
        auto it = state_.sessions.find(session_id);
        if (it == state_.sessions.end()) throw NotFound("unknown session " + session_id);
        s = it->second;
    }
    auto reply = elicitor_.advance(s, text);  // gateway calls run outside the state lock
    std::lock_guard lock(mutex_);
    session_event(s);
    return reply;
}

CanonicalizeResult Engine::canonicalize_locked(const ValuesCard& card) {
    auto result = dedup_.plan(state_.pool, card, allocate_id("value", state_.pool.size()));
    append(EventKind::card_canonicalized, json{{"custom_card_id", card.id}, {"result", result}});
    return result;
}

ConfirmResult Engine::confirm_card(const std::string& session_id) {
    std::lock_guard lock(mutex_);
    auto it = state_.sessions.find(session_id);
    if (it == state_.sessions.end()) throw NotFound("unknown session " + session_id);
    auto s = it->second;
    elicitor_.confirm(s);
    ValuesCard card;
    try {
        card = elicitor_.finalize_card(s, allocate_id("card", state_.custom_cards.size()), clock_.now());
    } catch (const InvalidArgument&) {
        session_event(s);  // back to drafting
        throw;
    }
    session_event(s);
    append(EventKind::card_created, json{{"card", card}});
    return {card, canonicalize_locked(card)};
}

void Engine::abandon_session(const std::string& session_id) {
    std::lock_guard lock(mutex_);
    auto it = state_.sessions.find(session_id);
    if (it == state_.sessions.end()) throw NotFound("unknown session " + session_id);
    auto s = it->second;
    elicitor_.abandon(s);
    session_event(s);
}

void Engine::endorse(const std::string& participant_id, bool approved) {
    std::lock_guard lock(mutex_);
    auto card = state_.participant_card.find(participant_id);
    auto canonical = state_.canonical_for_participant(participant_id);
    if (card == state_.participant_card.end() || !canonical) {
        throw PreconditionFailed("participant " + participant_id + " has no deduplicated card to endorse");
    }
    append(EventKind::survey_response, json{{"participant", participant_id},
                                            {"question", kEndorsementQuestion},
                                            {"value", approved ? 5 : 1},
                                            {"card_id", *canonical},
                                            {"custom_card_id", card->second}});
}

std::size_t Engine::retry_deferred() {
    std::lock_guard lock(mutex_);
    std::size_t resolved = 0;
    auto pending = state_.deferred_cards;
    for (const auto& id : pending) {
        auto r = canonicalize_locked(state_.custom_cards.at(id));
        if (r.outcome != CanonicalizeOutcome::deferred) ++resolved;
    }
    return resolved;
}

std::size_t Engine::generate_stories() {
    std::lock_guard lock(mutex_);
    std::size_t created = 0;
    auto scenarios = deployment_.scenarios;
    std::sort(scenarios.begin(), scenarios.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (const auto& scenario : scenarios) {
        std::vector<ValuesCard> cards;
        for (const auto& c : state_.pool.cards())
            if (c.origin.scenario_id == scenario.id) cards.push_back(c);
        if (cards.size() < 2) continue;

        std::vector<std::string> derived;
        try {
            derived = derive_contexts(gateway_, scenario.prompt);
        } catch (const GatewayError&) {
            continue;
        }
        for (const auto& text : derived) {
            MoralContext ctx{"", text, scenario.id};
            for (const auto& [id, existing] : state_.contexts) {
                if (existing.source_scenario == scenario.id && text::iequals(existing.text, text)) ctx = existing;
            }
            std::vector<WisdomEdge> edges;
            for (const auto& [id, e] : state_.edges) edges.push_back(e);
            for (const auto& pair : stories_.cluster_upgrade_pairs(cards, ctx, edges)) {
                TransitionStory story;
                try {
                    story = stories_.generate_story(*state_.pool.find(pair.from), *state_.pool.find(pair.to), ctx,
                                                    allocate_id("story", state_.stories.size()));
                } catch (const GatewayError&) {
                    continue;  // no partial stories
                }
                if (ctx.id.empty()) ctx.id = allocate_id("context", state_.contexts.size());
                story.context = ctx.id;
                append(EventKind::story_created,
                       json{{"story", story}, {"edge_id", allocate_id("edge", state_.edges.size())}, {"context", ctx}});
                ++created;
            }
        }
    }
    return created;
}

std::optional<EmbeddingVector> Engine::participant_embedding(const std::string& participant_id) const {
    auto card = state_.participant_card.find(participant_id);
    if (card == state_.participant_card.end()) return std::nullopt;
    return gateway_.embed(policy_text(state_.custom_cards.at(card->second)));
}

std::vector<TransitionStory> Engine::next_stories(const std::string& participant_id) {
    std::lock_guard lock(mutex_);
    auto emb = participant_embedding(participant_id);
    if (!emb) throw PreconditionFailed("participant " + participant_id + " has no card yet");
    std::vector<TransitionStory> available;
    for (const auto& [id, s] : state_.stories)
        if (!state_.votes.shown(participant_id, TargetKind::story, id)) available.push_back(s);
    auto ids = select_stories(emb, available, state_.pool, deployment_.stories_per_participant);
    std::vector<TransitionStory> out;
    for (const auto& id : ids) {
        append(EventKind::impression, json{{"participant", participant_id}, {"target_kind", "story"}, {"target_id", id}});
        out.push_back(state_.stories.at(id));
    }
    return out;
}

Tallies Engine::vote_story(const std::string& participant_id, const std::string& story_id, VoteChoice choice) {
    std::lock_guard lock(mutex_);
    auto edge = state_.story_edge.find(story_id);
    if (edge == state_.story_edge.end()) throw NotFound("unknown story " + story_id);
    if (!state_.votes.shown(participant_id, TargetKind::story, story_id)) {
        throw PreconditionFailed("story " + story_id + " was not shown to " + participant_id);
    }
    append(EventKind::vote, json{{"participant", participant_id},
                                 {"target_kind", "story"},
                                 {"target_id", story_id},
                                 {"choice", to_string(choice)}});
    return state_.edges.at(edge->second).tallies;
}

std::vector<ValuesCard> Engine::next_cards(const std::string& participant_id) {
    std::lock_guard lock(mutex_);
    auto emb = participant_embedding(participant_id);
    std::set<std::string> exclude;
    if (auto own = state_.canonical_for_participant(participant_id)) exclude.insert(*own);
    for (const auto& c : state_.pool.cards())
        if (state_.votes.shown(participant_id, TargetKind::card, c.id)) exclude.insert(c.id);
    auto ids = select_vote_candidates(emb, state_.pool, state_.votes.card_counts(), exclude, deployment_.slate);
    std::vector<ValuesCard> out;
    for (const auto& id : ids) {
        append(EventKind::impression, json{{"participant", participant_id}, {"target_kind", "card"}, {"target_id", id}});
        out.push_back(*state_.pool.find(id));
    }
    return out;
}

void Engine::vote_card(const std::string& participant_id, const std::string& card_id, bool selected) {
    std::lock_guard lock(mutex_);
    if (!state_.pool.find(card_id)) throw NotFound("unknown card " + card_id);
    if (!state_.votes.shown(participant_id, TargetKind::card, card_id)) {
        throw PreconditionFailed("card " + card_id + " was not shown to " + participant_id);
    }
    append(EventKind::vote,
           json{{"participant", participant_id}, {"target_kind", "card"}, {"target_id", card_id}, {"selected", selected}});
}

void Engine::survey(const std::string& participant_id, const std::string& question, int value) {
    if (value < 1 || value > 5) throw InvalidArgument("survey answers must be between 1 and 5");
    if (text::trim(question).empty()) throw InvalidArgument("survey question is empty");
    std::lock_guard lock(mutex_);
    append(EventKind::survey_response, json{{"participant", participant_id}, {"question", question}, {"value", value}});
}

MoralGraph Engine::aggregate() {
    std::lock_guard lock(mutex_);
    auto g = state_.graph();
    moralgraph::aggregate(g, deployment_.aggregation);
    append(EventKind::aggregation_run, json{{"aggregation", *g.aggregation}});
    return g;
}

MoralGraph Engine::graph() const {
    std::lock_guard lock(mutex_);
    auto g = state_.graph();
    moralgraph::aggregate(g, deployment_.aggregation);
    return g;
}

json Engine::provenance(const std::string& card_id) const {
    auto g = graph();
    std::lock_guard lock(mutex_);
    const auto* card = state_.pool.find(card_id);
    if (!card) throw NotFound("unknown card " + card_id);
    json sources = json::array();
    for (const auto& custom_id : card->canonical_of) {
        const auto& custom = state_.custom_cards.at(custom_id);
        json entry = {{"custom_card", custom_id},
                      {"participant", custom.origin.participant_id},
                      {"scenario", custom.origin.scenario_id},
                      {"session", custom.origin.session_id}};
        if (auto s = state_.sessions.find(custom.origin.session_id); s != state_.sessions.end()) {
            entry["transcript"] = transcript_json(s->second);
        }
        sources.push_back(std::move(entry));
    }
    json edges = json::array();
    for (const auto& e : g.edges) {
        if (e.from_value != card_id && e.to_value != card_id) continue;
        json entry = {{"edge", e.id},        {"from_value", e.from_value}, {"to_value", e.to_value},
                      {"context", e.context}, {"status", e.status},         {"tallies", e.tallies},
                      {"story", e.story}};
        if (auto s = state_.stories.find(e.story); s != state_.stories.end()) entry["final_story"] = s->second.final_story;
        json voters = json::array();
        for (const auto& v : state_.votes.live_votes(e.id)) voters.push_back(v);
        entry["votes"] = voters;
        edges.push_back(std::move(entry));
    }
    json winner_of = json::array();
    for (const auto& [ctx, w] : g.aggregation->winners)
        if (w == card_id) winner_of.push_back(ctx);
    json endorsements = json::array();
    if (auto it = state_.pool.endorsements().find(card_id); it != state_.pool.endorsements().end()) {
        endorsements = it->second;
    }
    return json{{"card", *card},
                {"score", g.aggregation->scores.count(card_id) ? g.aggregation->scores.at(card_id) : 0.0},
                {"winner_of", winner_of},
                {"sources", sources},
                {"edges", edges},
                {"endorsements", endorsements}};
}

Retrieval Engine::retrieve(const std::string& conversation_state) {
    auto g = graph();
    return retrieve_value_for_state(gateway_, conversation_state, g, deployment_.context_match_threshold);
}

std::optional<ValuesCard> Engine::canonical_card(const std::string& id) const {
    std::lock_guard lock(mutex_);
    if (const auto* c = state_.pool.find(id)) return *c;
    return std::nullopt;
}

ElicitationSession Engine::session(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = state_.sessions.find(id);
    if (it == state_.sessions.end()) throw NotFound("unknown session " + id);
    return it->second;
}

State Engine::snapshot() const {
    std::lock_guard lock(mutex_);
    return state_;
}

std::string Engine::dump_log() const {
    std::lock_guard lock(mutex_);
    return log_.dump();
}

}  // namespace moralgraph
