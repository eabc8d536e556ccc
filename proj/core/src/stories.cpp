#include "moralgraph/stories.hpp"

#include <algorithm>
#include <set>

#include "moralgraph/prompts.hpp"
#include "moralgraph/text.hpp"

namespace moralgraph {

using nlohmann::json;

bool chain_complete(const TransitionStory& story, const ValuesCard& from) {
    auto filled = [](const std::string& s) { return !text::trim(s).empty(); };
    if (!filled(story.shared_good) || !filled(story.clarification) || !filled(story.final_story)) return false;
    if (story.policy_mappings.size() != from.policies.size()) return false;
    for (std::size_t i = 0; i < from.policies.size(); ++i) {
        const auto& m = story.policy_mappings[i];
        if (m.old_policy != from.policies[i].text || !filled(m.change)) return false;
    }
    return true;
}

// ---- generation ---------------------------------------------------------------------------

std::vector<UpgradePair> StoryEngine::cluster_upgrade_pairs(const std::vector<ValuesCard>& cards,
                                                            const MoralContext& context,
                                                            const std::vector<WisdomEdge>& existing_edges) {
    if (cards.size() < 2) return {};
    std::vector<const ValuesCard*> sorted;
    for (const auto& c : cards) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });

    std::string user = "Context: " + context.text + "\nCards:\n";
    for (const auto* c : sorted) user += "[" + c->id + "]\n" + render_card(*c);

    std::set<std::pair<std::string, std::string>> taken;
    for (const auto& e : existing_edges)
        if (e.context == context.id) taken.emplace(e.from_value, e.to_value);
    std::set<std::string> known;
    for (const auto* c : sorted) known.insert(c->id);

    std::vector<UpgradePair> pairs;
    try {
        auto reply = gateway_.complete_chat(make_request(
            PurposeTag::upgrade_clustering, std::string(prompts::get("upgrade_clustering")), std::move(user)));
        auto j = json::parse(text::extract_json_block(reply));
        for (const auto& p : j.at("pairs")) {
            UpgradePair pair{p.at("from").get<std::string>(), p.at("to").get<std::string>()};
            if (pair.from == pair.to || !known.count(pair.from) || !known.count(pair.to)) continue;
            if (!taken.insert({pair.from, pair.to}).second) continue;
            pairs.push_back(std::move(pair));
        }
    } catch (const GatewayError&) {
        return {};
    } catch (const json::exception&) {
        return {};
    }
    return pairs;
}

namespace {

std::string ask(Gateway& gateway, std::string_view prompt_name, std::string user) {
    auto reply = gateway.complete_chat(
        make_request(PurposeTag::story_chain_step, std::string(prompts::get(prompt_name)), std::move(user)));
    auto trimmed = std::string(text::trim(reply));
    if (trimmed.empty()) {
        throw GatewayError(GatewayError::Kind::bad_response, "empty reply for story step " + std::string(prompt_name));
    }
    return trimmed;
}

}  // namespace

TransitionStory StoryEngine::generate_story(const ValuesCard& from, const ValuesCard& to, const MoralContext& context,
                                            std::string story_id) {
    if (from.id == to.id) throw PreconditionFailed("a story needs two different cards");
    TransitionStory s;
    s.id = std::move(story_id);
    s.from_value = from.id;
    s.to_value = to.id;
    s.context = context.id;

    std::string base = "Context: " + context.text + "\nFirst card:\n" + render_card(from) + "Second card:\n" +
                       render_card(to);
    s.shared_good = ask(gateway_, "story_shared_good", base);
    base += "Shared good: " + s.shared_good + "\n";
    s.clarification = ask(gateway_, "story_clarification", base);
    base += "Clarification: " + s.clarification + "\n";
    for (const auto& p : from.policies) {
        s.policy_mappings.push_back({p.text, ask(gateway_, "story_policy_mapping", base + "Policy: " + p.text + "\n")});
    }
    std::string changes = "Policy changes:\n";
    for (const auto& m : s.policy_mappings) changes += "- " + m.old_policy + " -> " + m.change + "\n";
    s.final_story = ask(gateway_, "story_final", base + changes);
    return s;
}

// ---- selection ----------------------------------------------------------------------------

std::vector<std::string> select_stories(const std::optional<EmbeddingVector>& participant_card,
                                        const std::vector<TransitionStory>& stories, const CanonicalPool& pool,
                                        std::size_t n) {
    if (!participant_card) throw PreconditionFailed("participant has no articulated card");
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& s : stories) {
        const auto* e = pool.embedding(s.from_value);
        if (!e) throw NotFound("story " + s.id + " refers to unknown card " + s.from_value);
        ranked.emplace_back(1.0 - cosine(*participant_card, *e), s.id);
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ranked.size() && i < n; ++i) out.push_back(ranked[i].second);
    return out;
}

double ImpressionCounts::hotness() const {
    return impressions == 0 ? 0.0 : static_cast<double>(votes) / static_cast<double>(impressions);
}

std::vector<std::string> select_vote_candidates(const std::optional<EmbeddingVector>& participant_card,
                                                const CanonicalPool& pool,
                                                const std::map<std::string, ImpressionCounts>& impressions,
                                                const std::set<std::string>& exclude, SlateConfig config) {
    std::vector<const ValuesCard*> eligible;
    for (const auto& c : pool.cards())
        if (!exclude.count(c.id)) eligible.push_back(&c);

    auto hot = eligible;
    auto heat = [&](const ValuesCard* c) {
        auto it = impressions.find(c->id);
        return it == impressions.end() ? 0.0 : it->second.hotness();
    };
    std::sort(hot.begin(), hot.end(), [&](auto* a, auto* b) {
        double ha = heat(a), hb = heat(b);
        if (ha != hb) return ha > hb;
        return a->id < b->id;
    });
    auto fresh = eligible;
    std::sort(fresh.begin(), fresh.end(), [](auto* a, auto* b) {
        if (a->created_at != b->created_at) return a->created_at > b->created_at;
        return a->id < b->id;
    });

    std::set<std::string> pick;
    for (std::size_t i = 0; i < hot.size() && i < config.hottest; ++i) pick.insert(hot[i]->id);
    for (std::size_t i = 0; i < fresh.size() && i < config.newest; ++i) pick.insert(fresh[i]->id);

    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& id : pick) {
        double d = participant_card ? 1.0 - cosine(*participant_card, *pool.embedding(id)) : 0.0;
        ranked.emplace_back(d, id);
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ranked.size() && i < config.slate; ++i) out.push_back(ranked[i].second);
    return out;
}

// ---- votes --------------------------------------------------------------------------------

void VoteLedger::record_impression(const std::string& participant, TargetKind kind, const std::string& target) {
    if (kind == TargetKind::story) {
        story_shown_[participant].insert(target);
    } else {
        card_shown_[participant].insert(target);
        ++card_impression_count_[target];
    }
}

bool VoteLedger::shown(const std::string& participant, TargetKind kind, const std::string& target) const {
    const auto& shown = kind == TargetKind::story ? story_shown_ : card_shown_;
    auto it = shown.find(participant);
    return it != shown.end() && it->second.count(target);
}

Tallies VoteLedger::record_story_vote(const std::string& participant, const std::string& story_id,
                                      const std::string& edge_id, VoteChoice choice, std::int64_t timestamp) {
    if (!shown(participant, TargetKind::story, story_id)) {
        throw PreconditionFailed("story " + story_id + " was not shown to " + participant);
    }
    story_votes_[edge_id][participant] = WisdomVote{participant, edge_id, choice, timestamp};
    return tallies(edge_id);
}

void VoteLedger::record_card_vote(const std::string& participant, const std::string& card_id, bool selected) {
    if (!shown(participant, TargetKind::card, card_id)) {
        throw PreconditionFailed("card " + card_id + " was not shown to " + participant);
    }
    card_votes_[card_id][participant] = selected;
}

Tallies VoteLedger::tallies(const std::string& edge_id) const { return tally(live_votes(edge_id)); }

std::vector<WisdomVote> VoteLedger::live_votes(const std::string& edge_id) const {
    std::vector<WisdomVote> out;
    if (auto it = story_votes_.find(edge_id); it != story_votes_.end()) {
        for (const auto& [p, v] : it->second) out.push_back(v);
    }
    return out;
}

std::vector<WisdomVote> VoteLedger::all_votes() const {
    std::vector<WisdomVote> out;
    for (const auto& [edge, by_participant] : story_votes_)
        for (const auto& [p, v] : by_participant) out.push_back(v);
    return out;
}

std::map<std::string, ImpressionCounts> VoteLedger::card_counts() const {
    std::map<std::string, ImpressionCounts> out;
    for (const auto& [card, n] : card_impression_count_) out[card].impressions = n;
    for (const auto& [card, by_participant] : card_votes_)
        for (const auto& [p, selected] : by_participant)
            if (selected) ++out[card].votes;
    return out;
}

std::map<std::string, std::set<std::string>> VoteLedger::card_selections() const {
    std::map<std::string, std::set<std::string>> out;
    for (const auto& [card, by_participant] : card_votes_)
        for (const auto& [p, selected] : by_participant)
            if (selected) out[p].insert(card);
    return out;
}

std::int64_t VoteLedger::card_impressions(const std::string& card) const {
    auto it = card_impression_count_.find(card);
    return it == card_impression_count_.end() ? 0 : it->second;
}

void to_json(json& j, const VoteLedger& v) {
    json story_votes = json::object();
    for (const auto& [edge, by_participant] : v.story_votes_) {
        json list = json::array();
        for (const auto& [p, vote] : by_participant) list.push_back(vote);
        story_votes[edge] = std::move(list);
    }
    j = json{{"story_shown", v.story_shown_},
             {"card_shown", v.card_shown_},
             {"card_impressions", v.card_impression_count_},
             {"story_votes", story_votes},
             {"card_votes", v.card_votes_}};
}

void from_json(const json& j, VoteLedger& v) {
    v = VoteLedger{};
    j.at("story_shown").get_to(v.story_shown_);
    j.at("card_shown").get_to(v.card_shown_);
    j.at("card_impressions").get_to(v.card_impression_count_);
    for (const auto& [edge, list] : j.at("story_votes").items()) {
        for (const auto& item : list) {
            auto vote = item.get<WisdomVote>();
            v.story_votes_[edge][vote.participant_id] = vote;
        }
    }
    j.at("card_votes").get_to(v.card_votes_);
}

void to_json(json& j, const PolicyMapping& v) { j = json{{"old_policy", v.old_policy}, {"change", v.change}}; }

void from_json(const json& j, PolicyMapping& v) {
    j.at("old_policy").get_to(v.old_policy);
    j.at("change").get_to(v.change);
}

void to_json(json& j, const TransitionStory& v) {
    j = json{{"id", v.id},
             {"from_value", v.from_value},
             {"to_value", v.to_value},
             {"context", v.context},
             {"shared_good", v.shared_good},
             {"clarification", v.clarification},
             {"policy_mappings", v.policy_mappings},
             {"final_story", v.final_story}};
}

void from_json(const json& j, TransitionStory& v) {
    j.at("id").get_to(v.id);
    j.at("from_value").get_to(v.from_value);
    j.at("to_value").get_to(v.to_value);
    j.at("context").get_to(v.context);
    j.at("shared_good").get_to(v.shared_good);
    j.at("clarification").get_to(v.clarification);
    j.at("policy_mappings").get_to(v.policy_mappings);
    j.at("final_story").get_to(v.final_story);
}

}  // namespace moralgraph
