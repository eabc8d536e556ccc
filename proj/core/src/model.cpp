#include "moralgraph/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "moralgraph/errors.hpp"
#include "moralgraph/text.hpp"

namespace moralgraph {

namespace {

bool is_capitalized_word(std::string_view word) {
    bool has_letter = false;
    for (unsigned char c : word) {
        if (std::isalpha(c)) {
            has_letter = true;
            if (!std::isupper(c)) return false;
        }
    }
    return has_letter;
}

std::size_t count_sentences(std::string_view s) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == s.size() || s[i + 1] == ' ')) ++n;
    }
    if (n == 0 && !text::trim(s).empty()) n = 1;
    return n;
}

bool untrimmed(std::string_view s) { return text::trim(s).size() != s.size(); }

}  // namespace

std::string normalize_context_text(std::string_view raw) {
    std::string s = text::squash_whitespace(raw);
    while (!s.empty() && (s.front() == '"' || s.front() == '\'' || s.front() == '-' || s.front() == '*' ||
                          s.front() == ' ')) {
        s.erase(s.begin());
    }
    while (!s.empty() && (s.back() == '"' || s.back() == '\'' || s.back() == '.' || s.back() == ' ')) s.pop_back();
    if (s.empty()) return {};

    if (text::istarts_with(s, "when ")) {
        s.replace(0, 4, "When");
    } else {
        if (s.size() > 1 && std::isupper(static_cast<unsigned char>(s[0])) &&
            !std::isupper(static_cast<unsigned char>(s[1]))) {
            s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
        }
        s = "When " + s;
    }
    if (s.size() > kMaxContextLength) {
        auto cut = s.rfind(' ', kMaxContextLength);
        s.resize(cut == std::string::npos || cut < 5 ? kMaxContextLength : cut);
    }
    return s;
}

std::string AttentionalPolicy::attention_target() const {
    std::vector<std::string> words;
    std::string_view rest = text::trim(text);
    while (!rest.empty()) {
        auto sp = rest.find(' ');
        std::string_view word = rest.substr(0, sp);
        if (!is_capitalized_word(word)) break;
        words.emplace_back(word);
        if (sp == std::string_view::npos) break;
        rest = text::trim(rest.substr(sp));
    }
    std::string phrase = text::join(words, " ");
    while (!phrase.empty() && std::ispunct(static_cast<unsigned char>(phrase.back()))) phrase.pop_back();
    auto letters = std::count_if(phrase.begin(), phrase.end(), [](unsigned char c) { return std::isalpha(c); });
    return letters >= 2 ? phrase : std::string{};
}

bool same_content(const ValuesCard& a, const ValuesCard& b) {
    return a.title == b.title && a.summary == b.summary && a.policies == b.policies;
}

ValidationReport validate_card(const ValuesCard& card) {
    ValidationReport r;
    if (text::trim(card.title).empty()) r.errors.emplace_back("empty title");
    else if (text::contains_newline(card.title)) r.errors.emplace_back("title spans multiple lines");
    else if (untrimmed(card.title)) r.errors.emplace_back("untrimmed whitespace in title");

    if (text::trim(card.summary).empty()) r.errors.emplace_back("empty summary");
    else if (text::contains_newline(card.summary)) r.errors.emplace_back("summary spans multiple lines");
    else if (untrimmed(card.summary)) r.errors.emplace_back("untrimmed whitespace in summary");
    else if (count_sentences(card.summary) > 3) r.warnings.emplace_back("summary longer than 3 sentences");

    if (card.policies.empty()) {
        r.errors.emplace_back("no policies");
    } else if (card.policies.size() > kMaxPoliciesPerCard) {
        r.errors.emplace_back("too many policies (" + std::to_string(card.policies.size()) + " > " +
                              std::to_string(kMaxPoliciesPerCard) + ")");
    }
    std::set<std::string> seen;
    for (std::size_t i = 0; i < card.policies.size(); ++i) {
        const auto& p = card.policies[i].text;
        const std::string where = "policy " + std::to_string(i + 1);
        if (text::trim(p).empty()) {
            r.errors.push_back(where + " is empty");
            continue;
        }
        if (text::contains_newline(p)) r.errors.push_back(where + " spans multiple lines");
        else if (untrimmed(p)) r.errors.push_back("untrimmed whitespace in " + where);
        if (!seen.insert(p).second) r.errors.push_back(where + " duplicates an earlier policy");
        if (card.policies[i].attention_target().empty()) r.warnings.push_back(where + ": no attention target");
    }

    if (card.is_canonical() && card.canonical_of.empty() && card.origin.participant_id.empty()) {
        r.errors.emplace_back("canonical card has no origin");
    }
    return r;
}

std::string render_card(const ValuesCard& card) {
    auto report = validate_card(card);
    if (!report.ok()) throw InvalidArgument("cannot render invalid card: " + report.errors.front());
    std::string out = "Title: " + card.title + "\nSummary: " + card.summary + "\nPolicies:\n";
    for (const auto& p : card.policies) out += "- " + p.text + "\n";
    return out;
}

ValuesCard parse_card(std::string_view block) {
    auto lines = text::split_lines(block);
    ValuesCard card;
    std::size_t i = 0;
    auto expect_prefix = [&](std::string_view prefix) -> std::string {
        if (i >= lines.size() || lines[i].rfind(prefix, 0) != 0) {
            throw InvalidArgument("card text: expected line starting with '" + std::string(prefix) + "'");
        }
        return lines[i++].substr(prefix.size());
    };
    card.title = expect_prefix("Title: ");
    card.summary = expect_prefix("Summary: ");
    if (i >= lines.size() || lines[i] != "Policies:") throw InvalidArgument("card text: missing 'Policies:' line");
    ++i;
    for (; i < lines.size(); ++i) {
        if (lines[i].rfind("- ", 0) != 0) throw InvalidArgument("card text: policy line must start with '- '");
        card.policies.push_back({lines[i].substr(2)});
    }
    return card;
}

std::string_view to_string(VoteChoice choice) {
    switch (choice) {
        case VoteChoice::wiser: return "wiser";
        case VoteChoice::not_wiser: return "not_wiser";
        case VoteChoice::unsure: return "unsure";
    }
    return "unsure";
}

std::optional<VoteChoice> parse_vote_choice(std::string_view s) {
    if (s == "wiser") return VoteChoice::wiser;
    if (s == "not_wiser") return VoteChoice::not_wiser;
    if (s == "unsure") return VoteChoice::unsure;
    return std::nullopt;
}

void Tallies::add(VoteChoice choice, std::int64_t delta) {
    switch (choice) {
        case VoteChoice::wiser: wiser += delta; break;
        case VoteChoice::not_wiser: not_wiser += delta; break;
        case VoteChoice::unsure: unsure += delta; break;
    }
}

Tallies tally(const std::vector<WisdomVote>& votes) {
    Tallies t;
    for (const auto& v : votes) t.add(v.choice);
    return t;
}

std::string_view to_string(EdgeStatus status) {
    switch (status) {
        case EdgeStatus::candidate: return "candidate";
        case EdgeStatus::accepted: return "accepted";
        case EdgeStatus::rejected: return "rejected";
        case EdgeStatus::omitted: return "omitted";
    }
    return "candidate";
}

const ValuesCard* MoralGraph::find_value(std::string_view id) const {
    for (const auto& v : values)
        if (v.id == id) return &v;
    return nullptr;
}

const MoralContext* MoralGraph::find_context(std::string_view id) const {
    for (const auto& c : contexts)
        if (c.id == id) return &c;
    return nullptr;
}

std::vector<std::string> check_graph_invariants(const MoralGraph& g) {
    std::vector<std::string> problems;
    std::set<std::string> values, contexts;
    for (const auto& v : g.values) values.insert(v.id);
    for (const auto& c : g.contexts) contexts.insert(c.id);

    for (const auto& e : g.edges) {
        if (!values.count(e.from_value)) problems.push_back("edge " + e.id + ": unknown from_value " + e.from_value);
        if (!values.count(e.to_value)) problems.push_back("edge " + e.id + ": unknown to_value " + e.to_value);
        if (e.from_value == e.to_value) problems.push_back("edge " + e.id + ": self loop");
        if (!contexts.count(e.context)) problems.push_back("edge " + e.id + ": unknown context " + e.context);
        if (e.tallies.wiser < 0 || e.tallies.not_wiser < 0 || e.tallies.unsure < 0)
            problems.push_back("edge " + e.id + ": negative tally");
    }
    if (!g.aggregation) return problems;

    const auto& agg = *g.aggregation;
    if (!agg.scores.empty()) {
        double sum = 0.0;
        for (const auto& [id, s] : agg.scores) {
            if (s < 0.0) problems.push_back("score of " + id + " is negative");
            sum += s;
        }
        if (std::abs(sum - 1.0) > 1e-9) problems.push_back("scores sum to " + std::to_string(sum));
    }
    std::set<std::string> removed(agg.removed_cycle_edges.begin(), agg.removed_cycle_edges.end());
    for (const auto& [ctx, winner] : agg.winners) {
        if (!contexts.count(ctx)) problems.push_back("winner for unknown context " + ctx);
        if (!values.count(winner)) problems.push_back("winner " + winner + " is not a value");
        bool has_accepted = false, incident = false;
        for (const auto& e : g.edges) {
            if (e.context != ctx || e.status != EdgeStatus::accepted || removed.count(e.id)) continue;
            has_accepted = true;
            incident = incident || e.from_value == winner || e.to_value == winner;
        }
        if (has_accepted && !incident)
            problems.push_back("winner " + winner + " is not incident to an accepted edge of " + ctx);
    }
    return problems;
}

// ---- JSON -------------------------------------------------------------------------------

using nlohmann::json;

void to_json(json& j, const Scenario& v) { j = json{{"id", v.id}, {"prompt", v.prompt}, {"tag", v.tag}}; }
void from_json(const json& j, Scenario& v) {
    j.at("id").get_to(v.id);
    j.at("prompt").get_to(v.prompt);
    v.tag = j.value("tag", "");
}

void to_json(json& j, const Participant& v) {
    j = json{{"id", v.id}, {"demographics", v.demographics}, {"chosen_scenario", v.chosen_scenario}};
}
void from_json(const json& j, Participant& v) {
    j.at("id").get_to(v.id);
    v.demographics = j.value("demographics", std::map<std::string, std::string>{});
    v.chosen_scenario = j.value("chosen_scenario", "");
}

void to_json(json& j, const MoralContext& v) {
    j = json{{"id", v.id}, {"text", v.text}, {"source_scenario", v.source_scenario}};
}
void from_json(const json& j, MoralContext& v) {
    j.at("id").get_to(v.id);
    j.at("text").get_to(v.text);
    v.source_scenario = j.value("source_scenario", "");
}

void to_json(json& j, const AttentionalPolicy& v) {
    j = json{{"text", v.text}, {"attention_target", v.attention_target()}};
}
void from_json(const json& j, AttentionalPolicy& v) {
    if (j.is_string()) v.text = j.get<std::string>();
    else j.at("text").get_to(v.text);
}

void to_json(json& j, const CardOrigin& v) {
    j = json{{"kind", v.kind},
             {"participant_id", v.participant_id},
             {"scenario_id", v.scenario_id},
             {"session_id", v.session_id}};
}
void from_json(const json& j, CardOrigin& v) {
    if (j.is_string()) {
        v = CardOrigin{};
        v.kind = j.get<std::string>() == "canonical" ? OriginKind::canonical : OriginKind::custom;
        return;
    }
    v.kind = j.value("kind", std::string("custom")) == "canonical" ? OriginKind::canonical : OriginKind::custom;
    v.participant_id = j.value("participant_id", "");
    v.scenario_id = j.value("scenario_id", "");
    v.session_id = j.value("session_id", "");
}

void to_json(json& j, const ValuesCard& v) {
    j = json{{"id", v.id},
             {"title", v.title},
             {"summary", v.summary},
             {"policies", v.policies},
             {"origin", v.origin},
             {"canonical_of", v.canonical_of},
             {"created_at", v.created_at}};
}
void from_json(const json& j, ValuesCard& v) {
    v.id = j.value("id", "");
    j.at("title").get_to(v.title);
    v.summary = j.value("summary", "");
    j.at("policies").get_to(v.policies);
    v.origin = j.contains("origin") ? j.at("origin").get<CardOrigin>() : CardOrigin{};
    v.canonical_of = j.value("canonical_of", std::vector<std::string>{});
    v.created_at = j.value("created_at", std::int64_t{0});
}

void to_json(json& j, const WisdomVote& v) {
    j = json{{"participant_id", v.participant_id},
             {"edge_id", v.edge_id},
             {"choice", v.choice},
             {"timestamp", v.timestamp}};
}
void from_json(const json& j, WisdomVote& v) {
    j.at("participant_id").get_to(v.participant_id);
    j.at("edge_id").get_to(v.edge_id);
    auto choice = parse_vote_choice(j.at("choice").get<std::string>());
    if (!choice) throw InvalidArgument("unknown vote choice " + j.at("choice").dump());
    v.choice = *choice;
    v.timestamp = j.value("timestamp", std::int64_t{0});
}

void to_json(json& j, const Tallies& v) {
    j = json{{"wiser", v.wiser}, {"not_wiser", v.not_wiser}, {"unsure", v.unsure}};
}
void from_json(const json& j, Tallies& v) {
    j.at("wiser").get_to(v.wiser);
    j.at("not_wiser").get_to(v.not_wiser);
    j.at("unsure").get_to(v.unsure);
}

void to_json(json& j, const WisdomEdge& v) {
    j = json{{"id", v.id},           {"from_value", v.from_value}, {"to_value", v.to_value},
             {"context", v.context}, {"story", v.story},           {"tallies", v.tallies},
             {"status", v.status}};
}
void from_json(const json& j, WisdomEdge& v) {
    j.at("id").get_to(v.id);
    j.at("from_value").get_to(v.from_value);
    j.at("to_value").get_to(v.to_value);
    j.at("context").get_to(v.context);
    v.story = j.value("story", "");
    v.tallies = j.contains("tallies") ? j.at("tallies").get<Tallies>() : Tallies{};
    v.status = j.value("status", EdgeStatus::candidate);
}

void to_json(json& j, const AcceptancePolicy& v) {
    j = json{{"min_votes", v.min_votes}, {"min_wiser_ratio", v.min_wiser_ratio}, {"count_unsure", v.count_unsure}};
}
void from_json(const json& j, AcceptancePolicy& v) {
    AcceptancePolicy d;
    v.min_votes = j.value("min_votes", d.min_votes);
    v.min_wiser_ratio = j.value("min_wiser_ratio", d.min_wiser_ratio);
    v.count_unsure = j.value("count_unsure", d.count_unsure);
}

void to_json(json& j, const PageRankParams& v) {
    j = json{{"damping", v.damping}, {"tolerance", v.tolerance}, {"max_iterations", v.max_iterations}};
}
void from_json(const json& j, PageRankParams& v) {
    PageRankParams d;
    v.damping = j.value("damping", d.damping);
    v.tolerance = j.value("tolerance", d.tolerance);
    v.max_iterations = j.value("max_iterations", d.max_iterations);
}

}  // namespace moralgraph
