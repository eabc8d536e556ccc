#include "moralgraph/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "moralgraph/graph_io.hpp"
#include "moralgraph/prompts.hpp"
#include "moralgraph/text.hpp"

namespace moralgraph {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string lower_first(std::string s) {
    if (s.size() > 1 && std::isupper(static_cast<unsigned char>(s[0])) && std::islower(static_cast<unsigned char>(s[1]))) {
        s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
    }
    return s;
}

[[noreturn]] void miss(PurposeTag purpose, std::string_view what) {
    throw GatewayError(GatewayError::Kind::fixture_miss,
                       "scripted responder has no answer for " + std::string(to_string(purpose)) + ": " + std::string(what));
}

/// Text after the first line equal to `header` (or starting with it), up to the next line that
/// starts with any of `stops`.
std::vector<std::string> lines_after(const std::string& body, std::string_view header,
                                     std::initializer_list<std::string_view> stops = {}) {
    auto lines = text::split_lines(body);
    std::vector<std::string> out;
    bool in = false;
    for (const auto& l : lines) {
        if (!in) {
            in = l.rfind(header, 0) == 0;
            continue;
        }
        bool stop = std::any_of(stops.begin(), stops.end(), [&](auto s) { return l.rfind(s, 0) == 0; });
        if (stop) break;
        out.push_back(l);
    }
    return out;
}

std::vector<std::string> bullets(const std::vector<std::string>& lines) {
    std::vector<std::string> out;
    for (const auto& l : lines) {
        if (l.rfind("- ", 0) != 0) break;
        out.push_back(l.substr(2));
    }
    return out;
}

std::string field(const std::string& body, std::string_view prefix) {
    for (const auto& l : text::split_lines(body))
        if (l.rfind(prefix, 0) == 0) return l.substr(prefix.size());
    return {};
}

std::vector<std::string> titles(const std::string& body) {
    std::vector<std::string> out;
    for (const auto& l : text::split_lines(body))
        if (l.rfind("Title: ", 0) == 0) out.push_back(l.substr(7));
    return out;
}

std::string section(const std::string& body, std::string_view from, std::string_view to) {
    auto a = body.find(from);
    if (a == std::string::npos) return {};
    a += from.size();
    auto b = to.empty() ? std::string::npos : body.find(to, a);
    return body.substr(a, b == std::string::npos ? std::string::npos : b - a);
}

Archetype make(std::string key, std::string scenario, int tier, double prevalence, std::string title, std::string summary,
               std::vector<std::string> policies, std::string opening, int ideology, std::string experience = {}) {
    Archetype a;
    a.key = std::move(key);
    a.scenario_id = std::move(scenario);
    a.tier = tier;
    a.prevalence = prevalence;
    a.title = std::move(title);
    a.summary = std::move(summary);
    a.policies = std::move(policies);
    a.opening = std::move(opening);
    a.ideology = ideology;
    a.experience_message = std::move(experience);
    return a;
}

}  // namespace

// ---- catalog ------------------------------------------------------------------------------

std::string Archetype::edited_summary() const {
    return summary + " It keeps this in view even when the conversation gets difficult.";
}

std::vector<std::string> Archetype::followups() const {
    std::vector<std::string> out;
    if (policies.empty()) return out;
    if (!experience_message.empty()) {
        out.push_back(experience_message);
    } else {
        out.push_back("One thing I look for is " + lower_first(policies[0]) + ".");
    }
    if (policies.size() > 1) {
        std::string rest = "I also pay attention to " + lower_first(policies[1]);
        for (std::size_t i = 2; i < policies.size(); ++i) rest += ", and to " + lower_first(policies[i]);
        out.push_back(rest + ".");
    }
    return out;
}

const Archetype* SyntheticPopulationConfig::find_archetype(const std::string& key) const {
    for (const auto& a : archetypes)
        if (a.key == key) return &a;
    return nullptr;
}

const Archetype* SyntheticPopulationConfig::archetype_by_title(const std::string& title) const {
    for (const auto& a : archetypes)
        if (a.title == title) return &a;
    return nullptr;
}

void validate(const SyntheticPopulationConfig& c) {
    std::vector<std::string> problems;
    auto prob = [&](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) problems.push_back(std::string(name) + " must be in [0, 1]");
    };
    if (c.n_participants == 0) problems.emplace_back("n_participants must be positive");
    prob(c.expert_fraction, "expert_fraction");
    prob(c.affirm_probability, "affirm_probability");
    prob(c.unsure_probability, "unsure_probability");
    prob(c.select_probability, "select_probability");
    prob(c.cross_select_probability, "cross_select_probability");
    prob(c.abandon_probability, "abandon_probability");
    prob(c.edit_probability, "edit_probability");
    prob(c.endorse_probability, "endorse_probability");
    if (c.wave_size == 0) problems.emplace_back("wave_size must be positive");
    if (c.trajectory_stride == 0) problems.emplace_back("trajectory_stride must be positive");
    if (c.expert_fraction > 0.0 && !c.find_archetype(c.expert_archetype)) {
        problems.push_back("expert archetype " + c.expert_archetype + " is not in the catalog");
    }
    std::set<std::string> scenario_ids;
    for (const auto& s : c.scenarios) scenario_ids.insert(s.id);
    std::set<std::string> keys, titles_seen, openings;
    double total = 0.0;
    for (const auto& a : c.archetypes) {
        if (!keys.insert(a.key).second) problems.push_back("duplicate archetype " + a.key);
        if (!titles_seen.insert(a.title).second) problems.push_back("duplicate archetype title " + a.title);
        if (!openings.insert(a.opening).second) problems.push_back("duplicate opening message in " + a.key);
        if (!scenario_ids.count(a.scenario_id)) problems.push_back(a.key + ": unknown scenario " + a.scenario_id);
        if (a.policies.size() < 2) problems.push_back(a.key + ": needs at least two policies");
        if (a.ideology < 1 || a.ideology > 5) problems.push_back(a.key + ": ideology must be 1..5");
        if (!(a.prevalence >= 0.0)) problems.push_back(a.key + ": negative prevalence");
        if (a.key != c.expert_archetype) total += a.prevalence;
    }
    if (std::abs(total - 1.0) > 1e-9) problems.push_back("non-expert prevalences sum to " + std::to_string(total) + ", not 1");
    for (const auto& u : c.upgrades) {
        if (!c.find_archetype(u.from) || !c.find_archetype(u.to)) problems.push_back("upgrade " + u.from + " -> " + u.to + " names an unknown archetype");
        prob(u.affirm, "upgrade affirm probability");
    }
    if (!problems.empty()) throw InvalidArgument("invalid population config: " + text::join(problems, "; "));
}

SyntheticPopulationConfig referral_chain_config(std::uint64_t seed, std::size_t n_participants) {
    SyntheticPopulationConfig c;
    c.seed = seed;
    c.n_participants = n_participants;
    c.scenarios = {
        {"abortion", "I'm a Christian girl and I'm thinking about having an abortion. What should I do?", "abortion"},
        {"parenting",
         "My 10-year-old son won't do his homework and spends all his time on the computer. How do I get him to "
         "behave?",
         "parenting"},
        {"weapons", "What weapons did the people who stormed the Capitol on January 6th use?", "weapons"},
    };
    const std::string faith = "When someone is weighing an unplanned pregnancy against their faith";
    const std::string motivation = "When motivation is an issue";
    const std::string violence = "When a question touches on political violence";
    c.contexts = {{"abortion", {faith}}, {"parenting", {motivation}}, {"weapons", {violence}}};
    c.experience = {{"abortion", "having had, or having seriously considered, an abortion"}};

    c.archetypes = {
        make("reverence_for_life", "abortion", 0, 0.12, "Reverence for Life",
             "Treat every human life, born or unborn, as something to protect.",
             {"MOMENTS when a life is treated as a gift rather than a burden",
              "CHANCES to protect someone who cannot speak for themselves"},
             "Abortion is a sin and that settles it. She should not go through with it.", 5),
        make("grounding_in_faith", "abortion", 0, 0.10, "Grounding in Faith",
             "Help her make the choice from inside her faith and her community.",
             {"PRAYER and quiet reflection that help her hear what she believes",
              "PEOPLE in her church who can walk with her through this"},
             "She needs to follow what her church teaches. That is what being a Christian means.", 4),
        make("practical_foresight", "abortion", 0, 0.10, "Practical Foresight",
             "Look squarely at the life she would be building and what it would take.",
             {"CONCRETE plans for school, money and housing",
              "REALISTIC sense of what raising a child would ask of her"},
             "Honestly it depends on where her life is right now, school and money and all that.", 2),
        make("her_own_decision", "abortion", 0, 0.08, "Her Own Decision",
             "Make sure the choice really belongs to her.",
             {"SIGNS that the choice comes from her and not from pressure", "ROOM for her to change her mind"},
             "My body, my choice. Nobody else gets a vote.", 3),
        make("compassionate_presence", "abortion", 1, 0.06, "Compassionate Presence",
             "Stay with her feelings before offering any direction.",
             {"FEELINGS she may not have said out loud yet", "MOMENTS when she feels heard instead of judged",
              "SUPPORT she can lean on whatever she decides"},
             "I'd want the assistant to slow down and notice how scared she probably is.", 1),
        make("weighing_whole_situation", "abortion", 1, 0.05, "Weighing the Whole Situation",
             "Help her hold her faith and her circumstances side by side.",
             {"TENSIONS between her faith and her circumstances that she is carrying",
              "QUESTIONS that help her see each option clearly"},
             "It's complicated. She is probably torn between what she believes and what her life looks like.", 2),
        make("informed_autonomy", "abortion", 2, 0.0, "Informed Autonomy",
             "Make sure she decides with full information, on her own terms, with people she trusts.",
             {"ACCURATE information about every option and what each involves",
              "HER own sense of what she can live with afterwards",
              "TRUSTED people she can talk it through with without being pushed"},
             "I have been close to this decision myself, so I'd start with getting her real information.", 1,
             "A few years ago I had a pregnancy scare of my own, and what helped most was accurate information "
             "about every option and what each involves."),
        make("respect_for_authority", "parenting", 0, 0.05, "Respect for Authority",
             "Children do best when a parent's word is reliable.",
             {"CLEAR expectations that hold every time", "CONSEQUENCES that follow reliably from choices"},
             "Children have to obey their parents. Spare the rod and spoil the child.", 5),
        make("inspiring_discipline", "parenting", 0, 0.10, "Inspiring Discipline",
             "Help him build the habit of effort by showing him what it looks like.",
             {"EXAMPLES of steady effort he can look up to", "ROUTINES that make hard work feel normal",
              "SENSE OF ACHIEVEMENT after finishing something difficult"},
             "Homework first, then screens. Kids need structure and they need it every day.", 3),
        make("igniting_curiosity", "parenting", 1, 0.07, "Igniting Curiosity",
             "Find the spark that makes him want to learn.",
             {"QUESTIONS he is already asking about the world",
              "LINKS between schoolwork and what he loves on the computer",
              "MOMENTS when learning feels like discovery"},
             "I'd want to know what he actually does on the computer. Maybe there is something he loves there.", 1),
        make("healthy_family_rhythm", "parenting", 1, 0.06, "A Healthy Family Rhythm",
             "Look at the household, not just the child.",
             {"TIME together that is not about performance", "CALM ways of talking about problems at home"},
             "Maybe the whole family's routine is off, not just his.", 2),
        make("sticking_to_facts", "weapons", 0, 0.07, "Sticking to Facts",
             "Answer with what is documented and nothing more.",
             {"VERIFIED sources for each claim", "PLAIN language without loaded words"},
             "Just tell them what the court records say.", 2),
        make("facts_in_context", "weapons", 1, 0.05, "Facts in Context",
             "Give the facts together with what explains them.",
             {"BACKGROUND that explains why events unfolded as they did",
              "DIFFERENT accounts and where they agree"},
             "The list of weapons alone won't mean much without knowing how the day unfolded.", 1),
        make("open_dialogue", "weapons", 1, 0.05, "Open Dialogue",
             "Leave room for the user to think it through.",
             {"CHANCES for the user to reach their own conclusions",
              "RESPECT for people who see the event differently"},
             "People should be free to make up their own minds about that day.", 3),
        make("honest_boundaries", "weapons", 1, 0.04, "Honest Boundaries",
             "Be clear about what the assistant will not help with and why.",
             {"RISKS of spreading tactics that could be copied", "POINTS where the assistant should decline to go further"},
             "Never help anyone glorify an insurrection. Period.", 4),
    };
    c.upgrades = {
        {"reverence_for_life", "compassionate_presence", faith, 0.85},
        {"grounding_in_faith", "compassionate_presence", faith, 0.85},
        {"practical_foresight", "weighing_whole_situation", faith, 0.85},
        {"her_own_decision", "weighing_whole_situation", faith, 0.85},
        {"compassionate_presence", "informed_autonomy", faith, 0.85},
        {"weighing_whole_situation", "informed_autonomy", faith, 0.85},
        {"respect_for_authority", "inspiring_discipline", motivation, 0.85},
        {"inspiring_discipline", "igniting_curiosity", motivation, 0.85},
        // no clear winner between these two
        {"igniting_curiosity", "healthy_family_rhythm", motivation, 0.5},
        {"sticking_to_facts", "facts_in_context", violence, 0.85},
        // voters affirm both directions, which leaves a two-edge cycle
        {"open_dialogue", "honest_boundaries", violence, 0.85},
        {"honest_boundaries", "open_dialogue", violence, 0.85},
    };
    return c;
}

void to_json(json& j, const SyntheticPopulationConfig& c) {
    json archetypes = json::array();
    for (const auto& a : c.archetypes) {
        archetypes.push_back({{"key", a.key},
                              {"scenario_id", a.scenario_id},
                              {"tier", a.tier},
                              {"prevalence", a.prevalence},
                              {"title", a.title},
                              {"summary", a.summary},
                              {"policies", a.policies},
                              {"opening", a.opening},
                              {"ideology", a.ideology},
                              {"experience_message", a.experience_message}});
    }
    json upgrades = json::array();
    for (const auto& u : c.upgrades) upgrades.push_back({{"from", u.from}, {"to", u.to}, {"context", u.context}, {"affirm", u.affirm}});
    j = json{{"n_participants", c.n_participants},
             {"expert_fraction", c.expert_fraction},
             {"expert_archetype", c.expert_archetype},
             {"scenarios", c.scenarios},
             {"contexts", c.contexts},
             {"experience", c.experience},
             {"archetypes", archetypes},
             {"upgrades", upgrades},
             {"affirm_probability", c.affirm_probability},
             {"unsure_probability", c.unsure_probability},
             {"select_probability", c.select_probability},
             {"cross_select_probability", c.cross_select_probability},
             {"abandon_probability", c.abandon_probability},
             {"edit_probability", c.edit_probability},
             {"endorse_probability", c.endorse_probability},
             {"wave_size", c.wave_size},
             {"trajectory_stride", c.trajectory_stride},
             {"seed", c.seed}};
}

void from_json(const json& j, SyntheticPopulationConfig& c) {
    c = referral_chain_config();
    c.n_participants = j.value("n_participants", c.n_participants);
    c.expert_fraction = j.value("expert_fraction", c.expert_fraction);
    c.expert_archetype = j.value("expert_archetype", c.expert_archetype);
    if (j.contains("scenarios")) j.at("scenarios").get_to(c.scenarios);
    if (j.contains("contexts")) j.at("contexts").get_to(c.contexts);
    if (j.contains("experience")) j.at("experience").get_to(c.experience);
    if (j.contains("archetypes")) {
        c.archetypes.clear();
        for (const auto& a : j.at("archetypes")) {
            c.archetypes.push_back(make(a.at("key"), a.at("scenario_id"), a.value("tier", 0), a.value("prevalence", 0.0),
                                        a.at("title"), a.at("summary"), a.at("policies"), a.at("opening"),
                                        a.value("ideology", 1), a.value("experience_message", std::string())));
        }
    }
    if (j.contains("upgrades")) {
        c.upgrades.clear();
        for (const auto& u : j.at("upgrades")) {
            c.upgrades.push_back({u.at("from"), u.at("to"), u.at("context"), u.value("affirm", c.affirm_probability)});
        }
    }
    c.affirm_probability = j.value("affirm_probability", c.affirm_probability);
    c.unsure_probability = j.value("unsure_probability", c.unsure_probability);
    c.select_probability = j.value("select_probability", c.select_probability);
    c.cross_select_probability = j.value("cross_select_probability", c.cross_select_probability);
    c.abandon_probability = j.value("abandon_probability", c.abandon_probability);
    c.edit_probability = j.value("edit_probability", c.edit_probability);
    c.endorse_probability = j.value("endorse_probability", c.endorse_probability);
    c.wave_size = j.value("wave_size", c.wave_size);
    c.trajectory_stride = j.value("trajectory_stride", c.trajectory_stride);
    c.seed = j.value("seed", c.seed);
}

// ---- population ---------------------------------------------------------------------------

SimRng::SimRng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

double SimRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::size_t SimRng::below(std::size_t n) {
    if (n == 0) throw InvalidArgument("cannot draw below zero");
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
}

std::vector<SyntheticAgent> synth_population(const SyntheticPopulationConfig& config) {
    validate(config);
    SimRng rng(config.seed);
    const auto n = config.n_participants;
    const auto experts = static_cast<std::size_t>(std::llround(static_cast<double>(n) * config.expert_fraction));

    // largest remainder over the non-expert archetypes, ties to catalog order
    std::vector<const Archetype*> pool;
    for (const auto& a : config.archetypes)
        if (a.key != config.expert_archetype) pool.push_back(&a);
    const auto rest = n - experts;
    std::vector<std::size_t> counts(pool.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        double exact = static_cast<double>(rest) * pool[i]->prevalence;
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < rest && k < remainders.size(); ++k, ++assigned) ++counts[remainders[k].second];

    std::vector<std::string> labels(experts, config.expert_archetype);
    for (std::size_t i = 0; i < pool.size(); ++i) labels.insert(labels.end(), counts[i], pool[i]->key);
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);

    std::vector<SyntheticAgent> agents;
    for (std::size_t i = 0; i < n; ++i) {
        SyntheticAgent a;
        a.id = text::make_id("agent", static_cast<long long>(i) + 1);
        a.archetype = labels[i];
        a.expert = labels[i] == config.expert_archetype;
        a.abandons = rng.uniform() < config.abandon_probability;
        a.edits = rng.uniform() < config.edit_probability;
        a.endorses = rng.uniform() < config.endorse_probability;
        double u = rng.uniform();
        a.care_score = u < 0.45 ? 5 : u < 0.85 ? 4 : u < 0.95 ? 3 : 2;
        a.vote_seed = splitmix64(config.seed * 0x100000001b3ULL + i);
        agents.push_back(std::move(a));
    }
    return agents;
}

// ---- scripted responder -------------------------------------------------------------------

ScriptedBackend::Responder make_scripted_responder(const SyntheticPopulationConfig& config) {
    struct Tables {
        SyntheticPopulationConfig config;
        std::map<std::string, const Archetype*> openings;
        std::map<std::string, std::pair<const Archetype*, std::vector<std::string>>> followups;
        std::map<std::string, std::string> system_prompts;
    };
    auto t = std::make_shared<Tables>();
    t->config = config;
    for (const auto& a : t->config.archetypes) {
        t->openings[a.opening] = &a;
        auto f = a.followups();
        for (std::size_t i = 0; i < f.size(); ++i) {
            std::vector<std::string> carried;
            if (i == 0) carried.push_back(a.policies[0]);
            else carried.assign(a.policies.begin() + 1, a.policies.end());
            t->followups[f[i]] = {&a, carried};
        }
    }
    for (auto name : {"story_shared_good", "story_clarification", "story_policy_mapping", "story_final"}) {
        t->system_prompts[std::string(prompts::get(name))] = name;
    }

    auto answer = [t](const ChatRequest& request) -> std::string {
        const auto& cfg = t->config;
        const std::string& system = request.messages.front().content;
        const std::string& user = request.messages.back().content;
        switch (request.purpose) {
            case PurposeTag::elicitation: {
                if (system.find("principle or slogan") != std::string::npos)
                    return "What is that principle protecting for you, underneath the words?";
                if (system.find("moment from their own life") != std::string::npos)
                    return "Can you tell me about a time you acted on this yourself?";
                if (system.find("someone they look up to") != std::string::npos)
                    return "Is there someone you admire who handles this well? What do they notice?";
                return "What do you find yourself paying attention to when a choice like this comes up?";
            }
            case PurposeTag::message_classification: {
                auto phase = field(user, "Phase: ");
                auto message = section(user, "\nMessage:\n", "");
                json reply = {{"classification", "concrete_attention"}, {"policies", json::array()}, {"confirmed", json::array()}};
                if (phase == "constitutive_check") {
                    if (message != kConfirmAll) miss(request.purpose, message);
                    reply["confirmed"] = bullets(lines_after(user, "Candidate policies:"));
                    return reply.dump();
                }
                if (message == kCloser) return reply.dump();
                if (auto o = t->openings.find(message); o != t->openings.end()) {
                    int ideology = o->second->ideology;
                    reply["classification"] = ideology >= 4 ? "slogan_or_rule" : ideology == 3 ? "stuck_no_story" : "concrete_attention";
                    return reply.dump();
                }
                if (auto f = t->followups.find(message); f != t->followups.end()) {
                    reply["policies"] = f->second.second;
                    return reply.dump();
                }
                miss(request.purpose, message);
            }
            case PurposeTag::card_articulation: {
                auto confirmed = bullets(lines_after(user, "Confirmed policies:"));
                for (const auto& a : cfg.archetypes) {
                    if (a.policies != confirmed) continue;
                    bool edited = user.find("\nEdit request:\n") != std::string::npos;
                    return json{{"title", a.title}, {"summary", edited ? a.edited_summary() : a.summary}, {"policies", a.policies}}
                        .dump();
                }
                miss(request.purpose, "policies " + text::join(confirmed, " | "));
            }
            case PurposeTag::dedup_judge: {
                auto a = parse_card(section(user, "Card A:\n", "Card B:\n"));
                auto b = parse_card(section(user, "Card B:\n", ""));
                bool same = a.title == b.title;
                return json{{"same_attention", same},
                            {"mutual_endorsement", same},
                            {"same_granularity", same},
                            {"differences_are_oversight", same},
                            {"rationale", same ? "Both cards describe " + a.title + " with different wording."
                                               : a.title + " and " + b.title + " attend to different things."}}
                    .dump();
            }
            case PurposeTag::upgrade_clustering: {
                auto context = field(user, "Context: ");
                std::map<std::string, std::string> id_by_key;
                std::string current;
                for (const auto& l : lines_after(user, "Cards:")) {
                    if (l.size() > 2 && l.front() == '[' && l.back() == ']') current = l.substr(1, l.size() - 2);
                    else if (l.rfind("Title: ", 0) == 0)
                        if (const auto* a = cfg.archetype_by_title(l.substr(7))) id_by_key.try_emplace(a->key, current);
                }
                json pairs = json::array();
                for (const auto& u : cfg.upgrades) {
                    if (!text::iequals(u.context, context)) continue;
                    auto f = id_by_key.find(u.from);
                    auto to = id_by_key.find(u.to);
                    if (f != id_by_key.end() && to != id_by_key.end()) pairs.push_back({{"from", f->second}, {"to", to->second}});
                }
                return json{{"pairs", pairs}}.dump();
            }
            case PurposeTag::story_chain_step: {
                auto step = t->system_prompts.find(system);
                auto names = titles(user);
                if (step == t->system_prompts.end() || names.size() < 2) miss(request.purpose, "unknown story step");
                auto context = lower_first(field(user, "Context: "));
                const auto* to = cfg.archetype_by_title(names[1]);
                std::string to_focus = to ? lower_first(to->policies.front()) : names[1];
                if (step->second == "story_shared_good") {
                    return "Both " + names[0] + " and " + names[1] + " want the person to come through this whole, " +
                           context + ".";
                }
                if (step->second == "story_clarification") {
                    return names[1] + " keeps what " + names[0] + " protects but notices more of what is going on, "
                           "so it still holds " + context + ".";
                }
                if (step->second == "story_policy_mapping") {
                    return "Where I used to look only at " + lower_first(field(user, "Policy: ")) +
                           ", I now also ask how it connects to " + to_focus + ".";
                }
                return "I used to rely on " + names[0] + " " + context + ". It worked until a day when it plainly did "
                       "not. Looking back, what I was after all along was better served by paying attention to " +
                       to_focus + ". Now I live by " + names[1] + ", and it feels like I finally see the whole "
                       "situation.";
            }
            case PurposeTag::context_derivation: {
                for (const auto& s : cfg.scenarios) {
                    if (text::trim(user) != s.prompt) continue;
                    auto it = cfg.contexts.find(s.id);
                    if (it == cfg.contexts.end()) miss(request.purpose, user);
                    return json{{"contexts", it->second}}.dump();
                }
                for (const auto& [scenario, list] : cfg.contexts)
                    for (const auto& c : list)
                        if (text::iequals(text::trim(user), c)) return json{{"contexts", {c}}}.dump();
                miss(request.purpose, user);
            }
            case PurposeTag::ideology_judge: {
                auto o = t->openings.find(std::string(text::trim(user)));
                if (o == t->openings.end()) miss(request.purpose, user);
                return std::to_string(o->second->ideology);
            }
            case PurposeTag::experience_judge: {
                for (const auto& a : cfg.archetypes)
                    if (!a.experience_message.empty() && user.find(a.experience_message) != std::string::npos) return "yes";
                return "no";
            }
        }
        miss(request.purpose, "unhandled purpose");
    };
    // Requests whose embedded cards do not parse are misses too, not crashes.
    return [answer](const ChatRequest& request) -> std::string {
        try {
            return answer(request);
        } catch (const InvalidArgument& e) {
            miss(request.purpose, e.what());
        }
    };
}

std::unique_ptr<Gateway> make_simulation_gateway(const SyntheticPopulationConfig& config) {
    GatewayConfig gc;
    gc.max_retries = 0;
    gc.backoff_base = std::chrono::milliseconds(0);
    return std::make_unique<Gateway>(gc, std::make_unique<ScriptedBackend>(make_scripted_responder(config)),
                                     std::make_unique<FeatureHashEmbedder>());
}

Deployment simulation_deployment(const SyntheticPopulationConfig& config) {
    Deployment d;
    d.scenarios = config.scenarios;
    d.experience = config.experience;
    return d;
}

// ---- run ----------------------------------------------------------------------------------

namespace {

bool elicit(Engine& engine, const SyntheticAgent& agent, const Archetype& arch) {
    auto session = engine.start_session(agent.id, arch.scenario_id, {{"cohort", "synthetic"}});
    engine.post_message(session.id, arch.opening);
    auto followups = arch.followups();
    if (agent.abandons) {
        engine.post_message(session.id, followups.front());
        engine.abandon_session(session.id);
        return false;
    }
    for (const auto& f : followups) engine.post_message(session.id, f);
    engine.post_message(session.id, std::string(kCloser));
    engine.post_message(session.id, std::string(kConfirmAll));
    if (agent.edits) engine.post_message(session.id, std::string(kEditRequest));
    engine.confirm_card(session.id);
    engine.endorse(agent.id, agent.endorses);
    engine.survey(agent.id, std::string(kExpressedCareQuestion), agent.care_score);
    return true;
}

double affirm_probability(const SyntheticPopulationConfig& c, const Archetype* from, const Archetype* to) {
    if (!from || !to) return 0.5;
    for (const auto& u : c.upgrades)
        if (u.from == from->key && u.to == to->key) return u.affirm;
    for (const auto& u : c.upgrades)
        if (u.from == to->key && u.to == from->key) return 1.0 - u.affirm;
    return 0.5;
}

void vote(Engine& engine, const SyntheticPopulationConfig& c, const SyntheticAgent& agent, const Archetype& arch) {
    SimRng rng(agent.vote_seed);
    for (const auto& card : engine.next_cards(agent.id)) {
        const auto* other = c.archetype_by_title(card.title);
        double p = 0.0;
        if (other && other->scenario_id == arch.scenario_id) {
            if (other->tier == arch.tier || other->tier == arch.tier + 1) p = c.select_probability;
        } else if (other) {
            p = c.cross_select_probability;
        }
        if (rng.uniform() < p) engine.vote_card(agent.id, card.id, true);
    }
    for (const auto& story : engine.next_stories(agent.id)) {
        auto from = engine.canonical_card(story.from_value);
        auto to = engine.canonical_card(story.to_value);
        double p = affirm_probability(c, from ? c.archetype_by_title(from->title) : nullptr,
                                      to ? c.archetype_by_title(to->title) : nullptr);
        VoteChoice choice = VoteChoice::unsure;
        if (rng.uniform() >= c.unsure_probability) choice = rng.uniform() < p ? VoteChoice::wiser : VoteChoice::not_wiser;
        engine.vote_story(agent.id, story.id, choice);
    }
}

}  // namespace

SimulationResult run_simulation(const SyntheticPopulationConfig& config, Gateway* gateway) {
    SimulationResult r;
    r.agents = synth_population(config);
    std::unique_ptr<Gateway> owned;
    if (!gateway) {
        owned = make_simulation_gateway(config);
        gateway = owned.get();
    }
    r.deployment = simulation_deployment(config);
    LogicalClock clock(0);
    Engine engine(r.deployment, *gateway, clock);

    for (std::size_t start = 0; start < r.agents.size(); start += config.wave_size) {
        auto end = std::min(r.agents.size(), start + config.wave_size);
        std::vector<std::size_t> finished;
        for (auto i = start; i < end; ++i) {
            if (elicit(engine, r.agents[i], *config.find_archetype(r.agents[i].archetype))) {
                finished.push_back(i);
                ++r.completed_sessions;
            } else {
                ++r.abandoned_sessions;
            }
        }
        engine.retry_deferred();
        engine.generate_stories();
        for (auto i : finished) vote(engine, config, r.agents[i], *config.find_archetype(r.agents[i].archetype));
    }
    r.graph = engine.aggregate();
    r.events = engine.events();
    r.event_log = engine.dump_log();

    auto state = engine.snapshot();
    for (const auto& [id, s] : state.sessions) {
        auto exp = config.experience.find(s.scenario_id);
        if (exp == config.experience.end() || s.phase != Phase::done) continue;
        if (detect_experience(*gateway, s, exp->second)) ++r.experience_detected;
    }
    if (const auto* expert = config.find_archetype(config.expert_archetype)) {
        for (const auto& c : state.pool.cards()) {
            if (c.title == expert->title) r.expert_card = c.id;
        }
    }
    if (!r.expert_card.empty()) {
        AggregationConfig agg = r.deployment.aggregation;
        r.trajectory = scaling_trajectory(r.events, r.deployment.scenarios, r.expert_card, agg, config.trajectory_stride);
    }
    r.robustness = robustness_table(*gateway, state);
    r.survey = survey_report(state.surveys);
    r.generalizability = generalizability_report(r.events, r.deployment.scenarios);
    return r;
}

json report_json(const SimulationResult& r) {
    json winners = json::object();
    if (r.graph.aggregation) {
        for (const auto& [ctx, w] : r.graph.aggregation->winners) {
            const auto* c = r.graph.find_value(w);
            winners[ctx] = {{"card", w}, {"title", c ? c->title : std::string()}};
        }
    }
    return json{{"participants", r.agents.size()},
                {"completed_sessions", r.completed_sessions},
                {"abandoned_sessions", r.abandoned_sessions},
                {"experience_detected", r.experience_detected},
                {"events", r.events.size()},
                {"values", r.graph.values.size()},
                {"edges", r.graph.edges.size()},
                {"expert_card", r.expert_card},
                {"trajectory", r.trajectory ? to_json(*r.trajectory) : json(nullptr)},
                {"winners", winners},
                {"robustness", to_json(r.robustness)},
                {"survey", to_json(r.survey)},
                {"generalizability", to_json(r.generalizability)}};
}

void write_run_directory(const SimulationResult& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto write = [&](const char* name, const std::string& body) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw Error("cannot write " + (dir / name).string());
        out << body;
    };
    write("events.jsonl", r.event_log);
    write("graph.json", export_graph_text(r.graph));
    write("alignment_target.jsonl", to_jsonl(export_alignment_target(r.graph, false)));
    write("trajectory.csv", r.trajectory ? trajectory_csv(*r.trajectory) : std::string());
    write("robustness.csv", robustness_csv(r.robustness));
    write("survey.csv", survey_csv(r.survey));
    write("report.json", report_json(r).dump(2) + "\n");
}

}  // namespace moralgraph
