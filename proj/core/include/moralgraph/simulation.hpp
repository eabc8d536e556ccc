#pragma once

// Seeded synthetic populations that drive the whole pipeline offline.
//
// Agents chat with the real elicitation state machine using scripted messages taken from their
// latent archetype. A scripted responder stands in for the language model: it recognises those
// messages and answers every purpose tag from the same archetype catalog.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "moralgraph/analytics.hpp"
#include "moralgraph/engine.hpp"
#include "moralgraph/gateway.hpp"

namespace moralgraph {

// Scripted participant lines the responder recognises besides each archetype's own messages.
inline constexpr std::string_view kCloser = "I think that covers what matters to me here.";
inline constexpr std::string_view kConfirmAll = "Yes, every one of those matters to me in itself.";
inline constexpr std::string_view kEditRequest = "Could the summary say a little more about how this plays out?";

struct Archetype {
    std::string key;
    std::string scenario_id;
    /// 0 = common, 1 = more considered, 2 = expert.
    int tier = 0;
    /// Share of the non-expert population. The expert archetype's share comes from expert_fraction.
    double prevalence = 0.0;
    std::string title;
    std::string summary;
    std::vector<std::string> policies;
    /// First chat message and how ideological the judge finds it (1..5).
    std::string opening;
    int ideology = 1;
    /// When set, replaces the first follow-up and carries the lived experience the expertise judge
    /// looks for.
    std::string experience_message;

    /// Summary produced after the participant asks for an edit.
    std::string edited_summary() const;
    /// Follow-up messages; together they mention every policy.
    std::vector<std::string> followups() const;
};

/// Latent "to is wiser than from" relation inside one context.
struct LatentUpgrade {
    std::string from;
    std::string to;
    std::string context;
    /// Probability that a voter calls `to` wiser.
    double affirm = 0.85;
};

struct SyntheticPopulationConfig {
    std::size_t n_participants = 500;
    double expert_fraction = 0.12;
    std::string expert_archetype = "informed_autonomy";
    std::vector<Scenario> scenarios;
    /// Scenario id -> contexts the context judge derives for that scenario.
    std::map<std::string, std::vector<std::string>> contexts;
    std::map<std::string, std::string> experience;
    std::vector<Archetype> archetypes;
    std::vector<LatentUpgrade> upgrades;
    /// Used for upgrades that do not set their own probability.
    double affirm_probability = 0.85;
    double unsure_probability = 0.05;
    /// Chance of selecting a shown card of the same scenario and of the agent's tier or the next.
    double select_probability = 0.8;
    /// Chance of selecting a shown card from another scenario.
    double cross_select_probability = 0.3;
    double abandon_probability = 0.02;
    double edit_probability = 0.3;
    double endorse_probability = 0.95;
    std::size_t wave_size = 50;
    std::size_t trajectory_stride = 100;
    std::uint64_t seed = 1;

    const Archetype* find_archetype(const std::string& key) const;
    const Archetype* archetype_by_title(const std::string& title) const;
};

/// Throws InvalidArgument listing every problem.
void validate(const SyntheticPopulationConfig& config);

/// Three scenarios with an expert referral chain on the first: common cards are upgraded to two
/// considered cards, which are both upgraded to the expert card.
SyntheticPopulationConfig referral_chain_config(std::uint64_t seed = 1, std::size_t n_participants = 500);

void to_json(nlohmann::json& j, const SyntheticPopulationConfig& c);
/// Missing keys take their values from referral_chain_config().
void from_json(const nlohmann::json& j, SyntheticPopulationConfig& c);

struct SyntheticAgent {
    std::string id;
    std::string archetype;
    bool expert = false;
    bool abandons = false;
    bool edits = false;
    bool endorses = true;
    /// Answer to the "expressed what you care about" survey question.
    int care_score = 5;
    std::uint64_t vote_seed = 0;

    bool operator==(const SyntheticAgent&) const = default;
};

/// Deterministic for a seed. Archetype counts follow the prevalences exactly (largest remainder);
/// round(n * expert_fraction) agents carry the expert archetype.
std::vector<SyntheticAgent> synth_population(const SyntheticPopulationConfig& config);

/// Splitmix-seeded 64-bit Mersenne Twister with a platform independent mapping to [0, 1).
class SimRng {
public:
    explicit SimRng(std::uint64_t seed);
    double uniform();
    std::size_t below(std::size_t n);

private:
    std::mt19937_64 engine_;
};

/// Language-model stand-in that answers every purpose tag from the catalog. Unknown requests
/// raise GatewayError(fixture_miss).
ScriptedBackend::Responder make_scripted_responder(const SyntheticPopulationConfig& config);

/// Gateway over the scripted responder and the feature-hash embedder.
std::unique_ptr<Gateway> make_simulation_gateway(const SyntheticPopulationConfig& config);

Deployment simulation_deployment(const SyntheticPopulationConfig& config);

struct SimulationResult {
    Deployment deployment;
    std::vector<SyntheticAgent> agents;
    std::vector<Event> events;
    std::string event_log;
    MoralGraph graph;
    std::string expert_card;
    std::optional<RankTrajectory> trajectory;
    std::size_t completed_sessions = 0;
    std::size_t abandoned_sessions = 0;
    std::size_t experience_detected = 0;
    std::vector<RobustnessRow> robustness;
    std::vector<SurveyQuestionReport> survey;
    GeneralizabilityReport generalizability;
};

/// Runs elicitation, deduplication, story generation, voting and aggregation in waves of
/// `wave_size` agents. Uses the given gateway, or the scripted one when null.
SimulationResult run_simulation(const SyntheticPopulationConfig& config, Gateway* gateway = nullptr);

/// Writes events.jsonl, graph.json, alignment_target.jsonl, trajectory.csv, robustness.csv and
/// report.json into `dir`.
void write_run_directory(const SimulationResult& result, const std::filesystem::path& dir);

nlohmann::json report_json(const SimulationResult& result);

}  // namespace moralgraph
