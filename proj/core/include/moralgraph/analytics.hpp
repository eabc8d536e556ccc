#pragma once

// Evaluation reports computed from the event log: ideology ratings, expertise detection,
// rank trajectories, generalizability and survey agreement.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "moralgraph/aggregation.hpp"
#include "moralgraph/elicitation.hpp"
#include "moralgraph/events.hpp"
#include "moralgraph/gateway.hpp"
#include "moralgraph/state.hpp"

namespace moralgraph {

enum class IdeologyBucket { not_ideological, slightly, very };

std::string_view to_string(IdeologyBucket bucket);

/// 1-2 not, 3 slightly, 4-5 very. Throws InvalidArgument outside 1..5.
IdeologyBucket ideology_bucket(int score);

struct IdeologyRating {
    int score = 1;
    IdeologyBucket bucket = IdeologyBucket::not_ideological;

    bool operator==(const IdeologyRating&) const = default;
};

/// Asks the ideology judge about a participant's opening message. A reply that is not a single
/// number from 1 to 5 is asked once more, then reported as GatewayError(bad_response).
IdeologyRating rate_ideology(Gateway& gateway, std::string_view message);

/// Whether the transcript mentions the given lived experience. The judge must answer yes or no;
/// anything else is GatewayError(bad_response).
bool detect_experience(Gateway& gateway, const ElicitationSession& session, std::string_view experience);

struct TrajectoryStep {
    std::int64_t events_processed = 0;
    std::int64_t votes_processed = 0;
    int pagerank_rank = 0;
    int direct_vote_rank = 0;

    bool operator==(const TrajectoryStep&) const = default;
};

struct RankTrajectory {
    std::string target;
    std::vector<TrajectoryStep> steps;

    bool operator==(const RankTrajectory&) const = default;
};

/// Ranks of `target` among the canonical cards of its scenario after every `stride` vote events
/// and at the end of the log. The PageRank rank comes from a full aggregation of the prefix; the
/// direct-vote rank orders cards by how many participants selected them. Steps start once the
/// target exists. Throws NotFound when the log never creates the target.
RankTrajectory scaling_trajectory(const std::vector<Event>& events, const std::vector<Scenario>& scenarios,
                                  const std::string& target, const AggregationConfig& config = {},
                                  std::size_t stride = 100);

struct GeneralizabilityReport {
    std::int64_t same_impressions = 0;
    std::int64_t same_votes = 0;
    std::int64_t cross_impressions = 0;
    std::int64_t cross_votes = 0;
    /// Absent when there were no impressions in that group.
    std::optional<double> same_scenario_rate;
    std::optional<double> cross_scenario_rate;
};

/// Card selections per card impression, split by whether the card came from the scenario the
/// voter chose.
GeneralizabilityReport generalizability_report(const std::vector<Event>& events,
                                               const std::vector<Scenario>& scenarios);

struct SurveyQuestionReport {
    std::string question;
    std::int64_t responses = 0;
    std::int64_t agree = 0;
    double agree_rate = 0.0;
};

/// Agreement (answer 4 or 5) per question, questions in lexical order. Throws InvalidArgument
/// for answers outside 1..5.
std::vector<SurveyQuestionReport> survey_report(const std::vector<SurveyResponse>& responses);

struct RobustnessRow {
    IdeologyBucket bucket = IdeologyBucket::not_ideological;
    std::int64_t participants = 0;
    std::int64_t responses = 0;
    std::optional<double> mean_score;
};

inline constexpr std::string_view kExpressedCareQuestion = "expressed_care";

/// Participants grouped by the ideology of their opening message, with the mean answer to
/// `question` per group. Always three rows, in bucket order.
std::vector<RobustnessRow> robustness_table(Gateway& gateway, const State& state,
                                            std::string_view question = kExpressedCareQuestion);

nlohmann::json to_json(const RankTrajectory& t);
nlohmann::json to_json(const GeneralizabilityReport& r);
nlohmann::json to_json(const std::vector<SurveyQuestionReport>& rows);
nlohmann::json to_json(const std::vector<RobustnessRow>& rows);

std::string trajectory_csv(const RankTrajectory& t);
std::string survey_csv(const std::vector<SurveyQuestionReport>& rows);
std::string robustness_csv(const std::vector<RobustnessRow>& rows);

}  // namespace moralgraph
