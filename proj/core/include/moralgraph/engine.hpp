#pragma once

// Write path of the platform: every mutation validates against the current state, appends an
// event, then folds it in. A single mutex makes the engine the log's only writer.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "moralgraph/aggregation.hpp"
#include "moralgraph/dedup.hpp"
#include "moralgraph/elicitation.hpp"
#include "moralgraph/events.hpp"
#include "moralgraph/gateway.hpp"
#include "moralgraph/state.hpp"
#include "moralgraph/stories.hpp"

namespace moralgraph {

class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now() = 0;
};

/// Counts up by one per reading; keeps runs reproducible.
class LogicalClock final : public Clock {
public:
    explicit LogicalClock(std::int64_t start = 0) : next_(start) {}
    std::int64_t now() override { return next_++; }

private:
    std::atomic<std::int64_t> next_;
};

/// Milliseconds since the Unix epoch.
class SystemClock final : public Clock {
public:
    std::int64_t now() override;
};

struct Deployment {
    std::vector<Scenario> scenarios;
    AggregationConfig aggregation;
    DedupConfig dedup;
    ElicitationConfig elicitation;
    SlateConfig slate;
    std::size_t stories_per_participant = 3;
    double context_match_threshold = kDefaultContextMatchThreshold;
    /// Scenario id -> description of the lived experience the expertise judge looks for.
    std::map<std::string, std::string> experience;
    std::size_t snapshot_every = 1000;
};

/// Reads {"scenarios": [...], "acceptance": {...}, "pagerank": {...}, ...}; unknown keys ignored.
Deployment load_deployment(const nlohmann::json& doc);
Deployment load_deployment_file(const std::filesystem::path& path);
nlohmann::json to_json(const Deployment& d);

struct ConfirmResult {
    ValuesCard card;
    CanonicalizeResult canonical;
};

class Engine {
public:
    /// In-memory engine.
    Engine(Deployment deployment, Gateway& gateway, Clock& clock);
    /// Persistent engine over `storage_dir` (events.jsonl plus snapshots). Existing events are
    /// replayed, starting from the newest usable snapshot.
    Engine(Deployment deployment, Gateway& gateway, Clock& clock, const std::filesystem::path& storage_dir);

    // participants and elicitation
    ElicitationSession start_session(const std::string& participant_id, const std::string& scenario_id,
                                     const std::map<std::string, std::string>& demographics = {});
    /// Returns the assistant reply. Throws PreconditionFailed when another message for the same
    /// session is still in flight.
    std::string post_message(const std::string& session_id, const std::string& text);
    /// Confirms and finalizes the draft, records the card and deduplicates it.
    ConfirmResult confirm_card(const std::string& session_id);
    void abandon_session(const std::string& session_id);
    /// Participant's answer to whether the canonical card represents them.
    void endorse(const std::string& participant_id, bool approved);
    /// Retries deduplication for cards whose judgment was deferred. Returns how many resolved.
    std::size_t retry_deferred();

    // stories and votes
    /// One generation cycle over every scenario. Returns the number of stories created.
    std::size_t generate_stories();
    std::vector<TransitionStory> next_stories(const std::string& participant_id);
    Tallies vote_story(const std::string& participant_id, const std::string& story_id, VoteChoice choice);
    std::vector<ValuesCard> next_cards(const std::string& participant_id);
    void vote_card(const std::string& participant_id, const std::string& card_id, bool selected);
    void survey(const std::string& participant_id, const std::string& question, int value);

    // graph
    /// Aggregates the current graph and records the run.
    MoralGraph aggregate();
    /// Current graph aggregated in memory, nothing recorded.
    MoralGraph graph() const;
    /// Sessions, custom cards, edges, stories and vote tallies behind a canonical card.
    nlohmann::json provenance(const std::string& card_id) const;
    Retrieval retrieve(const std::string& conversation_state);
    std::optional<ValuesCard> canonical_card(const std::string& id) const;
    /// Throws NotFound.
    ElicitationSession session(const std::string& id) const;

    /// Copy of the state under the lock.
    State snapshot() const;
    const std::vector<Event>& events() const { return log_.events(); }
    std::string dump_log() const;
    const Deployment& deployment() const { return deployment_; }
    Gateway& gateway() { return gateway_; }

private:
    std::int64_t append(EventKind kind, nlohmann::json payload);
    void maybe_snapshot();
    void load_snapshot();
    std::string allocate_id(std::string_view prefix, std::size_t n) const;
    std::optional<EmbeddingVector> participant_embedding(const std::string& participant_id) const;
    CanonicalizeResult canonicalize_locked(const ValuesCard& card);
    void session_event(const ElicitationSession& s);

    Deployment deployment_;
    Gateway& gateway_;
    Clock& clock_;
    Elicitor elicitor_;
    Deduplicator dedup_;
    StoryEngine stories_;
    std::optional<std::filesystem::path> storage_dir_;
    EventLog log_;
    State state_;
    mutable std::mutex mutex_;
    std::mutex busy_mutex_;
    std::set<std::string> busy_sessions_;
};

}  // namespace moralgraph
