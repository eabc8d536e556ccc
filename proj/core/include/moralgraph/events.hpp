#pragma once

// Append-only event log. Every derived structure is a fold over these events.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "moralgraph/errors.hpp"

namespace moralgraph {

enum class EventKind {
    session_turn,
    card_created,
    card_canonicalized,
    story_created,
    impression,
    vote,
    survey_response,
    aggregation_run,
};

std::string_view to_string(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view s);

struct Event {
    std::int64_t offset = 0;
    EventKind kind = EventKind::session_turn;
    std::int64_t timestamp = 0;
    nlohmann::json payload;

    bool operator==(const Event&) const = default;
};

/// Shape check for a payload; returns problems as "/path: message".
std::vector<std::string> validate_payload(EventKind kind, const nlohmann::json& payload);

/// One event per line: {"offset", "kind", "timestamp", "payload"}.
std::string serialize_event(const Event& event);
Event parse_event(std::string_view line);

class EventLog {
public:
    /// In-memory log (nothing touches disk).
    EventLog() = default;
    /// Opens or creates `path`. A trailing partial line left by a crash is cut off.
    /// Throws Error when offsets in the file are not dense from zero.
    explicit EventLog(std::filesystem::path path);
    ~EventLog();
    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;
    EventLog(EventLog&& other) noexcept;
    EventLog& operator=(EventLog&& other) noexcept;

    /// Validates, writes the line with a single write, fsyncs, then returns the new offset.
    /// Throws SchemaError for a malformed payload (log unchanged) and Error on storage failure.
    std::int64_t append(EventKind kind, nlohmann::json payload, std::int64_t timestamp);

    const std::vector<Event>& events() const { return events_; }
    std::int64_t next_offset() const { return static_cast<std::int64_t>(events_.size()); }
    bool persistent() const { return fd_ >= 0; }
    const std::filesystem::path& path() const { return path_; }

    /// Whole log as text, identical to the file contents of a persistent log.
    std::string dump() const;

private:
    std::filesystem::path path_;
    int fd_ = -1;
    std::vector<Event> events_;
};

NLOHMANN_JSON_SERIALIZE_ENUM(EventKind, {{EventKind::session_turn, "session_turn"},
                                         {EventKind::card_created, "card_created"},
                                         {EventKind::card_canonicalized, "card_canonicalized"},
                                         {EventKind::story_created, "story_created"},
                                         {EventKind::impression, "impression"},
                                         {EventKind::vote, "vote"},
                                         {EventKind::survey_response, "survey_response"},
                                         {EventKind::aggregation_run, "aggregation_run"}})

}  // namespace moralgraph
