#include "moralgraph/events.hpp"

#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <sstream>
#include <sys/stat.h>
#include <unistd.h>

namespace moralgraph {

using nlohmann::json;

namespace {

constexpr std::pair<EventKind, std::string_view> kKindNames[] = {
    {EventKind::session_turn, "session_turn"},
    {EventKind::card_created, "card_created"},
    {EventKind::card_canonicalized, "card_canonicalized"},
    {EventKind::story_created, "story_created"},
    {EventKind::impression, "impression"},
    {EventKind::vote, "vote"},
    {EventKind::survey_response, "survey_response"},
    {EventKind::aggregation_run, "aggregation_run"},
};

enum class Type { string, object, array, boolean, integer };

const char* type_name(Type t) {
    switch (t) {
        case Type::string: return "string";
        case Type::object: return "object";
        case Type::array: return "array";
        case Type::boolean: return "boolean";
        case Type::integer: return "integer";
    }
    return "?";
}

bool has_type(const json& v, Type t) {
    switch (t) {
        case Type::string: return v.is_string();
        case Type::object: return v.is_object();
        case Type::array: return v.is_array();
        case Type::boolean: return v.is_boolean();
        case Type::integer: return v.is_number_integer();
    }
    return false;
}

/// Appends a problem and returns false when obj[key] is missing or mistyped.
bool require(const json& obj, const std::string& path, const char* key, Type t, std::vector<std::string>& problems) {
    if (!obj.is_object() || !obj.contains(key)) {
        problems.push_back(path + "/" + key + ": missing");
        return false;
    }
    if (!has_type(obj.at(key), t)) {
        problems.push_back(path + "/" + key + ": expected " + type_name(t));
        return false;
    }
    return true;
}

void require_all(const json& obj, const std::string& path, std::initializer_list<std::pair<const char*, Type>> fields,
                 std::vector<std::string>& problems) {
    for (const auto& [key, type] : fields) require(obj, path, key, type, problems);
}

void check_error(ssize_t rc, const std::filesystem::path& path, const char* what) {
    if (rc < 0) throw Error(std::string(what) + " " + path.string() + ": " + std::strerror(errno));
}

}  // namespace

std::string_view to_string(EventKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "unknown";
}

std::optional<EventKind> parse_event_kind(std::string_view s) {
    for (const auto& [k, name] : kKindNames)
        if (name == s) return k;
    return std::nullopt;
}

std::vector<std::string> validate_payload(EventKind kind, const json& p) {
    std::vector<std::string> problems;
    if (!p.is_object()) return {"/payload: expected object"};
    const std::string root = "/payload";
    switch (kind) {
        case EventKind::session_turn:
            if (require(p, root, "participant", Type::object, problems)) {
                require_all(p["participant"], root + "/participant",
                            {{"id", Type::string}, {"chosen_scenario", Type::string}}, problems);
            }
            if (require(p, root, "session", Type::object, problems)) {
                require_all(p["session"], root + "/session",
                            {{"id", Type::string},
                             {"participant_id", Type::string},
                             {"scenario_id", Type::string},
                             {"transcript", Type::array},
                             {"phase", Type::string}},
                            problems);
            }
            break;
        case EventKind::card_created:
            if (require(p, root, "card", Type::object, problems)) {
                require_all(p["card"], root + "/card",
                            {{"id", Type::string},
                             {"title", Type::string},
                             {"summary", Type::string},
                             {"policies", Type::array},
                             {"origin", Type::object}},
                            problems);
            }
            break;
        case EventKind::card_canonicalized:
            require(p, root, "custom_card_id", Type::string, problems);
            if (require(p, root, "result", Type::object, problems)) {
                require_all(p["result"], root + "/result", {{"outcome", Type::string}, {"canonical_id", Type::string}},
                            problems);
            }
            break;
        case EventKind::story_created:
            require(p, root, "edge_id", Type::string, problems);
            if (require(p, root, "story", Type::object, problems)) {
                require_all(p["story"], root + "/story",
                            {{"id", Type::string},
                             {"from_value", Type::string},
                             {"to_value", Type::string},
                             {"context", Type::string},
                             {"policy_mappings", Type::array}},
                            problems);
            }
            if (require(p, root, "context", Type::object, problems)) {
                require_all(p["context"], root + "/context",
                            {{"id", Type::string}, {"text", Type::string}, {"source_scenario", Type::string}}, problems);
            }
            break;
        case EventKind::impression:
        case EventKind::vote:
            require_all(p, root, {{"participant", Type::string}, {"target_id", Type::string}}, problems);
            if (require(p, root, "target_kind", Type::string, problems)) {
                auto k = p["target_kind"].get<std::string>();
                if (k != "story" && k != "card") {
                    problems.push_back(root + "/target_kind: must be story or card");
                } else if (kind == EventKind::vote && k == "story") {
                    if (require(p, root, "choice", Type::string, problems)) {
                        auto c = p["choice"].get<std::string>();
                        if (c != "wiser" && c != "not_wiser" && c != "unsure") {
                            problems.push_back(root + "/choice: must be wiser, not_wiser or unsure");
                        }
                    }
                } else if (kind == EventKind::vote) {
                    require(p, root, "selected", Type::boolean, problems);
                }
            }
            break;
        case EventKind::survey_response:
            require_all(p, root, {{"participant", Type::string}, {"question", Type::string}}, problems);
            if (require(p, root, "value", Type::integer, problems)) {
                auto v = p["value"].get<long long>();
                if (v < 1 || v > 5) problems.push_back(root + "/value: must be between 1 and 5");
            }
            break;
        case EventKind::aggregation_run:
            require(p, root, "aggregation", Type::object, problems);
            break;
    }
    return problems;
}

std::string serialize_event(const Event& e) {
    json j = {{"offset", e.offset}, {"kind", to_string(e.kind)}, {"timestamp", e.timestamp}, {"payload", e.payload}};
    return j.dump();
}

Event parse_event(std::string_view line) {
    auto j = json::parse(line);
    Event e;
    e.offset = j.at("offset").get<std::int64_t>();
    auto kind = parse_event_kind(j.at("kind").get<std::string>());
    if (!kind) throw Error("unknown event kind in log: " + j.at("kind").get<std::string>());
    e.kind = *kind;
    e.timestamp = j.at("timestamp").get<std::int64_t>();
    e.payload = j.at("payload");
    return e;
}

// ---- log ----------------------------------------------------------------------------------

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::string contents;
    if (std::filesystem::exists(path_)) {
        std::ifstream in(path_, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        contents = ss.str();
    }
    std::size_t good_bytes = 0;
    std::size_t pos = 0;
    while (pos < contents.size()) {
        auto nl = contents.find('\n', pos);
        if (nl == std::string::npos) break;  // partial trailing line
        std::string_view line(contents.data() + pos, nl - pos);
        Event e;
        try {
            e = parse_event(line);
        } catch (const std::exception&) {
            if (contents.find('\n', nl + 1) != std::string::npos) {
                throw Error("corrupt event at byte " + std::to_string(pos) + " of " + path_.string());
            }
            break;  // torn final record
        }
        if (e.offset != static_cast<std::int64_t>(events_.size())) {
            throw Error("event log " + path_.string() + " has offset " + std::to_string(e.offset) + " where " +
                        std::to_string(events_.size()) + " was expected");
        }
        events_.push_back(std::move(e));
        pos = nl + 1;
        good_bytes = pos;
    }
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    check_error(fd_, path_, "cannot open");
    if (good_bytes != contents.size()) check_error(::ftruncate(fd_, static_cast<off_t>(good_bytes)), path_, "cannot truncate");
}

EventLog::~EventLog() {
    if (fd_ >= 0) ::close(fd_);
}

EventLog::EventLog(EventLog&& other) noexcept
    : path_(std::move(other.path_)), fd_(other.fd_), events_(std::move(other.events_)) {
    other.fd_ = -1;
}

EventLog& EventLog::operator=(EventLog&& other) noexcept {
    if (this != &other) {
        if (fd_ >= 0) ::close(fd_);
        path_ = std::move(other.path_);
        fd_ = other.fd_;
        events_ = std::move(other.events_);
        other.fd_ = -1;
    }
    return *this;
}

std::int64_t EventLog::append(EventKind kind, json payload, std::int64_t timestamp) {
    if (auto problems = validate_payload(kind, payload); !problems.empty()) throw SchemaError(std::move(problems));
    Event e{next_offset(), kind, timestamp, std::move(payload)};
    if (fd_ >= 0) {
        std::string line = serialize_event(e) + "\n";
        std::size_t written = 0;
        while (written < line.size()) {
            auto rc = ::write(fd_, line.data() + written, line.size() - written);
            if (rc < 0 && errno == EINTR) continue;
            check_error(rc, path_, "cannot append to");
            written += static_cast<std::size_t>(rc);
        }
        check_error(::fsync(fd_), path_, "cannot sync");
    }
    events_.push_back(std::move(e));
    return events_.back().offset;
}

std::string EventLog::dump() const {
    std::string out;
    for (const auto& e : events_) {
        out += serialize_event(e);
        out += '\n';
    }
    return out;
}

}  // namespace moralgraph
