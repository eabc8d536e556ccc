#pragma once

// Single choke-point for language-model and embedding calls.
//
// A Gateway wraps a ChatBackend (live HTTP, fixture replay, or a scripted responder) and an
// Embedder. Every request carries a PurposeTag so fixtures, audit logs and prompts line up per
// call site. No other module performs network I/O.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "moralgraph/errors.hpp"

namespace moralgraph {

enum class PurposeTag {
    elicitation,
    message_classification,
    card_articulation,
    dedup_judge,
    upgrade_clustering,
    story_chain_step,
    context_derivation,
    ideology_judge,
    experience_judge,
};

std::string_view to_string(PurposeTag tag);
std::optional<PurposeTag> parse_purpose_tag(std::string_view s);

enum class Role { system, user, assistant };

std::string_view to_string(Role role);

struct ChatMessage {
    Role role = Role::user;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
    PurposeTag purpose = PurposeTag::elicitation;
    /// Token-budget key (usually the elicitation session id); empty means unbudgeted.
    std::string budget_key;
};

/// Hex SHA-256 over the ordered (role, content) pairs. Stable across platforms.
std::string request_digest(const ChatRequest& request);

/// Rough token count used for budgeting when the backend does not report usage.
std::int64_t estimate_tokens(std::string_view text);

class GatewayError : public Error {
public:
    enum class Kind { fixture_miss, upstream_unavailable, budget_exceeded, bad_response, invalid_request };

    GatewayError(Kind kind, std::string message) : Error(std::move(message)), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Thrown by backends for failures worth retrying (timeouts, 5xx, 429).
class TransientBackendError : public Error {
public:
    using Error::Error;
};

struct BackendReply {
    std::string text;
    std::optional<std::int64_t> tokens_used;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual BackendReply complete(const ChatRequest& request, const std::string& digest) = 0;
    virtual std::string_view name() const = 0;
};

struct FixtureRecord {
    PurposeTag purpose = PurposeTag::elicitation;
    std::string request_digest;
    std::string response;
};

/// Directory of JSON records {purpose_tag, request_digest, response}; read-only after load.
class FixtureStore {
public:
    FixtureStore() = default;
    static FixtureStore load(const std::filesystem::path& dir);

    void add(FixtureRecord record);
    const std::string* find(PurposeTag purpose, const std::string& digest) const;
    std::size_t size() const { return records_.size(); }

    /// Writes one record file `<purpose>-<digest>.json`; the request messages are kept for readers.
    static void write_record(const std::filesystem::path& dir, const ChatRequest& request,
                             const std::string& digest, const std::string& response);

private:
    std::map<std::pair<PurposeTag, std::string>, std::string> records_;
};

class ReplayBackend final : public ChatBackend {
public:
    explicit ReplayBackend(FixtureStore store) : store_(std::move(store)) {}
    BackendReply complete(const ChatRequest& request, const std::string& digest) override;
    std::string_view name() const override { return "replay"; }

private:
    FixtureStore store_;
};

/// Programmatic fixture: a deterministic function from request to reply. Must throw
/// GatewayError(fixture_miss) for requests it does not recognise.
class ScriptedBackend final : public ChatBackend {
public:
    using Responder = std::function<std::string(const ChatRequest&)>;

    explicit ScriptedBackend(Responder responder) : responder_(std::move(responder)) {}
    BackendReply complete(const ChatRequest& request, const std::string& digest) override;
    std::string_view name() const override { return "scripted"; }

private:
    Responder responder_;
};

struct HttpEndpoint {
    /// Full URL, e.g. "https://api.example.com/v1/chat/completions".
    std::string url;
    std::string model;
    /// Bearer token (usually read from an environment variable by the caller).
    std::string auth_token;
    std::chrono::milliseconds timeout{60'000};
};

/// Chat-completions style JSON over HTTP.
class HttpChatBackend final : public ChatBackend {
public:
    explicit HttpChatBackend(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
    BackendReply complete(const ChatRequest& request, const std::string& digest) override;
    std::string_view name() const override { return "live"; }

private:
    HttpEndpoint endpoint_;
};

// ---- embeddings ---------------------------------------------------------------------------

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dimension() const { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

double cosine(const EmbeddingVector& a, const EmbeddingVector& b);
double l2_norm(const EmbeddingVector& v);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual EmbeddingVector embed(std::string_view text) = 0;
    virtual std::size_t dimension() const = 0;
};

/// Seeded signed feature hashing over lower-cased word stems. No network, unit L2 norm.
class FeatureHashEmbedder final : public Embedder {
public:
    explicit FeatureHashEmbedder(std::uint64_t seed = 0x6d67u, std::size_t dimension = 256);
    EmbeddingVector embed(std::string_view text) override;
    std::size_t dimension() const override { return dimension_; }

private:
    std::uint64_t seed_;
    std::size_t dimension_;
};

/// OpenAI-style embeddings endpoint ({model, input} -> data[0].embedding).
class HttpEmbedder final : public Embedder {
public:
    HttpEmbedder(HttpEndpoint endpoint, std::size_t dimension)
        : endpoint_(std::move(endpoint)), dimension_(dimension) {}
    EmbeddingVector embed(std::string_view text) override;
    std::size_t dimension() const override { return dimension_; }

private:
    HttpEndpoint endpoint_;
    std::size_t dimension_;
};

// ---- gateway ------------------------------------------------------------------------------

struct GatewayConfig {
    int max_retries = 3;
    std::chrono::milliseconds backoff_base{200};
    std::int64_t session_token_budget = 35'000;
    int max_parallel = 4;
    /// When non-empty, every successful completion is written here as a fixture record.
    std::filesystem::path record_dir;
    /// When non-empty, one JSON line per call is appended here.
    std::filesystem::path audit_log;
};

class Gateway {
public:
    Gateway(GatewayConfig config, std::unique_ptr<ChatBackend> chat, std::unique_ptr<Embedder> embedder);
    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    /// Throws GatewayError: fixture_miss, upstream_unavailable (after retries), budget_exceeded,
    /// invalid_request (empty messages or first message not a system message).
    std::string complete_chat(const ChatRequest& request);

    /// Throws InvalidArgument for empty text.
    EmbeddingVector embed(std::string_view text);

    std::int64_t tokens_used(const std::string& budget_key) const;
    std::int64_t calls_made() const;
    const GatewayConfig& config() const { return config_; }
    std::string_view backend_name() const { return chat_->name(); }

    /// Convenience constructors.
    static std::unique_ptr<Gateway> replay(const std::filesystem::path& fixture_dir, GatewayConfig config = {});
    static std::unique_ptr<Gateway> scripted(ScriptedBackend::Responder responder, GatewayConfig config = {});

private:
    void charge(const std::string& key, std::int64_t tokens);
    void audit(const ChatRequest& request, const std::string& digest, const std::string& response);

    GatewayConfig config_;
    std::unique_ptr<ChatBackend> chat_;
    std::unique_ptr<Embedder> embedder_;
    std::counting_semaphore<64> inflight_;
    mutable std::mutex mutex_;
    std::map<std::string, std::int64_t> usage_;
    std::int64_t calls_ = 0;
};

/// Convenience: system + user message request.
ChatRequest make_request(PurposeTag purpose, std::string system, std::string user, std::string budget_key = {});

}  // namespace moralgraph
