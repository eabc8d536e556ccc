#include "moralgraph/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "moralgraph/text.hpp"

namespace moralgraph {

using nlohmann::json;

namespace {

constexpr std::pair<PurposeTag, std::string_view> kPurposeNames[] = {
    {PurposeTag::elicitation, "elicitation"},
    {PurposeTag::message_classification, "message-classification"},
    {PurposeTag::card_articulation, "card-articulation"},
    {PurposeTag::dedup_judge, "dedup-judge"},
    {PurposeTag::upgrade_clustering, "upgrade-clustering"},
    {PurposeTag::story_chain_step, "story-chain-step"},
    {PurposeTag::context_derivation, "context-derivation"},
    {PurposeTag::ideology_judge, "ideology-judge"},
    {PurposeTag::experience_judge, "experience-judge"},
};

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw InvalidArgument("endpoint URL needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

httplib::Result post_json(const HttpEndpoint& ep, const json& body) {
    auto [origin, path] = parse_url(ep.url);
    httplib::Client client(origin);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(ep.timeout).count();
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(ep.timeout).count() % 1'000'000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!ep.auth_token.empty()) headers.emplace("Authorization", "Bearer " + ep.auth_token);
    return client.Post(path, headers, body.dump(), "application/json");
}

void check_http(const httplib::Result& res, const std::string& url) {
    if (!res) throw TransientBackendError("request to " + url + " failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500) {
        throw TransientBackendError("upstream " + url + " returned HTTP " + std::to_string(res->status));
    }
    if (res->status >= 400) {
        throw GatewayError(GatewayError::Kind::bad_response,
                           "upstream " + url + " rejected request with HTTP " + std::to_string(res->status));
    }
}

const std::set<std::string, std::less<>>& stopwords() {
    static const std::set<std::string, std::less<>> words = {
        "a",    "an",   "and",  "are",  "as",   "at",   "be",   "by",   "for",  "from", "how",  "i",
        "in",   "is",   "it",   "its",  "of",   "on",   "or",   "that", "the",  "their", "them", "they",
        "this", "to",   "was",  "were", "what", "when", "which", "who",  "with", "can",  "do",   "does",
        "my",   "me",   "you",  "your", "we",   "our",  "so",   "than", "then", "there", "these", "those",
        "into", "about", "some", "any",  "has",  "have", "had",  "not",  "no",   "if",   "but",  "all"};
    return words;
}

std::string stem(std::string w) {
    auto strip = [&](std::string_view suffix) {
        if (w.size() >= suffix.size() + 3 && w.compare(w.size() - suffix.size(), suffix.size(), suffix) == 0) {
            w.resize(w.size() - suffix.size());
            return true;
        }
        return false;
    };
    strip("ing") || strip("edly") || strip("ed") || strip("ly") || strip("es") || strip("s");
    return w;
}

std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::uint64_t fnv1a(std::uint64_t seed, std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull ^ (seed * 0x9e3779b97f4a7c15ull);
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    // Final avalanche so low bits are usable for bucketing.
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    return h;
}

void normalize(EmbeddingVector& v) {
    double n = l2_norm(v);
    if (n == 0.0) return;
    for (auto& x : v.values) x /= n;
}

}  // namespace

std::string_view to_string(PurposeTag tag) {
    for (const auto& [t, name] : kPurposeNames)
        if (t == tag) return name;
    return "unknown";
}

std::optional<PurposeTag> parse_purpose_tag(std::string_view s) {
    for (const auto& [t, name] : kPurposeNames)
        if (name == s) return t;
    return std::nullopt;
}

std::string_view to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

std::string request_digest(const ChatRequest& request) {
    std::string canonical;
    for (const auto& m : request.messages) {
        canonical += to_string(m.role);
        canonical.push_back('\x1f');
        canonical += m.content;
        canonical.push_back('\x1e');
    }
    return sha256_hex(canonical);
}

std::int64_t estimate_tokens(std::string_view text) {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
}

ChatRequest make_request(PurposeTag purpose, std::string system, std::string user, std::string budget_key) {
    ChatRequest r;
    r.purpose = purpose;
    r.messages.push_back({Role::system, std::move(system)});
    r.messages.push_back({Role::user, std::move(user)});
    r.budget_key = std::move(budget_key);
    return r;
}

// ---- fixtures -----------------------------------------------------------------------------

FixtureStore FixtureStore::load(const std::filesystem::path& dir) {
    FixtureStore store;
    if (!std::filesystem::is_directory(dir)) throw NotFound("fixture directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        std::ifstream in(file);
        json j = json::parse(in);
        auto tag = parse_purpose_tag(j.at("purpose_tag").get<std::string>());
        if (!tag) throw InvalidArgument("fixture " + file.string() + ": unknown purpose_tag");
        store.add({*tag, j.at("request_digest").get<std::string>(), j.at("response").get<std::string>()});
    }
    return store;
}

void FixtureStore::add(FixtureRecord record) {
    records_[{record.purpose, std::move(record.request_digest)}] = std::move(record.response);
}

const std::string* FixtureStore::find(PurposeTag purpose, const std::string& digest) const {
    auto it = records_.find({purpose, digest});
    return it == records_.end() ? nullptr : &it->second;
}

void FixtureStore::write_record(const std::filesystem::path& dir, const ChatRequest& request,
                                const std::string& digest, const std::string& response) {
    std::filesystem::create_directories(dir);
    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    json j = {{"purpose_tag", to_string(request.purpose)},
              {"request_digest", digest},
              {"response", response},
              {"messages", messages}};
    std::ofstream out(dir / (std::string(to_string(request.purpose)) + "-" + digest + ".json"));
    out << j.dump(2) << "\n";
}

BackendReply ReplayBackend::complete(const ChatRequest& request, const std::string& digest) {
    if (const auto* hit = store_.find(request.purpose, digest)) return {*hit, std::nullopt};
    throw GatewayError(GatewayError::Kind::fixture_miss,
                       "fixture miss for purpose_tag " + std::string(to_string(request.purpose)) + " digest " + digest);
}

BackendReply ScriptedBackend::complete(const ChatRequest& request, const std::string&) {
    return {responder_(request), std::nullopt};
}

BackendReply HttpChatBackend::complete(const ChatRequest& request, const std::string&) {
    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    json body = {{"model", endpoint_.model},
                 {"messages", messages},
                 {"temperature", request.temperature},
                 {"max_tokens", request.max_tokens}};
    auto res = post_json(endpoint_, body);
    check_http(res, endpoint_.url);
    json reply;
    try {
        reply = json::parse(res->body);
        BackendReply out{reply.at("choices").at(0).at("message").at("content").get<std::string>(), std::nullopt};
        if (reply.contains("usage") && reply["usage"].contains("total_tokens")) {
            out.tokens_used = reply["usage"]["total_tokens"].get<std::int64_t>();
        }
        return out;
    } catch (const json::exception& e) {
        throw GatewayError(GatewayError::Kind::bad_response, std::string("malformed chat response: ") + e.what());
    }
}

// ---- embeddings ---------------------------------------------------------------------------

double l2_norm(const EmbeddingVector& v) {
    double s = 0.0;
    for (double x : v.values) s += x * x;
    return std::sqrt(s);
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dimension() != b.dimension()) throw InvalidArgument("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

FeatureHashEmbedder::FeatureHashEmbedder(std::uint64_t seed, std::size_t dimension)
    : seed_(seed), dimension_(dimension) {
    if (dimension == 0) throw InvalidArgument("embedding dimension must be positive");
}

EmbeddingVector FeatureHashEmbedder::embed(std::string_view input) {
    auto tokens = tokenize(input);
    std::vector<std::string> features;
    for (const auto& t : tokens)
        if (!stopwords().count(t)) features.push_back(stem(t));
    if (features.empty()) features = tokens;
    if (features.empty()) features.emplace_back(text::trim(input));

    EmbeddingVector v;
    v.values.assign(dimension_, 0.0);
    for (const auto& f : features) {
        auto h = fnv1a(seed_, f);
        v.values[h % dimension_] += ((h >> 32) & 1u) ? 1.0 : -1.0;
    }
    if (l2_norm(v) == 0.0) {
        // Every feature cancelled out; fall back to one bucket for the whole text.
        v.values[fnv1a(seed_, input) % dimension_] = 1.0;
    }
    normalize(v);
    return v;
}

EmbeddingVector HttpEmbedder::embed(std::string_view input) {
    json body = {{"model", endpoint_.model}, {"input", std::string(input)}};
    auto res = post_json(endpoint_, body);
    check_http(res, endpoint_.url);
    try {
        auto reply = json::parse(res->body);
        EmbeddingVector v{reply.at("data").at(0).at("embedding").get<std::vector<double>>()};
        if (v.dimension() != dimension_) {
            throw GatewayError(GatewayError::Kind::bad_response,
                               "embedding dimension " + std::to_string(v.dimension()) + " != configured " +
                                   std::to_string(dimension_));
        }
        normalize(v);
        return v;
    } catch (const json::exception& e) {
        throw GatewayError(GatewayError::Kind::bad_response, std::string("malformed embedding response: ") + e.what());
    }
}

// ---- gateway ------------------------------------------------------------------------------

Gateway::Gateway(GatewayConfig config, std::unique_ptr<ChatBackend> chat, std::unique_ptr<Embedder> embedder)
    : config_(std::move(config)),
      chat_(std::move(chat)),
      embedder_(embedder ? std::move(embedder) : std::make_unique<FeatureHashEmbedder>()),
      inflight_(std::clamp(config_.max_parallel, 1, 64)) {
    if (!chat_) throw InvalidArgument("gateway needs a chat backend");
}

std::string Gateway::complete_chat(const ChatRequest& request) {
    if (request.messages.empty()) throw GatewayError(GatewayError::Kind::invalid_request, "chat request has no messages");
    if (request.messages.front().role != Role::system) {
        throw GatewayError(GatewayError::Kind::invalid_request, "first chat message must be a system message");
    }
    std::int64_t prompt_tokens = 0;
    for (const auto& m : request.messages) prompt_tokens += estimate_tokens(m.content);

    if (!request.budget_key.empty()) {
        std::lock_guard lock(mutex_);
        auto used = usage_[request.budget_key];
        if (used + prompt_tokens > config_.session_token_budget) {
            throw GatewayError(GatewayError::Kind::budget_exceeded,
                               "budget exceeded for " + request.budget_key + ": " + std::to_string(used) + " + " +
                                   std::to_string(prompt_tokens) + " > " +
                                   std::to_string(config_.session_token_budget) + " tokens");
        }
    }

    const auto digest = request_digest(request);
    BackendReply reply;
    for (int attempt = 0;; ++attempt) {
        try {
            inflight_.acquire();
            struct Release {
                std::counting_semaphore<64>& s;
                ~Release() { s.release(); }
            } release{inflight_};
            reply = chat_->complete(request, digest);
            break;
        } catch (const TransientBackendError& e) {
            if (attempt >= config_.max_retries) {
                throw GatewayError(GatewayError::Kind::upstream_unavailable,
                                   "upstream unavailable after " + std::to_string(attempt + 1) +
                                       " attempts (purpose_tag " + std::string(to_string(request.purpose)) +
                                       "): " + e.what());
            }
            std::this_thread::sleep_for(config_.backoff_base * (1 << attempt));
        }
    }

    charge(request.budget_key, reply.tokens_used.value_or(prompt_tokens + estimate_tokens(reply.text)));
    if (!config_.record_dir.empty()) FixtureStore::write_record(config_.record_dir, request, digest, reply.text);
    if (!config_.audit_log.empty()) audit(request, digest, reply.text);
    return reply.text;
}

void Gateway::charge(const std::string& key, std::int64_t tokens) {
    std::lock_guard lock(mutex_);
    ++calls_;
    if (!key.empty()) usage_[key] += tokens;
}

void Gateway::audit(const ChatRequest& request, const std::string& digest, const std::string& response) {
    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    json line = {{"purpose_tag", to_string(request.purpose)},
                 {"request_digest", digest},
                 {"budget_key", request.budget_key},
                 {"backend", chat_->name()},
                 {"messages", messages},
                 {"response", response}};
    std::lock_guard lock(mutex_);
    std::ofstream out(config_.audit_log, std::ios::app);
    out << line.dump() << "\n";
}

EmbeddingVector Gateway::embed(std::string_view input) {
    if (text::trim(input).empty()) throw InvalidArgument("cannot embed empty text");
    auto v = embedder_->embed(input);
    normalize(v);
    return v;
}

std::int64_t Gateway::tokens_used(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = usage_.find(key);
    return it == usage_.end() ? 0 : it->second;
}

std::int64_t Gateway::calls_made() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::unique_ptr<Gateway> Gateway::replay(const std::filesystem::path& fixture_dir, GatewayConfig config) {
    return std::make_unique<Gateway>(std::move(config),
                                     std::make_unique<ReplayBackend>(FixtureStore::load(fixture_dir)), nullptr);
}

std::unique_ptr<Gateway> Gateway::scripted(ScriptedBackend::Responder responder, GatewayConfig config) {
    return std::make_unique<Gateway>(std::move(config), std::make_unique<ScriptedBackend>(std::move(responder)),
                                     nullptr);
}

}  // namespace moralgraph
