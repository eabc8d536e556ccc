#pragma once

// Pool of canonical values cards and the coalescing of new custom cards into it.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moralgraph/gateway.hpp"
#include "moralgraph/model.hpp"

namespace moralgraph {

struct Endorsement {
    std::string participant_id;
    std::string custom_card_id;
    bool approved = false;

    bool operator==(const Endorsement&) const = default;
};

struct Candidate {
    std::string canonical_id;
    double similarity = 0.0;

    bool operator==(const Candidate&) const = default;
};

/// The text that gets embedded for a card: its policy lines joined by newlines.
std::string policy_text(const ValuesCard& card);

class CanonicalPool {
public:
    /// Canonical cards in insertion order.
    const std::vector<ValuesCard>& cards() const { return cards_; }
    std::size_t size() const { return cards_.size(); }
    const ValuesCard* find(const std::string& id) const;
    const EmbeddingVector* embedding(const std::string& id) const;

    /// Canonical id whose own render, or the render of a card coalesced into it, equals `rendered`.
    std::optional<std::string> exact_match(const std::string& rendered) const;

    /// Top-k by descending cosine, ties by ascending id.
    std::vector<Candidate> nearest(const EmbeddingVector& probe, std::size_t k) const;

    /// Throws InvalidArgument for a non-canonical card, a duplicate id, or a card without origin.
    void insert(ValuesCard canonical, EmbeddingVector embedding);
    /// Records `custom` as coalesced into `canonical_id`. Throws NotFound for unknown ids.
    void coalesce(const std::string& canonical_id, const ValuesCard& custom);
    void endorse(const std::string& canonical_id, Endorsement endorsement);

    const std::map<std::string, std::vector<Endorsement>>& endorsements() const { return endorsements_; }

    bool operator==(const CanonicalPool&) const = default;

    friend void to_json(nlohmann::json& j, const CanonicalPool& pool);
    friend void from_json(const nlohmann::json& j, CanonicalPool& pool);

private:
    std::vector<ValuesCard> cards_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, EmbeddingVector> embeddings_;
    std::map<std::string, std::string> renders_;
    std::map<std::string, std::vector<Endorsement>> endorsements_;
};

struct DedupConfig {
    std::size_t k = 5;
    /// Candidates below this cosine never reach the judge.
    double min_similarity = 0.85;
};

struct JudgeDecision {
    bool same_value = false;
    /// The judge could not be consulted; nothing should be merged.
    bool deferred = false;
    /// Decided without a gateway call (content-identical cards).
    bool short_circuit = false;
    bool same_attention = false;
    bool mutual_endorsement = false;
    bool same_granularity = false;
    bool differences_are_oversight = false;
    std::string rationale;
};

enum class CanonicalizeOutcome { inserted, coalesced, deferred };

std::string_view to_string(CanonicalizeOutcome outcome);

struct CanonicalizeResult {
    CanonicalizeOutcome outcome = CanonicalizeOutcome::deferred;
    /// Empty when deferred.
    std::string canonical_id;
    std::vector<Candidate> candidates;
    std::string rationale;
    /// Set when inserted.
    std::optional<ValuesCard> inserted_card;
    std::optional<EmbeddingVector> embedding;
};

class Deduplicator {
public:
    explicit Deduplicator(Gateway& gateway, DedupConfig config = {});

    std::vector<Candidate> nearest_canonical(const CanonicalPool& pool, const ValuesCard& card, std::size_t k) const;

    /// Content-identical cards short-circuit to same_value. Gateway failures yield deferred.
    JudgeDecision judge_duplicate(const ValuesCard& a, const ValuesCard& b);

    /// Decides where `custom` belongs without touching the pool. Throws InvalidArgument for an
    /// invalid card.
    CanonicalizeResult plan(const CanonicalPool& pool, const ValuesCard& custom, const std::string& new_canonical_id);

    /// Applies a plan produced for `custom`. Deferred plans leave the pool alone.
    static void apply(CanonicalPool& pool, const ValuesCard& custom, const CanonicalizeResult& result);

    /// plan + apply. New canonical ids are "value-NNNNNN" numbered by pool size.
    CanonicalizeResult canonicalize(CanonicalPool& pool, const ValuesCard& custom);

    const DedupConfig& config() const { return config_; }

private:
    Gateway& gateway_;
    DedupConfig config_;
};

/// Canonical card built from the first custom card of its kind.
ValuesCard make_canonical(const ValuesCard& custom, std::string canonical_id);

void to_json(nlohmann::json& j, const Endorsement& e);
void from_json(const nlohmann::json& j, Endorsement& e);
void to_json(nlohmann::json& j, const EmbeddingVector& v);
void from_json(const nlohmann::json& j, EmbeddingVector& v);
void to_json(nlohmann::json& j, const CanonicalizeResult& r);
void from_json(const nlohmann::json& j, CanonicalizeResult& r);

NLOHMANN_JSON_SERIALIZE_ENUM(CanonicalizeOutcome, {{CanonicalizeOutcome::inserted, "inserted"},
                                                   {CanonicalizeOutcome::coalesced, "coalesced"},
                                                   {CanonicalizeOutcome::deferred, "deferred"}})

}  // namespace moralgraph
