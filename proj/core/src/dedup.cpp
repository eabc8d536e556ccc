#include "moralgraph/dedup.hpp"

#include <algorithm>

#include "moralgraph/prompts.hpp"
#include "moralgraph/text.hpp"

namespace moralgraph {

using nlohmann::json;

std::string policy_text(const ValuesCard& card) {
    std::vector<std::string> lines;
    for (const auto& p : card.policies) lines.push_back(p.text);
    return text::join(lines, "\n");
}

std::string_view to_string(CanonicalizeOutcome outcome) {
    switch (outcome) {
        case CanonicalizeOutcome::inserted: return "inserted";
        case CanonicalizeOutcome::coalesced: return "coalesced";
        case CanonicalizeOutcome::deferred: return "deferred";
    }
    return "deferred";
}

// ---- pool ---------------------------------------------------------------------------------

const ValuesCard* CanonicalPool::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &cards_[it->second];
}

const EmbeddingVector* CanonicalPool::embedding(const std::string& id) const {
    auto it = embeddings_.find(id);
    return it == embeddings_.end() ? nullptr : &it->second;
}

std::optional<std::string> CanonicalPool::exact_match(const std::string& rendered) const {
    auto it = renders_.find(rendered);
    if (it == renders_.end()) return std::nullopt;
    return it->second;
}

std::vector<Candidate> CanonicalPool::nearest(const EmbeddingVector& probe, std::size_t k) const {
    std::vector<Candidate> all;
    all.reserve(cards_.size());
    for (const auto& card : cards_) all.push_back({card.id, cosine(probe, embeddings_.at(card.id))});
    std::sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.canonical_id < b.canonical_id;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

void CanonicalPool::insert(ValuesCard canonical, EmbeddingVector embedding) {
    if (!canonical.is_canonical()) throw InvalidArgument("only canonical cards can enter the pool");
    if (canonical.id.empty() || index_.count(canonical.id)) {
        throw InvalidArgument("canonical id missing or already used: " + canonical.id);
    }
    if (canonical.canonical_of.empty() && canonical.origin.participant_id.empty()) {
        throw InvalidArgument("canonical card " + canonical.id + " has no origin");
    }
    renders_.emplace(render_card(canonical), canonical.id);
    index_.emplace(canonical.id, cards_.size());
    embeddings_.emplace(canonical.id, std::move(embedding));
    cards_.push_back(std::move(canonical));
}

void CanonicalPool::coalesce(const std::string& canonical_id, const ValuesCard& custom) {
    auto it = index_.find(canonical_id);
    if (it == index_.end()) throw NotFound("unknown canonical card " + canonical_id);
    auto& of = cards_[it->second].canonical_of;
    if (std::find(of.begin(), of.end(), custom.id) == of.end()) of.push_back(custom.id);
    renders_.emplace(render_card(custom), canonical_id);
}

void CanonicalPool::endorse(const std::string& canonical_id, Endorsement endorsement) {
    if (!index_.count(canonical_id)) throw NotFound("unknown canonical card " + canonical_id);
    auto& list = endorsements_[canonical_id];
    auto same = std::find_if(list.begin(), list.end(), [&](const Endorsement& e) {
        return e.participant_id == endorsement.participant_id && e.custom_card_id == endorsement.custom_card_id;
    });
    if (same != list.end()) {
        *same = std::move(endorsement);
    } else {
        list.push_back(std::move(endorsement));
    }
}

void to_json(json& j, const CanonicalPool& pool) {
    json cards = json::array();
    for (const auto& c : pool.cards_) {
        json entry = c;
        entry["embedding"] = pool.embeddings_.at(c.id);
        cards.push_back(std::move(entry));
    }
    j = json{{"cards", cards}, {"aliases", pool.renders_}, {"endorsements", pool.endorsements_}};
}

void from_json(const json& j, CanonicalPool& pool) {
    pool = CanonicalPool{};
    for (const auto& entry : j.at("cards")) {
        auto card = entry.get<ValuesCard>();
        pool.index_.emplace(card.id, pool.cards_.size());
        pool.embeddings_.emplace(card.id, entry.at("embedding").get<EmbeddingVector>());
        pool.cards_.push_back(std::move(card));
    }
    j.at("aliases").get_to(pool.renders_);
    j.at("endorsements").get_to(pool.endorsements_);
}

// ---- deduplicator -------------------------------------------------------------------------

ValuesCard make_canonical(const ValuesCard& custom, std::string canonical_id) {
    ValuesCard c;
    c.id = std::move(canonical_id);
    c.title = custom.title;
    c.summary = custom.summary;
    c.policies = custom.policies;
    c.origin = custom.origin;
    c.origin.kind = OriginKind::canonical;
    c.canonical_of = {custom.id};
    c.created_at = custom.created_at;
    return c;
}

Deduplicator::Deduplicator(Gateway& gateway, DedupConfig config) : gateway_(gateway), config_(config) {
    if (config_.k == 0) throw InvalidArgument("dedup k must be positive");
}

std::vector<Candidate> Deduplicator::nearest_canonical(const CanonicalPool& pool, const ValuesCard& card,
                                                       std::size_t k) const {
    if (pool.size() == 0 || k == 0) return {};
    return pool.nearest(gateway_.embed(policy_text(card)), k);
}

JudgeDecision Deduplicator::judge_duplicate(const ValuesCard& a, const ValuesCard& b) {
    JudgeDecision d;
    if (same_content(a, b)) {
        d.same_value = d.short_circuit = true;
        d.same_attention = d.mutual_endorsement = d.same_granularity = d.differences_are_oversight = true;
        d.rationale = "cards are identical";
        return d;
    }
    std::string user = "Card A:\n" + render_card(a) + "Card B:\n" + render_card(b);
    try {
        auto reply = gateway_.complete_chat(
            make_request(PurposeTag::dedup_judge, std::string(prompts::get("dedup_judge")), std::move(user)));
        auto j = json::parse(text::extract_json_block(reply));
        d.same_attention = j.at("same_attention").get<bool>();
        d.mutual_endorsement = j.at("mutual_endorsement").get<bool>();
        d.same_granularity = j.at("same_granularity").get<bool>();
        d.differences_are_oversight = j.at("differences_are_oversight").get<bool>();
        d.rationale = j.value("rationale", std::string());
        d.same_value = d.same_attention && d.mutual_endorsement && d.same_granularity && d.differences_are_oversight;
    } catch (const GatewayError& e) {
        d = JudgeDecision{};
        d.deferred = true;
        d.rationale = std::string("judge unavailable: ") + e.what();
    } catch (const json::exception& e) {
        d = JudgeDecision{};
        d.deferred = true;
        d.rationale = std::string("judge reply unreadable: ") + e.what();
    }
    return d;
}

CanonicalizeResult Deduplicator::plan(const CanonicalPool& pool, const ValuesCard& custom,
                                      const std::string& new_canonical_id) {
    if (auto report = validate_card(custom); !report.ok()) {
        throw InvalidArgument("cannot canonicalize invalid card " + custom.id + ": " + report.errors.front());
    }
    CanonicalizeResult r;
    if (auto hit = pool.exact_match(render_card(custom))) {
        r.outcome = CanonicalizeOutcome::coalesced;
        r.canonical_id = *hit;
        r.rationale = "identical to an existing card";
        return r;
    }
    auto embedding = gateway_.embed(policy_text(custom));
    r.candidates = pool.nearest(embedding, config_.k);
    for (const auto& c : r.candidates) {
        if (c.similarity < config_.min_similarity) break;
        auto decision = judge_duplicate(custom, *pool.find(c.canonical_id));
        if (decision.deferred) {
            r.outcome = CanonicalizeOutcome::deferred;
            r.canonical_id.clear();
            r.rationale = decision.rationale;
            return r;
        }
        if (decision.same_value) {
            r.outcome = CanonicalizeOutcome::coalesced;
            r.canonical_id = c.canonical_id;
            r.rationale = decision.rationale;
            return r;
        }
    }
    r.outcome = CanonicalizeOutcome::inserted;
    r.canonical_id = new_canonical_id;
    r.inserted_card = make_canonical(custom, new_canonical_id);
    r.embedding = std::move(embedding);
    r.rationale = "no matching canonical value";
    return r;
}

void Deduplicator::apply(CanonicalPool& pool, const ValuesCard& custom, const CanonicalizeResult& result) {
    switch (result.outcome) {
        case CanonicalizeOutcome::inserted:
            if (!result.inserted_card || !result.embedding) throw InvalidArgument("insert plan lacks card or embedding");
            pool.insert(*result.inserted_card, *result.embedding);
            break;
        case CanonicalizeOutcome::coalesced:
            pool.coalesce(result.canonical_id, custom);
            break;
        case CanonicalizeOutcome::deferred:
            break;
    }
}

CanonicalizeResult Deduplicator::canonicalize(CanonicalPool& pool, const ValuesCard& custom) {
    auto result = plan(pool, custom, text::make_id("value", static_cast<long long>(pool.size()) + 1));
    apply(pool, custom, result);
    return result;
}

// ---- json ---------------------------------------------------------------------------------

void to_json(json& j, const Endorsement& e) {
    j = json{{"participant_id", e.participant_id}, {"custom_card_id", e.custom_card_id}, {"approved", e.approved}};
}

void from_json(const json& j, Endorsement& e) {
    j.at("participant_id").get_to(e.participant_id);
    e.custom_card_id = j.value("custom_card_id", std::string());
    j.at("approved").get_to(e.approved);
}

void to_json(json& j, const EmbeddingVector& v) { j = v.values; }
void from_json(const json& j, EmbeddingVector& v) { j.get_to(v.values); }

void to_json(json& j, const CanonicalizeResult& r) {
    json candidates = json::array();
    for (const auto& c : r.candidates) candidates.push_back({{"canonical_id", c.canonical_id}, {"similarity", c.similarity}});
    j = json{{"outcome", r.outcome},
             {"canonical_id", r.canonical_id},
             {"candidates", candidates},
             {"rationale", r.rationale}};
    if (r.inserted_card) j["inserted_card"] = *r.inserted_card;
    if (r.embedding) j["embedding"] = *r.embedding;
}

void from_json(const json& j, CanonicalizeResult& r) {
    j.at("outcome").get_to(r.outcome);
    j.at("canonical_id").get_to(r.canonical_id);
    r.candidates.clear();
    for (const auto& c : j.value("candidates", json::array())) {
        r.candidates.push_back({c.at("canonical_id").get<std::string>(), c.at("similarity").get<double>()});
    }
    r.rationale = j.value("rationale", std::string());
    if (j.contains("inserted_card")) r.inserted_card = j.at("inserted_card").get<ValuesCard>();
    if (j.contains("embedding")) r.embedding = j.at("embedding").get<EmbeddingVector>();
}

}  // namespace moralgraph
