#include "moralgraph/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "moralgraph/prompts.hpp"
#include "moralgraph/text.hpp"

namespace moralgraph {

using nlohmann::json;

void validate(const AcceptancePolicy& policy) {
    if (policy.min_votes < 1) throw InvalidArgument("min_votes must be at least 1");
    if (!(policy.min_wiser_ratio > 0.5 && policy.min_wiser_ratio <= 1.0)) {
        throw InvalidArgument("min_wiser_ratio must be in (0.5, 1]");
    }
}

void validate(const PageRankParams& params) {
    if (!(params.damping > 0.0 && params.damping < 1.0)) throw InvalidArgument("damping must be in (0, 1)");
    if (!(params.tolerance > 0.0)) throw InvalidArgument("tolerance must be positive");
    if (params.max_iterations < 1) throw InvalidArgument("max_iterations must be positive");
}

double wiser_ratio(const Tallies& t, bool count_unsure) {
    const auto considered = t.wiser + t.not_wiser + (count_unsure ? t.unsure : 0);
    return considered == 0 ? 0.0 : static_cast<double>(t.wiser) / static_cast<double>(considered);
}

EdgeStatus classify_edge(const Tallies& t, const AcceptancePolicy& policy) {
    const auto considered = t.wiser + t.not_wiser + (policy.count_unsure ? t.unsure : 0);
    if (considered < policy.min_votes) return EdgeStatus::candidate;
    const double ratio = wiser_ratio(t, policy.count_unsure);
    if (ratio >= policy.min_wiser_ratio) return EdgeStatus::accepted;
    if (ratio >= 1.0 - policy.min_wiser_ratio) return EdgeStatus::omitted;
    return EdgeStatus::rejected;
}

void accept_edges(std::vector<WisdomEdge>& edges, const AcceptancePolicy& policy) {
    validate(policy);
    for (auto& e : edges) e.status = classify_edge(e.tallies, policy);
}

// ---- cycles -------------------------------------------------------------------------------

namespace {

struct IndexedGraph {
    std::vector<std::string> nodes;
    std::unordered_map<std::string, std::size_t> index;
    /// Per node: outgoing edge positions, ordered by edge id.
    std::vector<std::vector<std::size_t>> out;
};

IndexedGraph index_edges(const std::vector<WisdomEdge>& edges, const std::vector<bool>& alive) {
    IndexedGraph g;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (!alive[i]) continue;
        ids.insert(edges[i].from_value);
        ids.insert(edges[i].to_value);
    }
    g.nodes.assign(ids.begin(), ids.end());
    for (std::size_t i = 0; i < g.nodes.size(); ++i) g.index.emplace(g.nodes[i], i);
    g.out.resize(g.nodes.size());
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (alive[i]) g.out[g.index.at(edges[i].from_value)].push_back(i);
    }
    for (auto& list : g.out) {
        std::sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) { return edges[a].id < edges[b].id; });
    }
    return g;
}

/// Iterative Tarjan; returns the component id of each node.
std::vector<std::size_t> strongly_connected(const IndexedGraph& g, const std::vector<WisdomEdge>& edges,
                                            std::size_t& n_components) {
    const std::size_t n = g.nodes.size();
    constexpr auto kUnset = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> idx(n, kUnset), low(n, 0), comp(n, kUnset);
    std::vector<bool> on_stack(n, false);
    std::vector<std::size_t> stack;
    std::size_t counter = 0;
    n_components = 0;

    struct Frame {
        std::size_t node;
        std::size_t next;
    };
    for (std::size_t root = 0; root < n; ++root) {
        if (idx[root] != kUnset) continue;
        std::vector<Frame> call{{root, 0}};
        idx[root] = low[root] = counter++;
        stack.push_back(root);
        on_stack[root] = true;
        while (!call.empty()) {
            auto& f = call.back();
            if (f.next < g.out[f.node].size()) {
                auto w = g.index.at(edges[g.out[f.node][f.next++]].to_value);
                if (idx[w] == kUnset) {
                    idx[w] = low[w] = counter++;
                    stack.push_back(w);
                    on_stack[w] = true;
                    call.push_back({w, 0});
                } else if (on_stack[w]) {
                    low[f.node] = std::min(low[f.node], idx[w]);
                }
                continue;
            }
            auto v = f.node;
            call.pop_back();
            if (!call.empty()) low[call.back().node] = std::min(low[call.back().node], low[v]);
            if (low[v] == idx[v]) {
                std::size_t w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[w] = false;
                    comp[w] = n_components;
                } while (w != v);
                ++n_components;
            }
        }
    }
    return comp;
}

/// Shortest cycle (as edge positions) through the smallest node lying on any cycle, or empty.
std::vector<std::size_t> find_cycle(const std::vector<WisdomEdge>& edges, const std::vector<bool>& alive) {
    auto g = index_edges(edges, alive);
    std::size_t n_comp = 0;
    auto comp = strongly_connected(g, edges, n_comp);
    std::vector<std::size_t> comp_size(n_comp, 0);
    for (auto c : comp) ++comp_size[c];

    for (std::size_t v = 0; v < g.nodes.size(); ++v) {
        bool on_cycle = comp_size[comp[v]] > 1;
        for (auto e : g.out[v]) on_cycle = on_cycle || edges[e].to_value == edges[e].from_value;
        if (!on_cycle) continue;

        // BFS from v inside its component until an edge returns to v.
        constexpr auto kNone = std::numeric_limits<std::size_t>::max();
        std::vector<std::size_t> parent_edge(g.nodes.size(), kNone);
        std::vector<bool> seen(g.nodes.size(), false);
        std::deque<std::size_t> queue{v};
        seen[v] = true;
        while (!queue.empty()) {
            auto u = queue.front();
            queue.pop_front();
            for (auto e : g.out[u]) {
                auto w = g.index.at(edges[e].to_value);
                if (comp[w] != comp[v]) continue;
                if (w == v) {
                    std::vector<std::size_t> cycle{e};
                    for (auto x = u; x != v; x = g.index.at(edges[parent_edge[x]].from_value)) {
                        cycle.push_back(parent_edge[x]);
                    }
                    std::reverse(cycle.begin(), cycle.end());
                    return cycle;
                }
                if (!seen[w]) {
                    seen[w] = true;
                    parent_edge[w] = e;
                    queue.push_back(w);
                }
            }
        }
    }
    return {};
}

}  // namespace

CycleBreakResult detect_and_break_cycles(std::vector<WisdomEdge> edges, bool drop_entire_cycle) {
    CycleBreakResult result;
    std::vector<bool> alive(edges.size(), true);
    for (;;) {
        auto cycle = find_cycle(edges, alive);
        if (cycle.empty()) break;
        DetectedCycle detected;
        for (auto e : cycle) detected.edges.push_back(edges[e].id);
        if (drop_entire_cycle) {
            for (auto e : cycle) {
                alive[e] = false;
                detected.removed.push_back(edges[e].id);
            }
        } else {
            auto weakest = *std::min_element(cycle.begin(), cycle.end(), [&](std::size_t a, std::size_t b) {
                const auto& ea = edges[a];
                const auto& eb = edges[b];
                if (ea.tallies.wiser != eb.tallies.wiser) return ea.tallies.wiser < eb.tallies.wiser;
                double ra = wiser_ratio(ea.tallies), rb = wiser_ratio(eb.tallies);
                if (ra != rb) return ra < rb;
                return ea.id < eb.id;
            });
            alive[weakest] = false;
            detected.removed.push_back(edges[weakest].id);
        }
        result.removed.insert(result.removed.end(), detected.removed.begin(), detected.removed.end());
        result.cycles.push_back(std::move(detected));
    }
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (alive[i]) result.kept.push_back(std::move(edges[i]));
    }
    return result;
}

bool is_acyclic(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    std::vector<std::size_t> indegree(n, 0);
    std::vector<std::vector<std::size_t>> out(n);
    for (auto [a, b] : edges) {
        if (a >= n || b >= n) throw InvalidArgument("edge endpoint out of range");
        out[a].push_back(b);
        ++indegree[b];
    }
    std::vector<std::size_t> ready;
    for (std::size_t i = 0; i < n; ++i)
        if (indegree[i] == 0) ready.push_back(i);
    std::size_t visited = 0;
    while (!ready.empty()) {
        auto v = ready.back();
        ready.pop_back();
        ++visited;
        for (auto w : out[v])
            if (--indegree[w] == 0) ready.push_back(w);
    }
    return visited == n;
}

// ---- pagerank -----------------------------------------------------------------------------

PageRankResult pagerank(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                        const PageRankParams& params) {
    validate(params);
    PageRankResult result;
    if (n == 0) {
        result.converged = true;
        return result;
    }
    std::vector<double> outdeg(n, 0.0);
    for (auto [a, b] : edges) {
        if (a >= n || b >= n) throw InvalidArgument("edge endpoint out of range");
        outdeg[a] += 1.0;
    }
    const double nn = static_cast<double>(n);
    std::vector<double> x(n, 1.0 / nn), next(n);
    for (int it = 1; it <= params.max_iterations; ++it) {
        double dangling = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (outdeg[i] == 0.0) dangling += x[i];
        const double base = (1.0 - params.damping) / nn + params.damping * dangling / nn;
        std::fill(next.begin(), next.end(), base);
        for (auto [a, b] : edges) next[b] += params.damping * x[a] / outdeg[a];
        double delta = 0.0;
        for (std::size_t i = 0; i < n; ++i) delta += std::abs(next[i] - x[i]);
        x.swap(next);
        result.iterations = it;
        result.residual = delta;
        if (delta <= params.tolerance) {
            result.converged = true;
            break;
        }
    }
    const double sum = std::accumulate(x.begin(), x.end(), 0.0);
    for (auto& v : x) v /= sum;
    result.scores = std::move(x);
    return result;
}

ValueScores pagerank(const std::vector<std::string>& values, const std::vector<WisdomEdge>& edges,
                     const PageRankParams& params) {
    std::vector<std::string> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < sorted.size(); ++i) index.emplace(sorted[i], i);

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(edges.size());
    for (const auto& e : edges) {
        auto a = index.find(e.from_value);
        auto b = index.find(e.to_value);
        if (a == index.end() || b == index.end()) {
            throw InvalidArgument("edge " + e.id + " has an endpoint outside the value set");
        }
        pairs.emplace_back(a->second, b->second);
    }
    auto r = pagerank(sorted.size(), pairs, params);
    ValueScores out;
    out.converged = r.converged;
    out.iterations = r.iterations;
    for (std::size_t i = 0; i < sorted.size(); ++i) out.scores.emplace(sorted[i], r.scores[i]);
    return out;
}

// ---- winners ------------------------------------------------------------------------------

namespace {

std::optional<std::string> argmax(const std::set<std::string>& candidates, const std::map<std::string, double>& scores) {
    std::optional<std::string> best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (const auto& id : candidates) {  // ascending id, so strict > keeps the smaller id on ties
        auto it = scores.find(id);
        double s = it == scores.end() ? 0.0 : it->second;
        if (!best || s > best_score) {
            best = id;
            best_score = s;
        }
    }
    return best;
}

std::vector<const WisdomEdge*> live_edges(const MoralGraph& graph, const std::vector<std::string>& removed) {
    std::set<std::string> gone(removed.begin(), removed.end());
    std::vector<const WisdomEdge*> out;
    for (const auto& e : graph.edges)
        if (e.status == EdgeStatus::accepted && !gone.count(e.id)) out.push_back(&e);
    return out;
}

std::map<std::string, std::string> winners_impl(
    const MoralGraph& graph, const std::map<std::string, double>& global_scores,
    const std::vector<std::string>& removed,
    const std::function<const std::map<std::string, double>&(const std::string&)>& context_scores) {
    auto edges = live_edges(graph, removed);
    std::map<std::string, std::set<std::string>> incident;
    for (const auto* e : edges) {
        incident[e->context].insert(e->from_value);
        incident[e->context].insert(e->to_value);
    }
    std::map<std::string, std::string> winners;
    for (const auto& ctx : graph.contexts) {
        if (auto it = incident.find(ctx.id); it != incident.end()) {
            if (auto w = argmax(it->second, context_scores(ctx.id))) winners[ctx.id] = *w;
            continue;
        }
        std::set<std::string> fallback;
        for (const auto& v : graph.values)
            if (v.origin.scenario_id == ctx.source_scenario) fallback.insert(v.id);
        if (auto w = argmax(fallback, global_scores)) winners[ctx.id] = *w;
    }
    return winners;
}

}  // namespace

std::map<std::string, std::string> winners_by_context(const MoralGraph& graph,
                                                      const std::map<std::string, double>& scores,
                                                      const std::vector<std::string>& removed_edges) {
    return winners_impl(graph, scores, removed_edges,
                        [&](const std::string&) -> const std::map<std::string, double>& { return scores; });
}

std::vector<const WisdomEdge*> effective_edges(const MoralGraph& graph) {
    static const std::vector<std::string> none;
    return live_edges(graph, graph.aggregation ? graph.aggregation->removed_cycle_edges : none);
}

const Aggregation& aggregate(MoralGraph& graph, const AggregationConfig& config) {
    validate(config.pagerank);
    accept_edges(graph.edges, config.acceptance);

    std::vector<WisdomEdge> accepted;
    for (const auto& e : graph.edges)
        if (e.status == EdgeStatus::accepted) accepted.push_back(e);
    auto broken = detect_and_break_cycles(std::move(accepted), config.drop_entire_cycle);

    std::vector<std::string> value_ids;
    for (const auto& v : graph.values) value_ids.push_back(v.id);
    auto scored = pagerank(value_ids, broken.kept, config.pagerank);

    Aggregation agg;
    agg.acceptance = config.acceptance;
    agg.pagerank = config.pagerank;
    agg.scope = config.scope;
    agg.drop_entire_cycle = config.drop_entire_cycle;
    agg.scores = scored.scores;
    agg.converged = scored.converged;
    agg.iterations = scored.iterations;
    agg.removed_cycle_edges = broken.removed;
    for (auto& c : broken.cycles) agg.cycles.push_back(std::move(c.edges));

    if (config.scope == RankingScope::global) {
        agg.winners = winners_by_context(graph, agg.scores, agg.removed_cycle_edges);
    } else {
        std::map<std::string, std::map<std::string, double>> per_context;
        for (const auto& ctx : graph.contexts) {
            std::vector<WisdomEdge> ctx_edges;
            for (const auto& e : broken.kept)
                if (e.context == ctx.id) ctx_edges.push_back(e);
            auto s = pagerank(value_ids, ctx_edges, config.pagerank);
            agg.converged = agg.converged && s.converged;
            per_context.emplace(ctx.id, std::move(s.scores));
        }
        agg.winners = winners_impl(graph, agg.scores, agg.removed_cycle_edges,
                                   [&](const std::string& ctx) -> const std::map<std::string, double>& {
                                       return per_context.at(ctx);
                                   });
    }
    graph.aggregation = std::move(agg);
    return *graph.aggregation;
}

int rank_of(const std::string& target, const std::vector<std::string>& cohort,
            const std::map<std::string, double>& scores) {
    auto score = [&](const std::string& id) {
        auto it = scores.find(id);
        return it == scores.end() ? 0.0 : it->second;
    };
    if (std::find(cohort.begin(), cohort.end(), target) == cohort.end()) {
        throw NotFound("card " + target + " is not in the ranking cohort");
    }
    const double t = score(target);
    int rank = 1;
    for (const auto& id : cohort) {
        if (id == target) continue;
        double s = score(id);
        if (s > t || (s == t && id < target)) ++rank;
    }
    return rank;
}

// ---- contexts -----------------------------------------------------------------------------

std::vector<std::string> derive_contexts(Gateway& gateway, std::string_view input) {
    if (text::trim(input).empty()) throw InvalidArgument("cannot derive contexts from empty text");
    auto reply = gateway.complete_chat(make_request(PurposeTag::context_derivation,
                                                    std::string(prompts::get("context_derivation")),
                                                    std::string(text::trim(input))));
    std::vector<std::string> contexts;
    try {
        auto j = json::parse(text::extract_json_block(reply));
        for (const auto& item : j.at("contexts")) {
            auto c = normalize_context_text(item.get<std::string>());
            if (c.empty()) continue;
            bool dup = std::any_of(contexts.begin(), contexts.end(), [&](const auto& x) { return text::iequals(x, c); });
            if (!dup) contexts.push_back(std::move(c));
            if (contexts.size() == 5) break;
        }
    } catch (const json::exception& e) {
        throw GatewayError(GatewayError::Kind::bad_response, std::string("context derivation reply: ") + e.what());
    }
    if (contexts.empty()) throw GatewayError(GatewayError::Kind::bad_response, "context derivation returned no contexts");
    return contexts;
}

std::optional<ContextMatch> match_context(Gateway& gateway, std::string_view candidate,
                                          const std::vector<MoralContext>& contexts, double threshold) {
    if (contexts.empty() || text::trim(candidate).empty()) return std::nullopt;
    auto normalized = normalize_context_text(candidate);
    std::vector<const MoralContext*> sorted;
    for (const auto& c : contexts) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
    for (const auto* c : sorted) {
        if (text::iequals(c->text, normalized)) return ContextMatch{c->id, 1.0};
    }
    auto probe = gateway.embed(normalized);
    std::optional<ContextMatch> best;
    for (const auto* c : sorted) {
        double sim = cosine(probe, gateway.embed(c->text));
        if (!best || sim > best->similarity) best = ContextMatch{c->id, sim};
    }
    if (!best || best->similarity < threshold) return std::nullopt;
    return best;
}

Retrieval retrieve_value_for_state(Gateway& gateway, std::string_view state, const MoralGraph& graph,
                                   double threshold) {
    Retrieval r;
    if (graph.contexts.empty() || graph.values.empty()) {
        r.rationale = "no guidance: the graph has no contexts";
        return r;
    }
    if (!graph.aggregation) throw PreconditionFailed("graph has not been aggregated");
    std::optional<ContextMatch> best;
    for (const auto& derived : derive_contexts(gateway, state)) {
        auto m = match_context(gateway, derived, graph.contexts, threshold);
        if (m && (!best || m->similarity > best->similarity)) best = m;
    }
    if (!best) {
        r.rationale = "no guidance: no graph context matched the conversation";
        return r;
    }
    auto w = graph.aggregation->winners.find(best->context_id);
    const auto* ctx = graph.find_context(best->context_id);
    r.context_id = best->context_id;
    r.context_text = ctx ? ctx->text : std::string();
    r.similarity = best->similarity;
    if (w == graph.aggregation->winners.end()) {
        r.rationale = "no guidance: context " + r.context_id + " has no winning value";
        return r;
    }
    const auto* card = graph.find_value(w->second);
    r.guidance = true;
    r.winner_id = w->second;
    std::ostringstream out;
    out << "context: " << r.context_text << " (" << r.context_id << ", similarity " << r.similarity << ")\n";
    out << "winner: " << (card ? card->title : std::string("?")) << " (" << r.winner_id << ")\n";
    if (card) {
        out << "policies:\n";
        for (const auto& p : card->policies) out << "- " << p.text << "\n";
    }
    r.rationale = out.str();
    return r;
}

// ---- alignment target ---------------------------------------------------------------------

std::vector<AlignmentTargetRecord> export_alignment_target(const MoralGraph& graph, bool include_transitive) {
    auto edges = effective_edges(graph);
    std::sort(edges.begin(), edges.end(), [](const WisdomEdge* a, const WisdomEdge* b) {
        return std::tie(a->context, a->id) < std::tie(b->context, b->id);
    });
    std::vector<AlignmentTargetRecord> records;
    for (const auto* e : edges) records.push_back({e->context, e->to_value, e->from_value, {e->id}, false});
    if (!include_transitive) return records;

    std::map<std::string, std::vector<const WisdomEdge*>> by_context;
    for (const auto* e : edges) by_context[e->context].push_back(e);
    for (const auto& [ctx, ctx_edges] : by_context) {
        std::map<std::string, std::vector<const WisdomEdge*>> out;
        std::set<std::pair<std::string, std::string>> direct;
        std::set<std::string> nodes;
        for (const auto* e : ctx_edges) {
            out[e->from_value].push_back(e);  // already ordered by id
            direct.emplace(e->from_value, e->to_value);
            nodes.insert(e->from_value);
            nodes.insert(e->to_value);
        }
        for (const auto& src : nodes) {
            std::map<std::string, const WisdomEdge*> via;
            std::deque<std::string> queue{src};
            std::set<std::string> seen{src};
            while (!queue.empty()) {
                auto u = queue.front();
                queue.pop_front();
                for (const auto* e : out[u]) {
                    if (seen.insert(e->to_value).second) {
                        via[e->to_value] = e;
                        queue.push_back(e->to_value);
                    }
                }
            }
            for (const auto& [dst, last] : via) {
                if (direct.count({src, dst})) continue;
                std::vector<std::string> path;
                for (const WisdomEdge* e = last;; e = via.at(e->from_value)) {
                    path.push_back(e->id);
                    if (e->from_value == src) break;
                }
                std::reverse(path.begin(), path.end());
                records.push_back({ctx, dst, src, std::move(path), true});
            }
        }
    }
    return records;
}

void to_json(json& j, const AlignmentTargetRecord& r) {
    j = json{{"context", r.context},
             {"preferred", r.preferred},
             {"dispreferred", r.dispreferred},
             {"provenance", r.provenance},
             {"transitive", r.transitive}};
}

std::string to_jsonl(const std::vector<AlignmentTargetRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += json(r).dump();
        out += '\n';
    }
    return out;
}

void to_json(json& j, const Aggregation& a) {
    j = json{{"scores", a.scores},
             {"winners", a.winners},
             {"removed_cycle_edges", a.removed_cycle_edges},
             {"cycles", a.cycles},
             {"acceptance", a.acceptance},
             {"pagerank", a.pagerank},
             {"scope", a.scope},
             {"drop_entire_cycle", a.drop_entire_cycle},
             {"converged", a.converged},
             {"iterations", a.iterations}};
}

void from_json(const json& j, Aggregation& a) {
    j.at("scores").get_to(a.scores);
    j.at("winners").get_to(a.winners);
    j.at("removed_cycle_edges").get_to(a.removed_cycle_edges);
    a.cycles = j.value("cycles", std::vector<std::vector<std::string>>{});
    j.at("acceptance").get_to(a.acceptance);
    j.at("pagerank").get_to(a.pagerank);
    a.scope = j.value("scope", RankingScope::global);
    a.drop_entire_cycle = j.value("drop_entire_cycle", false);
    a.converged = j.value("converged", true);
    a.iterations = j.value("iterations", 0);
}

}  // namespace moralgraph
