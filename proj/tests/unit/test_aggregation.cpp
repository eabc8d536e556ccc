#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "moralgraph/aggregation.hpp"
#include "oracles.hpp"

using namespace moralgraph;

namespace {

std::vector<double> engine_scores(std::size_t n, const oracle::EdgeList& edges) {
    return pagerank(n, edges).scores;
}

oracle::EdgeList index_pairs(const std::vector<WisdomEdge>& edges) {
    oracle::EdgeList out;
    for (const auto& e : edges)
        out.emplace_back(std::stoul(e.from_value.substr(2)), std::stoul(e.to_value.substr(2)));
    return out;
}

}  // namespace

TEST_CASE("pagerank agrees with the dense oracle") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 100; ++i) {
        auto g = oracle::random_digraph(rng, 12);
        auto got = engine_scores(g.n, g.edges);
        CHECK(oracle::l1(got, oracle::pagerank_power(g.n, g.edges)) < 1e-8);
        CHECK(oracle::l1(got, oracle::pagerank_exact(g.n, g.edges)) < 1e-8);
        CHECK(std::accumulate(got.begin(), got.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("pagerank hand-checked cases") {
    SUBCASE("no edges is uniform") {
        auto r = pagerank(4, {});
        for (double s : r.scores) CHECK(s == doctest::Approx(0.25));
        CHECK(r.converged);
    }
    SUBCASE("two nodes, one edge") {
        // x0 = 0.15/2 + 0.85 * x1/2 (node 1 dangles), x0 + x1 = 1  =>  x0 = 0.5 / 1.425.
        auto r = pagerank(2, {{0, 1}});
        CHECK(r.scores[0] == doctest::Approx(0.5 / 1.425).epsilon(1e-9));
        CHECK(r.scores[1] == doctest::Approx(1.0 - 0.5 / 1.425).epsilon(1e-9));
        CHECK(r.scores[1] > r.scores[0]);
    }
    SUBCASE("parallel edges count with multiplicity") {
        auto once = pagerank(3, {{0, 1}, {0, 2}});
        auto twice = pagerank(3, {{0, 1}, {0, 1}, {0, 2}});
        CHECK(twice.scores[1] > once.scores[1]);
        CHECK(oracle::l1(twice.scores, oracle::pagerank_exact(3, {{0, 1}, {0, 1}, {0, 2}})) < 1e-8);
    }
    SUBCASE("invalid parameters") {
        CHECK_THROWS_AS(pagerank(2, {}, PageRankParams{1.0, 1e-9, 10}), InvalidArgument);
        CHECK_THROWS_AS(pagerank(2, {{0, 5}}), InvalidArgument);
    }
    SUBCASE("named values") {
        std::vector<WisdomEdge> edges = {{"e1", "a", "b", "c", "s", {}, EdgeStatus::accepted}};
        auto r = pagerank({"b", "a", "z"}, edges);
        CHECK(r.scores.size() == 3);
        CHECK(r.scores.at("b") > r.scores.at("a"));
        CHECK(r.scores.at("a") == doctest::Approx(r.scores.at("z")));
        edges[0].to_value = "missing";
        CHECK_THROWS_AS(pagerank({"a"}, edges), InvalidArgument);
    }
}

TEST_CASE("adding an edge into a node raises its score") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        auto g = oracle::random_digraph(rng, 7);
        if (g.n < 2) continue;
        std::size_t a = rng() % g.n, x = rng() % g.n;
        if (a == x || std::count(g.edges.begin(), g.edges.end(), std::make_pair(x, a))) continue;
        auto before = pagerank(g.n, g.edges).scores[a];
        g.edges.emplace_back(x, a);
        CHECK(pagerank(g.n, g.edges).scores[a] > before);
    }
}

TEST_CASE("edge acceptance table") {
    AcceptancePolicy p;
    CHECK(classify_edge({2, 0, 5}, p) == EdgeStatus::candidate);
    CHECK(classify_edge({3, 0, 0}, p) == EdgeStatus::accepted);
    CHECK(classify_edge({2, 1, 0}, p) == EdgeStatus::accepted);   // 0.667
    CHECK(classify_edge({13, 7, 0}, p) == EdgeStatus::omitted);   // 0.65
    CHECK(classify_edge({1, 1, 0}, p) == EdgeStatus::candidate);
    CHECK(classify_edge({1, 2, 0}, p) == EdgeStatus::rejected);   // 0.333
    CHECK(classify_edge({17, 33, 0}, p) == EdgeStatus::omitted);  // 0.34
    CHECK(classify_edge({0, 5, 9}, p) == EdgeStatus::rejected);

    AcceptancePolicy strict{3, 0.66, true};
    CHECK(classify_edge({2, 0, 1}, strict) == EdgeStatus::accepted);
    CHECK(classify_edge({2, 0, 2}, strict) == EdgeStatus::omitted);
    CHECK(wiser_ratio({2, 0, 2}, true) == doctest::Approx(0.5));
    CHECK(wiser_ratio({}, false) == 0.0);

    CHECK_THROWS_AS(validate(AcceptancePolicy{0, 0.66, false}), InvalidArgument);
    CHECK_THROWS_AS(validate(AcceptancePolicy{3, 0.5, false}), InvalidArgument);
}

TEST_CASE("cycle breaking always leaves an acyclic graph") {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 300; ++i) {
        auto g = oracle::random_digraph(rng, 9);
        auto graph = oracle::make_graph(g.n, g.edges);
        std::uniform_int_distribution<int> votes(3, 12);
        for (auto& e : graph.edges) e.tallies = {votes(rng), 0, 0};
        for (bool drop : {false, true}) {
            auto r = detect_and_break_cycles(graph.edges, drop);
            CHECK(oracle::acyclic(g.n, index_pairs(r.kept)));
            CHECK(r.kept.size() + r.removed.size() == graph.edges.size());
            std::size_t listed = 0;
            for (const auto& c : r.cycles) listed += c.removed.size();
            CHECK(listed == r.removed.size());
            if (oracle::acyclic(g.n, g.edges)) CHECK(r.removed.empty());
        }
    }
}

TEST_CASE("the weakest edge of a cycle is removed") {
    auto g = oracle::make_graph(3, {{0, 1}, {1, 2}, {2, 0}});
    g.edges[0].tallies = {9, 0, 0};
    g.edges[1].tallies = {4, 1, 0};
    g.edges[2].tallies = {4, 0, 0};
    auto r = detect_and_break_cycles(g.edges);
    REQUIRE(r.cycles.size() == 1);
    CHECK(r.removed == std::vector<std::string>{"edge-0002"});  // same wiser count, lower ratio

    auto all = detect_and_break_cycles(g.edges, true);
    CHECK(all.removed.size() == 3);
    CHECK(all.kept.empty());

    auto two = oracle::make_graph(2, {{0, 1}, {1, 0}});
    two.edges[1].tallies = {3, 0, 0};
    CHECK(detect_and_break_cycles(two.edges).removed == std::vector<std::string>{"edge-0002"});
}

TEST_CASE("aggregate marks statuses, removes cycles and picks winners") {
    auto g = oracle::make_graph(4, {{0, 1}, {1, 2}, {2, 1}, {3, 2}});
    g.edges[2].tallies = {3, 0, 0};   // weakest edge of the 1<->2 cycle
    g.edges[3].tallies = {1, 2, 0};   // rejected
    g.contexts.push_back({"ctx-2", "When nothing has been voted on", "s"});
    g.contexts.push_back({"ctx-3", "When another scenario comes up", "other"});
    const auto& agg = aggregate(g);
    CHECK(g.edges[3].status == EdgeStatus::rejected);
    CHECK(agg.removed_cycle_edges == std::vector<std::string>{"edge-0003"});
    CHECK(agg.cycles.size() == 1);
    CHECK(agg.converged);

    std::vector<double> expect = oracle::pagerank_exact(4, {{0, 1}, {1, 2}});
    for (std::size_t i = 0; i < 4; ++i) CHECK(agg.scores.at(oracle::node_id(i)) == doctest::Approx(expect[i]).epsilon(1e-9));
    CHECK(agg.winners.at("ctx-1") == "v-02");
    CHECK(agg.winners.at("ctx-2") == "v-02");  // falls back to the scenario's cards
    CHECK_FALSE(agg.winners.count("ctx-3"));
    CHECK(check_graph_invariants(g).empty());
    CHECK(effective_edges(g).size() == 2);
}

TEST_CASE("per-context scope ranks within each context") {
    // ctx-1 makes v-01 the global favourite; within ctx-2, v-06 has more support than v-01.
    auto g = oracle::make_graph(8, {{0, 1}, {3, 1}, {4, 1}, {2, 1}, {5, 6}, {7, 6}});
    g.contexts.push_back({"ctx-2", "When the other way round", "s"});
    for (std::size_t i = 3; i < 6; ++i) g.edges[i].context = "ctx-2";
    CHECK(aggregate(g).winners.at("ctx-2") == "v-01");
    AggregationConfig config;
    config.scope = RankingScope::per_context;
    const auto& agg = aggregate(g, config);
    CHECK(agg.winners.at("ctx-1") == "v-01");
    CHECK(agg.winners.at("ctx-2") == "v-06");
}

TEST_CASE("cycles are broken across contexts") {
    auto g = oracle::make_graph(2, {{0, 1}, {1, 0}});
    g.contexts.push_back({"ctx-2", "When the other way round", "s"});
    g.edges[1].context = "ctx-2";
    CHECK(aggregate(g).removed_cycle_edges.size() == 1);
}

TEST_CASE("rank_of orders by score then id") {
    std::map<std::string, double> s = {{"a", 0.2}, {"b", 0.5}, {"c", 0.2}};
    CHECK(rank_of("b", {"a", "b", "c"}, s) == 1);
    CHECK(rank_of("a", {"a", "b", "c"}, s) == 2);
    CHECK(rank_of("c", {"a", "b", "c"}, s) == 3);
    CHECK(rank_of("d", {"a", "d"}, s) == 2);
    CHECK_THROWS_AS(rank_of("x", {"a"}, s), NotFound);
}

TEST_CASE("alignment target: one record per effective edge, closure matches reachability") {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 150; ++i) {
        auto d = oracle::random_digraph(rng, 8);
        auto g = oracle::make_graph(d.n, d.edges);
        std::uniform_int_distribution<int> w(0, 6), nw(0, 3);
        for (auto& e : g.edges) e.tallies = {w(rng), nw(rng), 0};
        aggregate(g);
        auto direct = export_alignment_target(g, false);
        auto eff = effective_edges(g);
        REQUIRE(direct.size() == eff.size());
        std::set<std::string> ids;
        for (const auto& r : direct) {
            CHECK_FALSE(r.transitive);
            CHECK(r.provenance.size() == 1);
            ids.insert(r.provenance.front());
        }
        CHECK(ids.size() == eff.size());

        oracle::EdgeList live;
        for (const auto* e : eff) live.emplace_back(std::stoul(e->from_value.substr(2)), std::stoul(e->to_value.substr(2)));
        auto reach = oracle::reachability(d.n, live);
        std::set<std::pair<std::string, std::string>> expected, got;
        std::set<std::pair<std::string, std::string>> direct_pairs;
        for (auto [a, b] : live) direct_pairs.emplace(oracle::node_id(a), oracle::node_id(b));
        for (std::size_t a = 0; a < d.n; ++a)
            for (std::size_t b = 0; b < d.n; ++b)
                if (a != b && reach[a][b]) expected.emplace(oracle::node_id(a), oracle::node_id(b));
        auto full = export_alignment_target(g, true);
        for (const auto& r : full) {
            got.emplace(r.dispreferred, r.preferred);
            if (r.transitive) {
                CHECK_FALSE(direct_pairs.count({r.dispreferred, r.preferred}));
                CHECK(r.provenance.size() >= 2);
            }
        }
        CHECK(got == expected);
        CHECK(full.size() == expected.size());
    }
}

TEST_CASE("transitive provenance follows a shortest path") {
    auto g = oracle::make_graph(4, {{0, 1}, {1, 2}, {2, 3}, {0, 2}});
    aggregate(g);
    auto records = export_alignment_target(g, true);
    for (const auto& r : records) {
        if (r.dispreferred == "v-00" && r.preferred == "v-03") {
            CHECK(r.provenance == std::vector<std::string>{"edge-0004", "edge-0003"});
        }
    }
    auto line = to_jsonl({records.front()});
    CHECK(line.back() == '\n');
    CHECK(nlohmann::json::parse(line)["preferred"] == records.front().preferred);
}

namespace {

std::unique_ptr<Gateway> context_gateway() {
    return Gateway::scripted([](const ChatRequest& r) -> std::string {
        const auto& u = r.messages.back().content;
        if (u.find("homework") != std::string::npos) {
            return R"({"contexts": ["when motivation is an issue", "When Motivation is an issue.", "When a child is tired"]})";
        }
        if (u.find("weather") != std::string::npos) return R"({"contexts": ["When talking about the weather"]})";
        if (u.find("garbage") != std::string::npos) return "no idea";
        return R"({"contexts": []})";
    });
}

}  // namespace

TEST_CASE("context derivation normalizes and deduplicates") {
    auto gw = context_gateway();
    auto c = derive_contexts(*gw, "My kid will not do homework");
    CHECK(c == std::vector<std::string>{"When motivation is an issue", "When a child is tired"});
    CHECK_THROWS_AS(derive_contexts(*gw, "garbage"), GatewayError);
    CHECK_THROWS_AS(derive_contexts(*gw, "nothing"), GatewayError);
    CHECK_THROWS_AS(derive_contexts(*gw, " "), InvalidArgument);
}

TEST_CASE("retrieval returns the matched context's winner or no guidance") {
    auto gw = context_gateway();
    auto g = oracle::make_graph(3, {{0, 1}, {2, 1}});
    g.contexts[0].text = "When motivation is an issue";
    aggregate(g);

    auto hit = retrieve_value_for_state(*gw, "My kid will not do homework", g);
    CHECK(hit.guidance);
    CHECK(hit.context_id == "ctx-1");
    CHECK(hit.winner_id == "v-01");
    CHECK(hit.similarity == doctest::Approx(1.0));

    auto miss = retrieve_value_for_state(*gw, "Let us chat about the weather", g);
    CHECK_FALSE(miss.guidance);
    CHECK(miss.winner_id.empty());
    CHECK_FALSE(miss.rationale.empty());

    CHECK_FALSE(match_context(*gw, "When motivation is an issue", {}).has_value());
    auto exact = match_context(*gw, "when motivation is an issue.", g.contexts);
    REQUIRE(exact);
    CHECK(exact->context_id == "ctx-1");
}

TEST_CASE("aggregation json round trip") {
    auto g = oracle::make_graph(3, {{0, 1}, {1, 2}, {2, 0}});
    const auto& agg = aggregate(g);
    nlohmann::json j = agg;
    CHECK(j.get<Aggregation>() == agg);
}
