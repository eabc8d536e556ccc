#include <benchmark/benchmark.h>

#include <random>

#include "moralgraph/aggregation.hpp"
#include "moralgraph/dedup.hpp"
#include "moralgraph/simulation.hpp"

namespace mg = moralgraph;

namespace {

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

EdgeList random_edges(std::size_t n, double density, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(density);
    EdgeList edges;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v)
            if (u != v && keep(rng)) edges.emplace_back(u, v);
    return edges;
}

std::vector<mg::WisdomEdge> wisdom_edges(std::size_t n, double density, std::uint64_t seed) {
    std::vector<mg::WisdomEdge> out;
    int i = 0;
    for (auto [u, v] : random_edges(n, density, seed)) {
        mg::WisdomEdge e;
        e.id = "edge-" + std::to_string(++i);
        e.from_value = "v-" + std::to_string(u);
        e.to_value = "v-" + std::to_string(v);
        e.context = "ctx";
        e.tallies = {3 + i % 7, i % 3, 0};
        e.status = mg::EdgeStatus::accepted;
        out.push_back(std::move(e));
    }
    return out;
}

void BM_PageRank(benchmark::State& state) {
    auto n = static_cast<std::size_t>(state.range(0));
    auto edges = random_edges(n, 4.0 / static_cast<double>(n), 1);
    for (auto _ : state) benchmark::DoNotOptimize(mg::pagerank(n, edges));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_PageRank)->RangeMultiplier(4)->Range(16, 4096)->Complexity();

void BM_BreakCycles(benchmark::State& state) {
    auto n = static_cast<std::size_t>(state.range(0));
    auto edges = wisdom_edges(n, 3.0 / static_cast<double>(n), 2);
    for (auto _ : state) benchmark::DoNotOptimize(mg::detect_and_break_cycles(edges));
}
BENCHMARK(BM_BreakCycles)->RangeMultiplier(4)->Range(16, 1024);

void BM_Canonicalize(benchmark::State& state) {
    auto config = mg::referral_chain_config();
    auto gw = mg::make_simulation_gateway(config);
    std::vector<mg::ValuesCard> corpus;
    for (int i = 0; i < state.range(0); ++i) {
        const auto& a = config.archetypes[static_cast<std::size_t>(i) % config.archetypes.size()];
        mg::ValuesCard c;
        c.id = "card-" + std::to_string(i);
        c.title = a.title;
        c.summary = a.summary;
        for (const auto& p : a.policies) c.policies.push_back({p});
        c.origin = {mg::OriginKind::custom, "p-" + std::to_string(i), a.scenario_id, "s-" + std::to_string(i)};
        corpus.push_back(std::move(c));
    }
    for (auto _ : state) {
        mg::Deduplicator d(*gw);
        mg::CanonicalPool pool;
        for (const auto& c : corpus) d.canonicalize(pool, c);
        benchmark::DoNotOptimize(pool.size());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Canonicalize)->Arg(100)->Arg(1000);

void BM_Simulation(benchmark::State& state) {
    auto config = mg::referral_chain_config(1, static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(mg::run_simulation(config).completed_sessions);
}
BENCHMARK(BM_Simulation)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
