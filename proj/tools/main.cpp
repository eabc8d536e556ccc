// moralgraph: serve the API, run simulations, aggregate, export and report.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "moralgraph/analytics.hpp"
#include "moralgraph/api.hpp"
#include "moralgraph/engine.hpp"
#include "moralgraph/graph_io.hpp"
#include "moralgraph/simulation.hpp"

namespace mg = moralgraph;
using nlohmann::json;

namespace {

struct GatewayOptions {
    std::string mode = "replay";
    std::string fixtures;
    std::string endpoint;
    std::string embedding_endpoint;
    std::string token;
    std::string model = "gpt-4o";
    std::string embedding_model = "text-embedding-3-small";
    std::size_t embedding_dimension = 1536;
};

void add_gateway_options(CLI::App* cmd, GatewayOptions& o) {
    cmd->add_option("--gateway-mode", o.mode, "replay, live or record")
        ->envname("GATEWAY_MODE")
        ->check(CLI::IsMember({"replay", "live", "record"}));
    cmd->add_option("--fixtures", o.fixtures, "Fixture directory (read in replay mode, written in record mode)")
        ->envname("FIXTURES_DIR");
    cmd->add_option("--endpoint", o.endpoint, "Chat completions URL")->envname("GATEWAY_ENDPOINT");
    cmd->add_option("--embedding-endpoint", o.embedding_endpoint, "Embeddings URL; feature hashing when empty")
        ->envname("GATEWAY_EMBEDDING_ENDPOINT");
    cmd->add_option("--model", o.model, "Chat model name")->envname("GATEWAY_MODEL");
    cmd->add_option("--embedding-model", o.embedding_model, "Embedding model name");
    cmd->add_option("--embedding-dimension", o.embedding_dimension, "Embedding size");
    // The token is only ever read from the environment so it does not end up in shell history.
    if (const char* t = std::getenv("GATEWAY_TOKEN")) o.token = t;
}

std::unique_ptr<mg::Gateway> make_gateway(const GatewayOptions& o) {
    mg::GatewayConfig config;
    if (o.mode == "replay") {
        if (o.fixtures.empty()) {
            return std::make_unique<mg::Gateway>(config, std::make_unique<mg::ReplayBackend>(mg::FixtureStore{}), nullptr);
        }
        return mg::Gateway::replay(o.fixtures, config);
    }
    if (o.endpoint.empty()) throw mg::InvalidArgument("live gateway needs --endpoint or GATEWAY_ENDPOINT");
    if (o.mode == "record") {
        if (o.fixtures.empty()) throw mg::InvalidArgument("record mode needs --fixtures or FIXTURES_DIR");
        config.record_dir = o.fixtures;
    }
    std::unique_ptr<mg::Embedder> embedder;
    if (!o.embedding_endpoint.empty()) {
        embedder = std::make_unique<mg::HttpEmbedder>(mg::HttpEndpoint{o.embedding_endpoint, o.embedding_model, o.token},
                                                      o.embedding_dimension);
    }
    return std::make_unique<mg::Gateway>(
        config, std::make_unique<mg::HttpChatBackend>(mg::HttpEndpoint{o.endpoint, o.model, o.token}), std::move(embedder));
}

std::vector<mg::Event> read_events(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw mg::NotFound("cannot open " + path);
    std::vector<mg::Event> events;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) events.push_back(mg::parse_event(line));
    return events;
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw mg::Error("cannot write " + path);
    out << body;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Moral graph elicitation engine"};
    app.require_subcommand(1);

    std::string deployment_path;
    std::string storage_dir;
    GatewayOptions gw;
    auto add_store = [&](CLI::App* cmd) {
        cmd->add_option("--deployment", deployment_path, "Deployment JSON (scenarios and thresholds)")->required();
        cmd->add_option("--storage-dir", storage_dir, "Event log and snapshot directory")
            ->envname("MORALGRAPH_STORAGE_DIR")
            ->required();
    };

    auto* serve = app.add_subcommand("serve", "Run the HTTP API");
    std::string host = "127.0.0.1";
    int port = 8080;
    add_store(serve);
    add_gateway_options(serve, gw);
    serve->add_option("--host", host);
    serve->add_option("--port", port);

    auto* simulate = app.add_subcommand("simulate", "Run a seeded synthetic population offline");
    std::string sim_config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> participants;
    simulate->add_option("--config", sim_config, "Population config JSON; defaults to the referral chain");
    simulate->add_option("--seed", seed);
    simulate->add_option("--participants", participants);
    simulate->add_option("--out", out_dir, "Run directory")->required();
    simulate->add_flag("--print-config", "Print the effective config and exit");

    auto* aggregate = app.add_subcommand("aggregate", "Aggregate the stored graph and record the run");
    add_store(aggregate);

    auto* exporter = app.add_subcommand("export", "Write the graph and the alignment target");
    std::string graph_out;
    std::string target_out;
    bool transitive = false;
    add_store(exporter);
    exporter->add_option("--graph", graph_out, "Graph JSON output");
    exporter->add_option("--alignment-target", target_out, "Alignment target JSONL output");
    exporter->add_flag("--transitive", transitive, "Include reachability records");

    auto* report = app.add_subcommand("report", "Trajectory, survey, generalizability and ideology tables");
    std::string target;
    std::size_t stride = 100;
    bool with_ideology = false;
    add_store(report);
    add_gateway_options(report, gw);
    report->add_option("--target", target, "Card id for the rank trajectory");
    report->add_option("--stride", stride, "Vote events between trajectory steps");
    report->add_option("--out", out_dir, "Directory for JSON and CSV tables");
    report->add_flag("--ideology", with_ideology, "Rate opening messages and emit the robustness table");

    auto* replay = app.add_subcommand("replay", "Fold an event log and print the derived graph");
    std::string events_path;
    replay->add_option("--deployment", deployment_path)->required();
    replay->add_option("--events", events_path, "events.jsonl")->required();
    replay->add_option("--graph", graph_out, "Write the graph export here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*simulate) {
            mg::SyntheticPopulationConfig config = mg::referral_chain_config();
            if (!sim_config.empty()) {
                std::ifstream in(sim_config);
                if (!in) throw mg::NotFound("cannot open " + sim_config);
                config = json::parse(in).get<mg::SyntheticPopulationConfig>();
            }
            if (seed) config.seed = *seed;
            if (participants) config.n_participants = *participants;
            if (simulate->count("--print-config")) {
                std::cout << json(config).dump(2) << "\n";
                return 0;
            }
            auto result = mg::run_simulation(config);
            mg::write_run_directory(result, out_dir);
            std::cout << "participants=" << result.agents.size() << " completed=" << result.completed_sessions
                      << " values=" << result.graph.values.size() << " edges=" << result.graph.edges.size();
            if (result.trajectory) {
                const auto& last = result.trajectory->steps.back();
                std::cout << " expert=" << result.expert_card << " pagerank_rank=" << last.pagerank_rank
                          << " direct_vote_rank=" << last.direct_vote_rank;
            }
            std::cout << "\n";
            return 0;
        }
        if (*replay) {
            auto deployment = mg::load_deployment_file(deployment_path);
            mg::State state(deployment.scenarios);
            state.apply_all(read_events(events_path));
            auto graph = state.graph();
            mg::aggregate(graph, deployment.aggregation);
            if (!graph_out.empty()) write_file(graph_out, mg::export_graph_text(graph));
            std::cout << "events=" << state.next_offset << " values=" << graph.values.size()
                      << " edges=" << graph.edges.size() << " contexts=" << graph.contexts.size() << "\n";
            return 0;
        }

        auto deployment = mg::load_deployment_file(deployment_path);
        auto gateway = make_gateway(gw);
        mg::SystemClock clock;
        mg::Engine engine(deployment, *gateway, clock, storage_dir);

        if (*serve) {
            mg::Api api(engine);
            std::cerr << "listening on " << host << ":" << port << "\n";
            api.serve(host, port);
        } else if (*aggregate) {
            auto graph = engine.aggregate();
            for (const auto& [ctx, winner] : graph.aggregation->winners) {
                std::cout << ctx << "\t" << winner << "\t" << graph.find_value(winner)->title << "\n";
            }
        } else if (*exporter) {
            auto graph = engine.graph();
            if (!graph_out.empty()) write_file(graph_out, mg::export_graph_text(graph));
            auto records = mg::to_jsonl(mg::export_alignment_target(graph, transitive));
            if (target_out.empty()) std::cout << records;
            else write_file(target_out, records);
        } else if (*report) {
            const auto& events = engine.events();
            auto state = engine.snapshot();
            json out = {{"survey", mg::to_json(mg::survey_report(state.surveys))},
                        {"generalizability", mg::to_json(mg::generalizability_report(events, deployment.scenarios))}};
            std::optional<mg::RankTrajectory> trajectory;
            if (!target.empty()) {
                trajectory = mg::scaling_trajectory(events, deployment.scenarios, target, deployment.aggregation, stride);
                out["trajectory"] = mg::to_json(*trajectory);
            }
            std::vector<mg::RobustnessRow> robustness;
            if (with_ideology) {
                robustness = mg::robustness_table(*gateway, state);
                out["robustness"] = mg::to_json(robustness);
            }
            if (out_dir.empty()) {
                std::cout << out.dump(2) << "\n";
            } else {
                std::filesystem::create_directories(out_dir);
                write_file(out_dir + "/report.json", out.dump(2) + "\n");
                write_file(out_dir + "/survey.csv", mg::survey_csv(mg::survey_report(state.surveys)));
                if (trajectory) write_file(out_dir + "/trajectory.csv", mg::trajectory_csv(*trajectory));
                if (with_ideology) write_file(out_dir + "/robustness.csv", mg::robustness_csv(robustness));
            }
        }
    } catch (const mg::SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
