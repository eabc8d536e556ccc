// Writes the vendored model fixtures, or checks that the vendored copy is current.
//
//   generate_fixtures <dir>           write records into <dir>
//   generate_fixtures --check <dir>   regenerate into a scratch directory and compare

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "fixture_inputs.hpp"
#include "moralgraph/analytics.hpp"

namespace fs = std::filesystem;
namespace mg = moralgraph;

namespace {

std::string judge(const mg::ScriptedBackend::Responder& catalog, const mg::ChatRequest& r) {
    const auto& user = r.messages.back().content;
    switch (r.purpose) {
        case mg::PurposeTag::ideology_judge:
            if (user == fixture_inputs::kIdeologicalMessage) return "5";
            if (user == fixture_inputs::kNeutralMessage) return "1";
            if (user == fixture_inputs::kEvasiveMessage) return "It is hard to say.";
            break;
        case mg::PurposeTag::experience_judge:
            return user.find(fixture_inputs::kExperienceMessage) != std::string::npos ? "Yes" : "No";
        case mg::PurposeTag::story_chain_step:
            return catalog(r);
        default:
            break;
    }
    throw mg::GatewayError(mg::GatewayError::Kind::fixture_miss, "no fixture answer for this request");
}

void generate(const fs::path& dir) {
    mg::GatewayConfig config;
    config.record_dir = dir;
    auto catalog = mg::make_scripted_responder(fixture_inputs::catalog());
    auto gw = mg::Gateway::scripted([catalog](const mg::ChatRequest& r) { return judge(catalog, r); }, config);

    mg::StoryEngine stories(*gw);
    stories.generate_story(fixture_inputs::story_from(), fixture_inputs::story_to(), fixture_inputs::story_context(),
                           "story-000001");
    mg::rate_ideology(*gw, fixture_inputs::kIdeologicalMessage);
    mg::rate_ideology(*gw, fixture_inputs::kNeutralMessage);
    try {
        mg::rate_ideology(*gw, fixture_inputs::kEvasiveMessage);
    } catch (const mg::GatewayError&) {
        // The evasive answer is recorded so replay reproduces the refusal.
    }
    for (bool with : {true, false}) {
        mg::detect_experience(*gw, fixture_inputs::experience_session(with), fixture_inputs::experience_description());
    }
}

std::map<std::string, std::string> contents(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        out[e.path().filename().string()] = s.str();
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc == 2) {
        fs::create_directories(argv[1]);
        generate(argv[1]);
        return 0;
    }
    if (argc == 3 && std::string(argv[1]) == "--check") {
        auto scratch = fs::temp_directory_path() / ("mg-fixtures-" + std::to_string(::getpid()));
        fs::remove_all(scratch);
        generate(scratch);
        auto fresh = contents(scratch);
        auto vendored = contents(argv[2]);
        fs::remove_all(scratch);
        int stale = 0;
        for (const auto& [name, body] : fresh) {
            auto it = vendored.find(name);
            if (it == vendored.end() || it->second != body) {
                std::cerr << (it == vendored.end() ? "missing: " : "differs: ") << name << "\n";
                ++stale;
            }
        }
        for (const auto& [name, body] : vendored) {
            if (!fresh.count(name)) {
                std::cerr << "extra: " << name << "\n";
                ++stale;
            }
        }
        std::cout << fresh.size() << " fixtures, " << stale << " stale\n";
        return stale == 0 ? 0 : 1;
    }
    std::cerr << "usage: generate_fixtures <dir> | generate_fixtures --check <dir>\n";
    return 2;
}
