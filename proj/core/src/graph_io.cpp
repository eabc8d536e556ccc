#include "moralgraph/graph_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "moralgraph/aggregation.hpp"
#include "moralgraph/errors.hpp"

namespace moralgraph {

using nlohmann::json;

namespace {

const char* const kSections[] = {"scenarios", "contexts", "participants", "values", "edges"};

struct Checker {
    std::vector<std::string> problems;

    bool field(const json& obj, const std::string& path, const char* key, bool (json::*is)() const noexcept,
               const char* type) {
        if (!obj.contains(key)) {
            problems.push_back(path + "/" + key + ": missing");
            return false;
        }
        if (!(obj.at(key).*is)()) {
            problems.push_back(path + "/" + key + ": expected " + type);
            return false;
        }
        return true;
    }

    bool string(const json& obj, const std::string& path, const char* key) {
        return field(obj, path, key, &json::is_string, "string");
    }
};

}  // namespace

json export_graph(const MoralGraph& graph) {
    json edges = json::array();
    json omissions = json::array();
    for (const auto& e : graph.edges) (e.status == EdgeStatus::omitted ? omissions : edges).push_back(e);
    json doc = {{"format_version", kGraphFormatVersion},
                {"scenarios", graph.scenarios},
                {"contexts", graph.contexts},
                {"participants", graph.participants},
                {"values", graph.values},
                {"edges", edges},
                {"omissions", omissions}};
    if (graph.aggregation) {
        json agg = *graph.aggregation;
        for (auto& [key, value] : agg.items()) doc[key] = value;
    }
    return doc;
}

std::string export_graph_text(const MoralGraph& graph) { return export_graph(graph).dump(2) + "\n"; }

MoralGraph import_graph(const json& doc) {
    Checker c;
    if (!doc.is_object()) throw SchemaError({"/: expected object"});
    if (!doc.contains("format_version") || !doc.at("format_version").is_number_integer()) {
        c.problems.push_back("/format_version: expected integer");
    } else if (doc.at("format_version").get<int>() != kGraphFormatVersion) {
        c.problems.push_back("/format_version: unsupported version " + doc.at("format_version").dump());
    }
    for (const char* section : kSections) {
        if (!doc.contains(section)) {
            c.problems.push_back(std::string("/") + section + ": missing section");
        } else if (!doc.at(section).is_array()) {
            c.problems.push_back(std::string("/") + section + ": expected array");
        }
    }
    if (!c.problems.empty()) throw SchemaError(c.problems);

    auto each = [&](const char* section, auto&& check) {
        const auto& arr = doc.at(section);
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = std::string("/") + section + "/" + std::to_string(i);
            if (!arr[i].is_object()) {
                c.problems.push_back(path + ": expected object");
                continue;
            }
            check(arr[i], path);
        }
    };
    each("scenarios", [&](const json& o, const std::string& p) {
        c.string(o, p, "id");
        c.string(o, p, "prompt");
    });
    each("contexts", [&](const json& o, const std::string& p) {
        c.string(o, p, "id");
        c.string(o, p, "text");
    });
    each("participants", [&](const json& o, const std::string& p) { c.string(o, p, "id"); });
    std::set<std::string> value_ids, context_ids;
    each("values", [&](const json& o, const std::string& p) {
        if (c.string(o, p, "id")) value_ids.insert(o.at("id").get<std::string>());
        c.string(o, p, "title");
        c.string(o, p, "summary");
        c.field(o, p, "policies", &json::is_array, "array");
    });
    for (const auto& ctx : doc.at("contexts"))
        if (ctx.is_object() && ctx.contains("id") && ctx.at("id").is_string()) context_ids.insert(ctx.at("id").get<std::string>());
    if (doc.contains("omissions") && !doc.at("omissions").is_array()) c.problems.push_back("/omissions: expected array");
    auto edge_check = [&](bool omitted) {
        return [&, omitted](const json& o, const std::string& p) {
            c.string(o, p, "id");
            for (const char* end : {"from_value", "to_value"}) {
                if (c.string(o, p, end) && !value_ids.count(o.at(end).get<std::string>())) {
                    c.problems.push_back(p + "/" + end + ": unknown value " + o.at(end).get<std::string>());
                }
            }
            if (c.string(o, p, "context") && !context_ids.count(o.at("context").get<std::string>())) {
                c.problems.push_back(p + "/context: unknown context " + o.at("context").get<std::string>());
            }
            if (o.contains("status") && o.at("status").is_string() && (o.at("status") == "omitted") != omitted) {
                c.problems.push_back(p + (omitted ? "/status: expected omitted" : "/status: omitted edges belong in /omissions"));
            }
        };
    };
    each("edges", edge_check(false));
    if (doc.contains("omissions") && doc.at("omissions").is_array()) each("omissions", edge_check(true));
    const bool aggregated = doc.contains("scores");
    if (aggregated) {
        c.field(doc, "", "scores", &json::is_object, "object");
        c.field(doc, "", "winners", &json::is_object, "object");
        c.field(doc, "", "removed_cycle_edges", &json::is_array, "array");
        c.field(doc, "", "acceptance", &json::is_object, "object");
        c.field(doc, "", "pagerank", &json::is_object, "object");
    }
    if (!c.problems.empty()) throw SchemaError(c.problems);

    MoralGraph g;
    try {
        doc.at("scenarios").get_to(g.scenarios);
        doc.at("contexts").get_to(g.contexts);
        doc.at("participants").get_to(g.participants);
        doc.at("values").get_to(g.values);
        doc.at("edges").get_to(g.edges);
        if (doc.contains("omissions")) {
            for (const auto& o : doc.at("omissions")) g.edges.push_back(o.get<WisdomEdge>());
            std::sort(g.edges.begin(), g.edges.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
        }
        if (aggregated) g.aggregation = doc.get<Aggregation>();
    } catch (const json::exception& e) {
        throw SchemaError({std::string("/: ") + e.what()});
    }
    return g;
}

MoralGraph load_graph_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("cannot open graph document " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError({"/: " + std::string(e.what())});
    }
    return import_graph(doc);
}

}  // namespace moralgraph
