#pragma once

// JSONL readers/writers for datasets and group assignments: a header record
// on the first line, then one flat record per example. nlohmann::json keeps
// object keys sorted, so serialization is byte-deterministic.

#include <fstream>
#include <string>

#include <json.hpp>

#include "data.hpp"
#include "grouping.hpp"

namespace interpoll {

inline void save_dataset(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("save_dataset: cannot open ", path, " for writing");
    nlohmann::json header{{"kind", "dataset_header"},
                          {"vocab_size", d.vocab_size},
                          {"num_classes", d.num_classes},
                          {"split", split_name(d.split)},
                          {"provenance", d.provenance}};
    out << header.dump() << "\n";
    for (const Example& ex : d.examples) {
        nlohmann::json rec{{"id", ex.id}, {"tokens", ex.tokens}, {"label", ex.label}};
        if (ex.group) rec["group"] = group_name(*ex.group);
        if (ex.shortcut_aligned) rec["shortcut_aligned"] = *ex.shortcut_aligned;
        out << rec.dump() << "\n";
    }
    if (!out) fail("save_dataset: write to ", path, " failed");
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("load_dataset: cannot open ", path);
    std::string line;
    if (!std::getline(in, line)) fail("load_dataset: ", path, " is empty");
    Dataset d;
    try {
        const auto header = nlohmann::json::parse(line);
        if (header.value("kind", "") != "dataset_header")
            fail("load_dataset: ", path, " does not start with a dataset header");
        d.vocab_size = header.at("vocab_size").get<std::size_t>();
        d.num_classes = header.at("num_classes").get<std::size_t>();
        d.split = split_from_name(header.at("split").get<std::string>());
        d.provenance = header.at("provenance").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail("load_dataset: ", path, ": bad header: ", e.what());
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto rec = nlohmann::json::parse(line);
            Example ex;
            ex.id = rec.at("id").get<std::int64_t>();
            ex.tokens = rec.at("tokens").get<std::vector<std::int32_t>>();
            ex.label = rec.at("label").get<std::int32_t>();
            if (rec.contains("group")) {
                const auto g = rec.at("group").get<std::string>();
                if (g == "majority") ex.group = Group::majority;
                else if (g == "minority") ex.group = Group::minority;
                else fail("unknown group tag '", g, "'");
            }
            if (rec.contains("shortcut_aligned"))
                ex.shortcut_aligned = rec.at("shortcut_aligned").get<bool>();
            d.examples.push_back(std::move(ex));
        } catch (const nlohmann::json::exception& e) {
            fail("load_dataset: ", path, " line ", line_no, ": ", e.what());
        }
    }
    return d;
}

inline void save_assignment(const GroupAssignment& a, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("save_assignment: cannot open ", path, " for writing");
    nlohmann::json header{{"kind", "assignment_header"}, {"source", a.source}};
    out << header.dump() << "\n";
    for (const auto& [id, minority] : a.flags) {
        nlohmann::json rec{{"id", id}, {"inferred_minority", minority}};
        out << rec.dump() << "\n";
    }
    if (!out) fail("save_assignment: write to ", path, " failed");
}

inline GroupAssignment load_assignment(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("load_assignment: cannot open ", path);
    std::string line;
    if (!std::getline(in, line)) fail("load_assignment: ", path, " is empty");
    GroupAssignment a;
    try {
        const auto header = nlohmann::json::parse(line);
        if (header.value("kind", "") != "assignment_header")
            fail("load_assignment: ", path, " does not start with an assignment header");
        a.source = header.at("source").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail("load_assignment: ", path, ": bad header: ", e.what());
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto rec = nlohmann::json::parse(line);
            a.flags.emplace(rec.at("id").get<std::int64_t>(),
                            rec.at("inferred_minority").get<bool>());
        } catch (const nlohmann::json::exception& e) {
            fail("load_assignment: ", path, " line ", line_no, ": ", e.what());
        }
    }
    return a;
}

}  // namespace interpoll
