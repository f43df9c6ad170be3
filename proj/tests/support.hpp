#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "json.hpp"
#include "slr/config.hpp"
#include "slr/orchestrator.hpp"
#include "slr/service.hpp"

namespace slr::testing {

inline std::filesystem::path source_dir() {
    return SLR_SOURCE_DIR;
}

inline std::filesystem::path fixtures_dir() {
    return source_dir() / "fixtures";
}

inline std::filesystem::path demo_scenario() {
    return fixtures_dir() / "scenarios" / "paper_demo.json";
}

inline std::filesystem::path demo_protocol_path() {
    return fixtures_dir() / "demo_protocol.json";
}


/// Fresh directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path()
                / ("slr-test-" + std::to_string(::getpid()) + "-" + std::to_string(++counter)
                   + "-" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ignored;
        std::filesystem::remove_all(path_, ignored);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;

    const std::filesystem::path &path() const { return path_; }
    std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};


inline std::string slurp(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}


inline void spit(const std::filesystem::path &path, const std::string &content) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream(path, std::ios::binary) << content;
}


inline nlohmann::json load_json(const std::filesystem::path &path) {
    return nlohmann::json::parse(slurp(path));
}


/// Configuration for offline runs against the fixture provider.
inline ServiceConfig fixture_config(const std::filesystem::path &root) {
    ServiceConfig config;
    config.store.root = root;
    config.store.fixtures = fixtures_dir();
    config.enabled_providers = { "fixture" };
    return config;
}


/// Orchestrator config for `scenario` with in-memory scenario JSON written to
/// a file under root so the model id is content-derived like the CLI.
inline OrchestratorConfig mock_config(const std::filesystem::path &root, const std::filesystem::path &scenario,
                                      const ServiceHooks &hooks = {}) {
    return make_orchestrator_config(fixture_config(root), { "mock", scenario }, hooks);
}


/// The ten demo candidates in fixture order.
inline std::vector<PaperRecord> fixture_records() {
    const auto corpus = load_json(fixtures_dir() / "dedup_corpus.json");
    std::vector<PaperRecord> records;
    for (const auto &item : corpus["records"])
        if (item["source_provider"] == "fixture")
            records.push_back(item.get<PaperRecord>());
    return records;
}


inline ReviewProtocol demo_protocol() {
    return load_json(demo_protocol_path()).get<ReviewProtocol>();
}


/// All files of a run directory keyed by relative path.
inline std::map<std::string, std::string> snapshot_tree(const std::filesystem::path &dir) {
    std::map<std::string, std::string> files;
    for (const auto &entry : std::filesystem::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file())
            files[std::filesystem::relative(entry.path(), dir).string()] = slurp(entry.path());
    }
    return files;
}


/// Rule-list scenario builder.
inline nlohmann::json rule(const std::string &template_id, nlohmann::json responses, nlohmann::json when = nullptr,
                           bool repeat = true) {
    nlohmann::json r{ { "template", template_id }, { "responses", std::move(responses) }, { "repeat", repeat } };
    if (not when.is_null())
        r["when"] = std::move(when);
    return r;
}


/// The demo scenario with `extra` rules placed first so they take precedence.
inline nlohmann::json demo_scenario_with(const std::vector<nlohmann::json> &extra) {
    auto scenario = load_json(demo_scenario());
    auto rules = nlohmann::json::array();
    for (const auto &r : extra)
        rules.push_back(r);
    for (const auto &r : scenario["rules"])
        rules.push_back(r);
    scenario["rules"] = rules;
    return scenario;
}


inline std::filesystem::path write_scenario(const TempDir &dir, const std::string &name, const nlohmann::json &scenario) {
    const auto path = dir / (name + ".json");
    spit(path, scenario.dump(2));
    return path;
}

} // namespace slr::testing
