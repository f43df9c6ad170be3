#pragma once

#include <algorithm>
#include <array>
#include <random>
#include <set>
#include <sstream>

#include "slr/synthesis.hpp"
#include "support.hpp"

namespace slr::testing {

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path &path) {
    std::vector<nlohmann::json> lines;
    std::istringstream in(slurp(path));
    for (std::string line; std::getline(in, line);)
        if (not line.empty())
            lines.push_back(nlohmann::json::parse(line));
    return lines;
}


inline void write_jsonl(const std::filesystem::path &path, const std::vector<nlohmann::json> &lines) {
    std::string out;
    for (const auto &line : lines)
        out += line.dump() + "\n";
    spit(path, out);
}


// Independent recount straight from the JSON lines.
inline std::array<long, 5> recount(const std::vector<nlohmann::json> &candidates,
                                   const std::vector<nlohmann::json> &decisions,
                                   const std::vector<nlohmann::json> &extractions) {
    std::map<std::pair<std::string, std::string>, nlohmann::json> machine, human;
    for (const auto &d : decisions) {
        auto &slot = d["actor"] == "human" ? human : machine;
        slot[{ d["record_id"].get<std::string>(), d["stage"].get<std::string>() }] = d;
    }
    auto verdict = [&](const std::string &id, const std::string &stage) -> std::string {
        if (human.count({ id, stage }))
            return human[{ id, stage }]["verdict"];
        if (machine.count({ id, stage }))
            return machine[{ id, stage }]["verdict"];
        return "missing";
    };
    std::set<std::string> extracted;
    for (const auto &e : extractions)
        extracted.insert(e["record_id"].get<std::string>());
    std::array<long, 5> counts{ 0, static_cast<long>(candidates.size()), 0, 0, 0 };
    for (const auto &c : candidates) {
        const std::string id = c["record_id"];
        counts[0] += static_cast<long>(c["provenance"].size());
        if (verdict(id, "title") != "include")
            continue;
        ++counts[2];
        if (verdict(id, "abstract") != "include")
            continue;
        ++counts[3];
        if (extracted.count(id))
            ++counts[4];
    }
    return counts;
}


/// Random candidates with 1 to 3 provenance entries, one to three decisions
/// per record and stage from mixed actors, shuffled, and a random subset
/// extracted.
inline RunSnapshot random_funnel_snapshot(std::mt19937 &rng, int round) {
    std::uniform_int_distribution<int> coin(0, 1), count(0, 25), extra(0, 2), sway(0, 3);
    const Verdict verdicts[] = { Verdict::include, Verdict::exclude, Verdict::needs_judge };
    const Actor actors[] = { Actor::rule, Actor::model, Actor::human };
    RunSnapshot snapshot;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
        PaperRecord record;
        record.title = "Paper " + std::to_string(round) + "." + std::to_string(i);
        record.record_id = make_record_id(record.title, std::nullopt);
        for (int p = 0; p <= extra(rng); ++p)
            record.provenance.push_back("src:" + std::to_string(p));
        snapshot.candidates.push_back(record);
    }
    int next = 0;
    auto decide = [&](const PaperRecord &record, ScreeningStage stage) {
        for (int k = 0; k <= extra(rng); ++k) {
            snapshot.decisions.push_back({ "dec_" + std::to_string(++next), record.record_id, stage,
                                           verdicts[sway(rng) % 3], actors[sway(rng) % 3], "r", "t" });
        }
    };
    for (const auto &record : snapshot.candidates)
        decide(record, ScreeningStage::title);
    // Abstract decisions for everyone keep the snapshot complete whatever
    // the title outcome after shuffling.
    for (const auto &record : snapshot.candidates)
        decide(record, ScreeningStage::abstract);
    std::shuffle(snapshot.decisions.begin(), snapshot.decisions.end(), rng);
    for (const auto &record : snapshot.candidates)
        if (coin(rng))
            snapshot.extractions.push_back({ record.record_id, "s", {} });
    return snapshot;
}

} // namespace slr::testing
