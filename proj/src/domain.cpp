#include "slr/domain.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "slr/errors.hpp"
#include "slr/util.hpp"

namespace slr {

using nlohmann::json;

const char *to_string(ReplicationMode mode) {
    return mode == ReplicationMode::paper_faithful ? "paper_faithful" : "extended";
}


const char *to_string(ScreeningStage stage) {
    switch (stage) {
    case ScreeningStage::title:
        return "title";
    case ScreeningStage::abstract:
        return "abstract";
    case ScreeningStage::fulltext:
        return "fulltext";
    }
    return "?";
}


const char *to_string(Verdict verdict) {
    switch (verdict) {
    case Verdict::include:
        return "include";
    case Verdict::exclude:
        return "exclude";
    case Verdict::needs_judge:
        return "needs_judge";
    }
    return "?";
}


const char *to_string(Actor actor) {
    switch (actor) {
    case Actor::rule:
        return "rule";
    case Actor::model:
        return "model";
    case Actor::human:
        return "human";
    }
    return "?";
}


const char *to_string(Rating rating) {
    switch (rating) {
    case Rating::NotSatisfied:
        return "Not Satisfied";
    case Rating::Fair:
        return "Fair";
    case Rating::Satisfactory:
        return "Satisfactory";
    case Rating::Good:
        return "Good";
    case Rating::VeryGood:
        return "Very Good";
    case Rating::Excellent:
        return "Excellent";
    }
    return "?";
}


ReplicationMode parse_replication_mode(std::string_view text) {
    if (text == "paper_faithful")
        return ReplicationMode::paper_faithful;
    if (text == "extended")
        return ReplicationMode::extended;
    throw ValidationError("unknown replication_mode: " + std::string(text));
}


ScreeningStage parse_screening_stage(std::string_view text) {
    if (text == "title")
        return ScreeningStage::title;
    if (text == "abstract")
        return ScreeningStage::abstract;
    if (text == "fulltext")
        return ScreeningStage::fulltext;
    throw ValidationError("unknown screening stage: " + std::string(text));
}


Verdict parse_verdict(std::string_view text) {
    if (text == "include")
        return Verdict::include;
    if (text == "exclude")
        return Verdict::exclude;
    if (text == "needs_judge")
        return Verdict::needs_judge;
    throw ValidationError("unknown verdict: " + std::string(text));
}


Actor parse_actor(std::string_view text) {
    if (text == "rule")
        return Actor::rule;
    if (text == "model")
        return Actor::model;
    if (text == "human")
        return Actor::human;
    throw ValidationError("unknown actor: " + std::string(text));
}


const std::vector<Rating> &all_ratings() {
    static const std::vector<Rating> ratings{ Rating::NotSatisfied, Rating::Fair,     Rating::Satisfactory,
                                              Rating::Good,         Rating::VeryGood, Rating::Excellent };
    return ratings;
}


Rating parse_rating(std::string_view text) {
    static const std::pair<const char *, Rating> NAMES[] = {
        { "NotSatisfied", Rating::NotSatisfied }, { "Fair", Rating::Fair },
        { "Satisfactory", Rating::Satisfactory }, { "Good", Rating::Good },
        { "VeryGood", Rating::VeryGood },         { "Excellent", Rating::Excellent },
    };
    for (const auto rating : all_ratings()) {
        if (text == to_string(rating))
            return rating;
    }
    for (const auto &[name, rating] : NAMES) {
        if (text == name)
            return rating;
    }
    throw UnknownRating("rating must be one of Not Satisfied, Fair, Satisfactory, Good, Very Good, Excellent; got \""
                        + std::string(text) + "\"");
}


namespace {

std::optional<int> parse_year(std::string_view text) {
    const auto trimmed = trim(text);
    if (trimmed.empty())
        return std::nullopt;
    int value = 0;
    const auto [end, error] = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), value);
    if (error != std::errc() or end != trimmed.data() + trimmed.size())
        throw ValidationError("invalid year: " + trimmed);
    return value;
}

} // unnamed namespace


YearRange parse_year_range(std::string_view text) {
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        const auto year = parse_year(text);
        return { year, year };
    }
    YearRange range{ parse_year(text.substr(0, colon)), parse_year(text.substr(colon + 1)) };
    if (range.start and range.end and *range.start > *range.end)
        throw ValidationError("year_range start " + std::to_string(*range.start) + " is after end "
                              + std::to_string(*range.end));
    return range;
}


std::string format_year_range(const YearRange &range) {
    if (range.is_open())
        return "any";
    return (range.start ? std::to_string(*range.start) : std::string()) + "–"
           + (range.end ? std::to_string(*range.end) : std::string());
}


void validate(const ReviewProtocol &protocol) {
    if (trim(protocol.topic).empty())
        throw ValidationError("protocol topic must be non-empty");
    if (protocol.max_records < 1)
        throw ValidationError("max_records must be >= 1");
    if (protocol.year_range.start and protocol.year_range.end and *protocol.year_range.start > *protocol.year_range.end)
        throw ValidationError("year_range start " + std::to_string(*protocol.year_range.start) + " is after end "
                              + std::to_string(*protocol.year_range.end));

    std::set<std::string> ids;
    for (const auto &question : protocol.questions) {
        if (trim(question.id).empty())
            throw ValidationError("research question id must be non-empty");
        if (trim(question.text).empty())
            throw ValidationError("research question " + question.id + " has empty text");
        if (not ids.insert(question.id).second)
            throw ValidationError("duplicate research question id " + question.id);
    }

    std::set<std::string> includes;
    for (const auto &keyword : protocol.criteria.include_keywords)
        includes.insert(normalize_title(keyword));
    for (const auto &keyword : protocol.criteria.exclude_keywords) {
        if (includes.contains(normalize_title(keyword)))
            throw ValidationError("keyword \"" + keyword + "\" is both an include and an exclude keyword");
    }
}


FunnelCounts::FunnelCounts(long identified, long deduplicated, long title_included, long abstract_included,
                           long final_included)
    : identified_(identified), deduplicated_(deduplicated), title_included_(title_included),
      abstract_included_(abstract_included), final_included_(final_included) {
    if (not(identified >= deduplicated and deduplicated >= title_included and title_included >= abstract_included
            and abstract_included >= final_included and final_included >= 0))
        throw ValidationError("funnel counts violate identified >= deduplicated >= title >= abstract >= final >= 0");
}


// ---------------------------------------------------------------------------
// Titles, DOIs, equivalence

namespace {

// Decodes one UTF-8 sequence at `pos`; returns the code point and advances
// `pos`. Invalid sequences yield U+FFFD and consume one byte.
char32_t decode_utf8(std::string_view text, std::size_t &pos) {
    const auto lead = static_cast<unsigned char>(text[pos]);
    std::size_t length = 0;
    char32_t code_point = 0;
    if (lead < 0x80) {
        ++pos;
        return lead;
    } else if ((lead & 0xe0) == 0xc0) {
        length = 2;
        code_point = lead & 0x1f;
    } else if ((lead & 0xf0) == 0xe0) {
        length = 3;
        code_point = lead & 0x0f;
    } else if ((lead & 0xf8) == 0xf0) {
        length = 4;
        code_point = lead & 0x07;
    } else {
        ++pos;
        return 0xfffd;
    }
    if (pos + length > text.size()) {
        ++pos;
        return 0xfffd;
    }
    for (std::size_t i = 1; i < length; ++i) {
        const auto continuation = static_cast<unsigned char>(text[pos + i]);
        if ((continuation & 0xc0) != 0x80) {
            ++pos;
            return 0xfffd;
        }
        code_point = (code_point << 6) | (continuation & 0x3f);
    }
    pos += length;
    return code_point;
}


bool is_unicode_separator(char32_t cp) {
    return (cp >= 0x80 and cp <= 0xbf) or cp == 0xd7 or cp == 0xf7 or (cp >= 0x2000 and cp <= 0x206f)
           or (cp >= 0x2e00 and cp <= 0x2e7f) or (cp >= 0x3000 and cp <= 0x303f) or (cp >= 0xfe30 and cp <= 0xfe4f)
           or (cp >= 0xff01 and cp <= 0xff0f) or (cp >= 0xff1a and cp <= 0xff20) or (cp >= 0xff3b and cp <= 0xff40)
           or (cp >= 0xff5b and cp <= 0xff65) or cp == 0xfeff or cp == 0xfffd;
}

} // unnamed namespace


std::string normalize_title(std::string_view text) {
    std::string normalized;
    bool pending_space = false;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto start = pos;
        const char32_t cp = decode_utf8(text, pos);
        bool keep;
        if (cp < 0x80)
            keep = (cp >= 'a' and cp <= 'z') or (cp >= 'A' and cp <= 'Z') or (cp >= '0' and cp <= '9');
        else
            keep = not is_unicode_separator(cp);

        if (not keep) {
            pending_space = not normalized.empty();
            continue;
        }
        if (pending_space) {
            normalized.push_back(' ');
            pending_space = false;
        }
        if (cp < 0x80)
            normalized.push_back(static_cast<char>(cp >= 'A' and cp <= 'Z' ? cp - 'A' + 'a' : cp));
        else
            normalized.append(text.substr(start, pos - start));
    }
    return normalized;
}


std::optional<std::string> normalize_doi(std::string_view text) {
    auto doi = to_lower_ascii(trim(text));
    for (const std::string_view prefix : { "https://doi.org/", "http://doi.org/", "https://dx.doi.org/",
                                           "http://dx.doi.org/", "doi.org/", "doi:" }) {
        if (doi.starts_with(prefix)) {
            doi.erase(0, prefix.size());
            break;
        }
    }
    doi = trim(doi);
    if (not doi.starts_with("10.") or doi.find('/') == std::string::npos)
        return std::nullopt;
    return doi;
}


std::string make_record_id(std::string_view title, const std::optional<std::string> &doi) {
    std::string key = normalize_title(title);
    key.push_back('\x1f');
    if (doi)
        key += *doi;
    return "rec_" + sha256_hex(key).substr(0, 16);
}


bool records_equivalent(const PaperRecord &a, const PaperRecord &b) {
    if (a.doi and b.doi)
        return *a.doi == *b.doi;
    const auto title_a = normalize_title(a.title);
    if (title_a.empty() or title_a != normalize_title(b.title))
        return false;
    return not a.year or not b.year or *a.year == *b.year;
}


namespace {

template <typename T>
void prefer(T &target, const T &fallback) {
    if (target.empty())
        target = fallback;
}


template <typename T>
void prefer(std::optional<T> &target, const std::optional<T> &fallback) {
    if (not target)
        target = fallback;
}

} // unnamed namespace


PaperRecord merge_record_fields(const PaperRecord &a, const PaperRecord &b) {
    PaperRecord merged = a;
    prefer(merged.record_id, b.record_id);
    prefer(merged.title, b.title);
    prefer(merged.authors, b.authors);
    prefer(merged.url, b.url);
    prefer(merged.venue, b.venue);
    prefer(merged.doi, b.doi);
    prefer(merged.paper_type, b.paper_type);
    prefer(merged.affiliation_country, b.affiliation_country);
    prefer(merged.affiliation_institution, b.affiliation_institution);
    prefer(merged.year, b.year);
    prefer(merged.abstract, b.abstract);
    prefer(merged.fulltext, b.fulltext);
    prefer(merged.source_provider, b.source_provider);
    merged.provenance.insert(merged.provenance.end(), b.provenance.begin(), b.provenance.end());
    return merged;
}


PaperRecord merge_records(const PaperRecord &a, const PaperRecord &b) {
    if (not records_equivalent(a, b))
        throw NotEquivalent("records " + a.record_id + " and " + b.record_id + " are not equivalent");
    return merge_record_fields(a, b);
}


// ---------------------------------------------------------------------------
// JSON

namespace {

const json &require(const json &object, const char *field) {
    if (not object.is_object())
        throw ValidationError(std::string("expected a JSON object holding \"") + field + "\"");
    const auto it = object.find(field);
    if (it == object.end())
        throw ValidationError(std::string("missing field \"") + field + "\"");
    return *it;
}


std::string get_string(const json &object, const char *field) {
    const auto &value = require(object, field);
    if (not value.is_string())
        throw ValidationError(std::string("field \"") + field + "\" must be a string");
    return value.get<std::string>();
}


std::string get_string_or(const json &object, const char *field, std::string fallback) {
    if (not object.contains(field) or object[field].is_null())
        return fallback;
    return get_string(object, field);
}


std::optional<std::string> get_optional_string(const json &object, const char *field) {
    if (not object.contains(field) or object[field].is_null())
        return std::nullopt;
    return get_string(object, field);
}


std::optional<int> get_optional_int(const json &object, const char *field) {
    if (not object.contains(field) or object[field].is_null())
        return std::nullopt;
    if (not object[field].is_number_integer())
        throw ValidationError(std::string("field \"") + field + "\" must be an integer");
    return object[field].get<int>();
}


std::vector<std::string> get_string_list(const json &object, const char *field) {
    if (not object.contains(field) or object[field].is_null())
        return {};
    const auto &value = object[field];
    if (not value.is_array())
        throw ValidationError(std::string("field \"") + field + "\" must be an array of strings");
    std::vector<std::string> items;
    for (const auto &item : value) {
        if (not item.is_string())
            throw ValidationError(std::string("field \"") + field + "\" must be an array of strings");
        items.push_back(item.get<std::string>());
    }
    return items;
}


json optional_to_json(const std::optional<std::string> &value) {
    return value ? json(*value) : json(nullptr);
}

} // unnamed namespace


void to_json(json &j, const YearRange &range) {
    j = json::object();
    j["start"] = range.start ? json(*range.start) : json(nullptr);
    j["end"] = range.end ? json(*range.end) : json(nullptr);
}


void from_json(const json &j, YearRange &range) {
    if (j.is_null()) {
        range = {};
        return;
    }
    if (j.is_string()) {
        range = parse_year_range(j.get<std::string>());
        return;
    }
    if (j.is_array() and j.size() == 2) {
        range.start = j[0].is_null() ? std::nullopt : std::optional<int>(j[0].get<int>());
        range.end = j[1].is_null() ? std::nullopt : std::optional<int>(j[1].get<int>());
        return;
    }
    range.start = get_optional_int(j, "start");
    range.end = get_optional_int(j, "end");
}


void to_json(json &j, const ResearchQuestion &question) {
    j = json{ { "id", question.id }, { "text", question.text }, { "purpose", question.purpose } };
}


void from_json(const json &j, ResearchQuestion &question) {
    question.id = get_string(j, "id");
    question.text = get_string(j, "text");
    question.purpose = get_string_or(j, "purpose", "");
}


void to_json(json &j, const CriteriaSet &criteria) {
    j = json{ { "include_keywords", criteria.include_keywords },
              { "exclude_keywords", criteria.exclude_keywords },
              { "require_abstract", criteria.require_abstract },
              { "language_allowlist", criteria.language_allowlist } };
}


void from_json(const json &j, CriteriaSet &criteria) {
    criteria.include_keywords = get_string_list(j, "include_keywords");
    criteria.exclude_keywords = get_string_list(j, "exclude_keywords");
    criteria.require_abstract = j.contains("require_abstract") and j["require_abstract"].is_boolean()
                                and j["require_abstract"].get<bool>();
    criteria.language_allowlist = get_string_list(j, "language_allowlist");
}


void to_json(json &j, const ReviewProtocol &protocol) {
    j = json::object();
    j["topic"] = protocol.topic;
    j["objective"] = protocol.objective;
    j["questions"] = protocol.questions;
    if (protocol.query)
        j["query"] = *protocol.query;
    else
        j["query"] = nullptr;
    j["year_range"] = protocol.year_range;
    j["max_records"] = protocol.max_records;
    j["criteria"] = protocol.criteria;
    j["replication_mode"] = to_string(protocol.replication_mode);
}


void from_json(const json &j, ReviewProtocol &protocol) {
    protocol = ReviewProtocol{};
    protocol.topic = get_string(j, "topic");
    protocol.objective = get_string_or(j, "objective", "");
    if (j.contains("questions") and not j["questions"].is_null()) {
        if (not j["questions"].is_array())
            throw ValidationError("field \"questions\" must be an array");
        for (const auto &question : j["questions"])
            protocol.questions.push_back(question.get<ResearchQuestion>());
    }
    if (j.contains("query") and not j["query"].is_null()
        and not(j["query"].is_string() and trim(j["query"].get<std::string>()).empty()))
        protocol.query = query_from_json(j["query"]);
    if (j.contains("year_range"))
        protocol.year_range = j["year_range"].get<YearRange>();
    if (j.contains("max_records")) {
        if (not j["max_records"].is_number_integer())
            throw ValidationError("field \"max_records\" must be an integer");
        protocol.max_records = j["max_records"].get<int>();
    }
    if (j.contains("criteria") and not j["criteria"].is_null())
        protocol.criteria = j["criteria"].get<CriteriaSet>();
    if (j.contains("replication_mode") and not j["replication_mode"].is_null())
        protocol.replication_mode = parse_replication_mode(get_string(j, "replication_mode"));
}


void to_json(json &j, const PaperRecord &record) {
    j = json::object();
    j["record_id"] = record.record_id;
    j["title"] = record.title;
    j["authors"] = record.authors;
    j["url"] = record.url;
    j["venue"] = record.venue;
    j["doi"] = optional_to_json(record.doi);
    j["paper_type"] = record.paper_type;
    j["affiliation_country"] = optional_to_json(record.affiliation_country);
    j["affiliation_institution"] = optional_to_json(record.affiliation_institution);
    j["year"] = record.year ? json(*record.year) : json(nullptr);
    j["abstract"] = optional_to_json(record.abstract);
    j["fulltext"] = optional_to_json(record.fulltext);
    j["source_provider"] = record.source_provider;
    j["provenance"] = record.provenance;
}


void from_json(const json &j, PaperRecord &record) {
    record = PaperRecord{};
    record.record_id = get_string(j, "record_id");
    record.title = get_string(j, "title");
    record.authors = get_string_list(j, "authors");
    record.url = get_string_or(j, "url", "");
    record.venue = get_string_or(j, "venue", "");
    if (const auto doi = get_optional_string(j, "doi")) {
        record.doi = normalize_doi(*doi);
        if (not record.doi)
            throw ValidationError("field \"doi\" is not a DOI: " + *doi);
    }
    record.paper_type = get_string_or(j, "paper_type", "");
    record.affiliation_country = get_optional_string(j, "affiliation_country");
    record.affiliation_institution = get_optional_string(j, "affiliation_institution");
    record.year = get_optional_int(j, "year");
    record.abstract = get_optional_string(j, "abstract");
    record.fulltext = get_optional_string(j, "fulltext");
    record.source_provider = get_string_or(j, "source_provider", "");
    record.provenance = get_string_list(j, "provenance");
    if (record.provenance.empty())
        throw ValidationError("record " + record.record_id + " has empty provenance");
}


void to_json(json &j, const ScreeningDecision &decision) {
    j = json{ { "decision_id", decision.decision_id },    { "record_id", decision.record_id },
              { "stage", to_string(decision.stage) },     { "verdict", to_string(decision.verdict) },
              { "actor", to_string(decision.actor) },     { "rationale", decision.rationale },
              { "timestamp", decision.timestamp } };
}


void from_json(const json &j, ScreeningDecision &decision) {
    decision.decision_id = get_string_or(j, "decision_id", "");
    decision.record_id = get_string(j, "record_id");
    decision.stage = parse_screening_stage(get_string(j, "stage"));
    decision.verdict = parse_verdict(get_string(j, "verdict"));
    decision.actor = parse_actor(get_string(j, "actor"));
    decision.rationale = get_string_or(j, "rationale", "");
    decision.timestamp = get_string_or(j, "timestamp", "");
    if (decision.verdict == Verdict::exclude and trim(decision.rationale).empty())
        throw ValidationError("exclude decision for " + decision.record_id + " has empty rationale");
}


void to_json(json &j, const FunnelCounts &counts) {
    j = json{ { "identified", counts.identified() },
              { "deduplicated", counts.deduplicated() },
              { "title_included", counts.title_included() },
              { "abstract_included", counts.abstract_included() },
              { "final_included", counts.final_included() } };
}


void from_json(const json &j, FunnelCounts &counts) {
    auto count = [&j](const char *field) {
        const auto &value = require(j, field);
        if (not value.is_number_integer())
            throw ValidationError(std::string("funnel field \"") + field + "\" must be an integer");
        return value.get<long>();
    };
    counts = FunnelCounts(count("identified"), count("deduplicated"), count("title_included"),
                          count("abstract_included"), count("final_included"));
}


void to_json(json &j, const FeedbackEntry &entry) {
    j = json{ { "run_id", entry.run_id },
              { "rating", to_string(entry.rating) },
              { "comment", entry.comment },
              { "role", entry.role } };
}


void from_json(const json &j, FeedbackEntry &entry) {
    entry.run_id = get_string_or(j, "run_id", "");
    entry.rating = parse_rating(get_string(j, "rating"));
    entry.comment = get_string_or(j, "comment", "");
    entry.role = get_string_or(j, "role", "");
}

} // namespace slr
