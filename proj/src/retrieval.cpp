#include "slr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <semaphore>
#include <set>

#include "httplib.h"
#include "slr/errors.hpp"

namespace slr {

using nlohmann::json;

namespace {

const std::set<std::string> &mappable_fields() {
    static const std::set<std::string> fields{ "title",   "authors",  "url",  "venue",    "doi",
                                               "paper_type", "affiliation_country", "affiliation_institution",
                                               "year",    "abstract", "fulltext", "source_id" };
    return fields;
}


std::string substitute(std::string format, const std::string &key, const std::string &value) {
    const std::string placeholder = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = format.find(placeholder, pos)) != std::string::npos) {
        format.replace(pos, placeholder.size(), value);
        pos += value.size();
    }
    return format;
}


ProviderDescriptor crossref_descriptor() {
    ProviderDescriptor provider;
    provider.tag = "crossref";
    provider.base_url = "https://api.crossref.org/works";
    provider.dialect = Dialect::url_keywords;
    provider.page_size = 20;
    provider.rate_limit = 2.0;
    provider.query_param = "query.bibliographic";
    provider.page_size_param = "rows";
    provider.year_from_param = "filter";
    provider.year_from_format = "from-pub-date:{start}";
    provider.year_to_param = "filter";
    provider.year_to_format = "until-pub-date:{end}";
    provider.cursor_param = "cursor";
    provider.initial_cursor = "*";
    provider.next_cursor_path = "message.next-cursor";
    provider.items_path = "message.items";
    provider.fields = {
        { "title", { "title.0", {} } },
        { "authors", { "author.*", { "given", "family" } } },
        { "url", { "URL", {} } },
        { "venue", { "container-title.0", {} } },
        { "doi", { "DOI", {} } },
        { "paper_type", { "type", {} } },
        { "affiliation_institution", { "author.0.affiliation.0.name", {} } },
        { "year", { "issued.date-parts.0.0", {} } },
        { "abstract", { "abstract", {} } },
        { "source_id", { "DOI", {} } },
    };
    return provider;
}


ProviderDescriptor openalex_descriptor() {
    ProviderDescriptor provider;
    provider.tag = "openalex";
    provider.base_url = "https://api.openalex.org/works";
    provider.dialect = Dialect::url_keywords;
    provider.page_size = 25;
    provider.rate_limit = 5.0;
    provider.query_param = "search";
    provider.page_size_param = "per-page";
    provider.year_from_param = "filter";
    provider.year_from_format = "from_publication_date:{start}-01-01";
    provider.year_to_param = "filter";
    provider.year_to_format = "to_publication_date:{end}-12-31";
    provider.language_param = "filter";
    provider.language_format = "language:{languages}";
    provider.cursor_param = "cursor";
    provider.initial_cursor = "*";
    provider.next_cursor_path = "meta.next_cursor";
    provider.items_path = "results";
    provider.fields = {
        { "title", { "display_name", {} } },
        { "authors", { "authorships.*.author.display_name", {} } },
        { "url", { "primary_location.landing_page_url", {} } },
        { "venue", { "primary_location.source.display_name", {} } },
        { "doi", { "doi", {} } },
        { "paper_type", { "type", {} } },
        { "affiliation_country", { "authorships.0.countries.0", {} } },
        { "affiliation_institution", { "authorships.0.institutions.0.display_name", {} } },
        { "year", { "publication_year", {} } },
        { "source_id", { "id", {} } },
    };
    return provider;
}


ProviderDescriptor fixture_descriptor() {
    ProviderDescriptor provider;
    provider.tag = "fixture";
    provider.base_url = "fixtures/providers";
    provider.transport = "fixture";
    provider.dialect = Dialect::url_keywords;
    provider.page_size = 10;
    provider.rate_limit = 0.0;
    provider.query_param = "q";
    provider.page_size_param = "rows";
    provider.year_from_param = "year_from";
    provider.year_from_format = "{start}";
    provider.year_to_param = "year_to";
    provider.year_to_format = "{end}";
    provider.cursor_param = "page";
    provider.initial_cursor = "1";
    provider.next_cursor_path = "next_cursor";
    provider.items_path = "items";
    provider.fields = {
        { "title", { "title", {} } },
        { "authors", { "authors.*", {} } },
        { "url", { "url", {} } },
        { "venue", { "venue", {} } },
        { "doi", { "doi", {} } },
        { "paper_type", { "type", {} } },
        { "affiliation_country", { "country", {} } },
        { "affiliation_institution", { "institution", {} } },
        { "year", { "year", {} } },
        { "abstract", { "abstract", {} } },
        { "fulltext", { "fulltext", {} } },
        { "source_id", { "id", {} } },
    };
    return provider;
}

} // unnamed namespace


void validate(const ProviderDescriptor &provider) {
    if (provider.tag.empty())
        throw ValidationError("provider descriptor needs a tag");
    if (provider.page_size < 1)
        throw ValidationError("provider " + provider.tag + ": page size must be >= 1");
    if (provider.rate_limit < 0.0 or not std::isfinite(provider.rate_limit))
        throw ValidationError("provider " + provider.tag + ": rate limit must be >= 0");
    if (provider.transport != "http" and provider.transport != "fixture")
        throw ValidationError("provider " + provider.tag + ": transport must be http or fixture");
    if (not provider.fields.contains("title") or provider.fields.at("title").path.empty())
        throw ValidationError("provider " + provider.tag + ": the title field must be mapped");
    for (const auto &[field, mapping] : provider.fields) {
        if (not mappable_fields().contains(field))
            throw ValidationError("provider " + provider.tag + ": unknown record field \"" + field + "\"");
    }
}


const std::vector<ProviderDescriptor> &builtin_providers() {
    static const std::vector<ProviderDescriptor> providers{ crossref_descriptor(), openalex_descriptor(),
                                                            fixture_descriptor() };
    return providers;
}


std::optional<ProviderDescriptor> find_builtin_provider(std::string_view tag) {
    for (const auto &provider : builtin_providers()) {
        if (provider.tag == tag)
            return provider;
    }
    return std::nullopt;
}


// ---------------------------------------------------------------------------
// Requests

std::optional<std::string> RequestDescriptor::param(std::string_view name) const {
    for (const auto &[key, value] : params) {
        if (key == name)
            return value;
    }
    return std::nullopt;
}


std::string RequestDescriptor::full_url() const {
    std::string url_with_query = url;
    for (std::size_t i = 0; i < params.size(); ++i) {
        url_with_query += i == 0 ? '?' : '&';
        url_with_query += percent_encode(params[i].first) + "=" + params[i].second;
    }
    return url_with_query;
}


RequestDescriptor build_request(const ProviderDescriptor &provider, const Query &query, const YearRange &year_range,
                                const std::string &cursor, const std::vector<std::string> &languages) {
    RequestDescriptor request;
    request.url = provider.base_url;

    auto translated = translate_query(query, provider.dialect);
    if (provider.dialect != Dialect::url_keywords)
        translated = percent_encode(translated);
    request.params.emplace_back(provider.query_param, std::move(translated));

    // Parameters sharing a name (e.g. a provider-wide "filter") are joined.
    std::vector<std::pair<std::string, std::string>> filters;
    auto add_filter = [&filters](const std::string &name, const std::string &value) {
        if (name.empty())
            return;
        for (auto &[key, existing] : filters) {
            if (key == name) {
                existing += "," + value;
                return;
            }
        }
        filters.emplace_back(name, value);
    };
    if (year_range.start)
        add_filter(provider.year_from_param, substitute(provider.year_from_format, "start", std::to_string(*year_range.start)));
    if (year_range.end)
        add_filter(provider.year_to_param, substitute(provider.year_to_format, "end", std::to_string(*year_range.end)));
    if (not languages.empty())
        add_filter(provider.language_param, substitute(provider.language_format, "languages", join(languages, "|")));
    for (auto &[name, value] : filters)
        request.params.emplace_back(name, percent_encode(value));

    if (not provider.page_size_param.empty())
        request.params.emplace_back(provider.page_size_param, std::to_string(provider.page_size));
    request.params.emplace_back(provider.cursor_param, percent_encode(cursor));
    for (const auto &[name, value] : provider.static_params)
        request.params.emplace_back(name, percent_encode(value));
    return request;
}


// ---------------------------------------------------------------------------
// Response mapping

std::vector<json> resolve_path(const json &item, std::string_view path) {
    std::vector<json> current{ item };
    if (path.empty())
        return current;
    for (const auto &segment : split(path, '.')) {
        std::vector<json> next;
        for (const auto &node : current) {
            if (segment == "*") {
                if (node.is_array())
                    next.insert(next.end(), node.begin(), node.end());
            } else if (node.is_array() and not segment.empty()
                       and std::all_of(segment.begin(), segment.end(), [](char ch) { return ch >= '0' and ch <= '9'; })) {
                const auto index = std::stoul(segment);
                if (index < node.size())
                    next.push_back(node[index]);
            } else if (node.is_object() and node.contains(segment))
                next.push_back(node[segment]);
        }
        current = std::move(next);
    }
    current.erase(std::remove_if(current.begin(), current.end(), [](const json &value) { return value.is_null(); }),
                  current.end());
    return current;
}


namespace {

std::string scalar_text(const json &value) {
    if (value.is_string())
        return trim(value.get<std::string>());
    if (value.is_number() or value.is_boolean())
        return value.dump();
    return "";
}


std::vector<std::string> mapped_strings(const json &item, const FieldMapping &mapping) {
    std::vector<std::string> strings;
    for (const auto &value : resolve_path(item, mapping.path)) {
        std::string text;
        if (mapping.concat.empty())
            text = scalar_text(value);
        else {
            std::vector<std::string> parts;
            for (const auto &key : mapping.concat) {
                if (value.is_object() and value.contains(key)) {
                    auto part = scalar_text(value[key]);
                    if (not part.empty())
                        parts.push_back(std::move(part));
                }
            }
            text = join(parts, " ");
        }
        if (not text.empty())
            strings.push_back(std::move(text));
    }
    return strings;
}


std::optional<std::string> first_string(const json &item, const ProviderDescriptor &provider, const std::string &field) {
    const auto mapping = provider.fields.find(field);
    if (mapping == provider.fields.end())
        return std::nullopt;
    auto strings = mapped_strings(item, mapping->second);
    if (strings.empty())
        return std::nullopt;
    return strings.front();
}


std::optional<int> parse_year_value(const json &item, const ProviderDescriptor &provider) {
    const auto mapping = provider.fields.find("year");
    if (mapping == provider.fields.end())
        return std::nullopt;
    for (const auto &value : resolve_path(item, mapping->second.path)) {
        if (value.is_number_integer())
            return value.get<int>();
        if (value.is_string()) {
            const auto text = value.get<std::string>();
            if (text.size() >= 4 and std::all_of(text.begin(), text.begin() + 4, [](char ch) { return ch >= '0' and ch <= '9'; }))
                return std::stoi(text.substr(0, 4));
        }
    }
    return std::nullopt;
}

} // unnamed namespace


MappedPage map_response(const ProviderDescriptor &provider, const std::string &body, const std::string &cursor,
                        std::size_t first_index) {
    const auto document = json::parse(body, nullptr, false);
    if (document.is_discarded())
        throw TransportError("provider " + provider.tag + " returned a body that is not JSON");

    MappedPage page;
    std::vector<json> items;
    for (const auto &node : resolve_path(document, provider.items_path)) {
        if (node.is_array())
            items.insert(items.end(), node.begin(), node.end());
    }
    page.item_count = items.size();

    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto &item = items[i];
        PaperRecord record;
        const auto title = first_string(item, provider, "title");
        if (not title) {
            page.warnings.push_back("provider " + provider.tag + " item " + std::to_string(first_index + i)
                                    + " skipped: unmapped mandatory field title");
            continue;
        }
        record.title = *title;
        if (provider.fields.contains("authors"))
            record.authors = mapped_strings(item, provider.fields.at("authors"));
        record.url = first_string(item, provider, "url").value_or("");
        record.venue = first_string(item, provider, "venue").value_or("");
        if (const auto doi = first_string(item, provider, "doi"))
            record.doi = normalize_doi(*doi);
        record.paper_type = first_string(item, provider, "paper_type").value_or("");
        record.affiliation_country = first_string(item, provider, "affiliation_country");
        record.affiliation_institution = first_string(item, provider, "affiliation_institution");
        record.year = parse_year_value(item, provider);
        record.abstract = first_string(item, provider, "abstract");
        record.fulltext = first_string(item, provider, "fulltext");
        record.source_provider = provider.tag;
        const auto source_id = first_string(item, provider, "source_id");
        record.provenance.push_back(provider.tag + ":" + source_id.value_or("item-" + std::to_string(first_index + i)));
        record.record_id = make_record_id(record.title, record.doi);
        page.records.push_back(std::move(record));
    }

    if (provider.next_cursor_path.empty()) {
        if (page.item_count >= static_cast<std::size_t>(provider.page_size)) {
            int number = 0;
            try {
                number = std::stoi(cursor);
            } catch (const std::exception &) {
                throw TransportError("provider " + provider.tag + " uses numbered pages but cursor is " + cursor);
            }
            page.next_cursor = std::to_string(number + 1);
        }
    } else {
        const auto next = resolve_path(document, provider.next_cursor_path);
        if (not next.empty() and next.front().is_string() and not next.front().get<std::string>().empty()
            and next.front().get<std::string>() != cursor)
            page.next_cursor = next.front().get<std::string>();
    }
    return page;
}


// ---------------------------------------------------------------------------
// Transports

TransportResponse HttpTransport::get(const ProviderDescriptor &provider, const RequestDescriptor &request) {
    const auto full = request.full_url();
    const auto scheme_end = full.find("://");
    const auto path_start = full.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const auto origin = path_start == std::string::npos ? full : full.substr(0, path_start);
    const auto path = path_start == std::string::npos ? std::string("/") : full.substr(path_start);

    httplib::Client client(origin);
    client.set_connection_timeout(timeout_seconds_, 0);
    client.set_read_timeout(timeout_seconds_, 0);
    client.set_follow_location(true);
    const auto result = client.Get(path, httplib::Headers{ { "User-Agent", user_agent_ }, { "Accept", "application/json" } });
    if (not result)
        throw TransportError("provider " + provider.tag + ": " + httplib::to_string(result.error()));
    return { result->status, result->body };
}


TransportResponse FixtureTransport::get(const ProviderDescriptor &provider, const RequestDescriptor &request) {
    const auto cursor = request.param(provider.cursor_param);
    if (not cursor)
        return { 400, "{\"error\": \"missing cursor\"}" };
    const auto path = std::filesystem::path(provider.base_url) / provider.tag / (*cursor + ".json");
    std::error_code error;
    if (not std::filesystem::exists(path, error))
        return { 404, "{\"error\": \"no such fixture page\"}" };
    return { 200, fs_util::read_file(path) };
}


std::function<std::shared_ptr<Transport>(const ProviderDescriptor &)> default_transports(std::string user_agent) {
    auto http = std::make_shared<HttpTransport>(std::move(user_agent));
    auto fixture = std::make_shared<FixtureTransport>();
    return [http, fixture](const ProviderDescriptor &provider) -> std::shared_ptr<Transport> {
        if (provider.transport == "fixture")
            return fixture;
        return http;
    };
}


RateLimiter::RateLimiter(double rate, Clock &clock) : rate_(rate), clock_(clock), last_refill_(clock.now()) { }


void RateLimiter::acquire() {
    if (rate_ <= 0.0)
        return;
    std::lock_guard lock(mutex_);
    const auto now = clock_.now();
    const double elapsed = std::chrono::duration<double>(now - last_refill_).count();
    tokens_ = std::min(1.0, tokens_ + elapsed * rate_);
    last_refill_ = now;
    if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
    }
    const auto wait = std::chrono::duration_cast<Clock::time_point::duration>(
        std::chrono::duration<double>((1.0 - tokens_) / rate_));
    const auto wake = now + wait + Clock::time_point::duration(1);
    clock_.sleep_until(wake);
    tokens_ = 0.0;
    last_refill_ = wake;
}


// ---------------------------------------------------------------------------
// Fetching

namespace {

struct ProviderOutcome {
    std::vector<PaperRecord> records;
    std::vector<std::string> warnings;
    std::optional<std::string> failure;
    int pages = 0;
};


ProviderOutcome fetch_one(const ReviewProtocol &protocol, const ProviderDescriptor &provider,
                          const RetrievalContext &context, std::counting_semaphore<64> &in_flight) {
    ProviderOutcome outcome;
    try {
        validate(provider);
        auto transport = context.transport_for(provider);
        RateLimiter limiter(provider.rate_limit, *context.clock);
        const auto limit = static_cast<std::size_t>(protocol.max_records);
        std::string cursor = provider.initial_cursor;
        while (outcome.records.size() < limit) {
            const auto request = build_request(provider, *protocol.query, protocol.year_range, cursor,
                                               protocol.criteria.language_allowlist);
            limiter.acquire();
            TransportResponse response;
            in_flight.acquire();
            try {
                response = transport->get(provider, request);
            } catch (...) {
                in_flight.release();
                throw;
            }
            in_flight.release();
            ++outcome.pages;
            if (response.status != 200)
                throw TransportError("provider " + provider.tag + " returned HTTP " + std::to_string(response.status));

            auto page = map_response(provider, response.body, cursor, outcome.records.size());
            outcome.warnings.insert(outcome.warnings.end(), page.warnings.begin(), page.warnings.end());
            for (auto &record : page.records) {
                if (outcome.records.size() >= limit)
                    break;
                outcome.records.push_back(std::move(record));
            }
            if (not page.next_cursor or page.item_count == 0)
                break;
            cursor = *page.next_cursor;
        }
    } catch (const std::exception &error) {
        outcome.failure = error.what();
    }
    return outcome;
}

} // unnamed namespace


FetchResult fetch_candidates(const ReviewProtocol &protocol, const std::vector<ProviderDescriptor> &providers,
                             const RetrievalContext &context) {
    if (not protocol.query)
        throw ValidationError("retrieval needs a search query");
    if (providers.empty())
        throw ValidationError("no retrieval providers configured");
    if (not context.transport_for)
        throw std::invalid_argument("retrieval context has no transport factory");

    std::counting_semaphore<64> in_flight(std::clamp(context.max_in_flight, 1, 64));
    std::vector<std::future<ProviderOutcome>> futures;
    for (const auto &provider : providers) {
        futures.push_back(std::async(std::launch::async, [&protocol, &provider, &context, &in_flight] {
            return fetch_one(protocol, provider, context, in_flight);
        }));
    }

    FetchResult result;
    for (std::size_t i = 0; i < providers.size(); ++i) {
        auto outcome = futures[i].get();
        result.pages_requested[providers[i].tag] = outcome.pages;
        result.warnings.insert(result.warnings.end(), outcome.warnings.begin(), outcome.warnings.end());
        if (outcome.failure) {
            result.failures.push_back({ providers[i].tag, *outcome.failure });
            if (not outcome.records.empty())
                result.warnings.push_back("provider " + providers[i].tag + " failed after "
                                          + std::to_string(outcome.records.size()) + " records; keeping them");
        }
        for (auto &record : outcome.records)
            result.records.push_back(std::move(record));
    }
    if (result.failures.size() == providers.size()) {
        std::vector<std::string> messages;
        for (const auto &failure : result.failures)
            messages.push_back(failure.provider + ": " + failure.message);
        throw AllProvidersFailed("every retrieval provider failed (" + join(messages, "; ") + ")");
    }
    return result;
}


// ---------------------------------------------------------------------------
// Deduplication

namespace {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t size) : parent_(size) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    // The smaller index stays root so roots are first arrivals.
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b)
            return;
        if (b < a)
            std::swap(a, b);
        parent_[b] = a;
    }

private:
    std::vector<std::size_t> parent_;
};

} // unnamed namespace


DedupResult deduplicate(const std::vector<PaperRecord> &records) {
    const auto n = records.size();
    DisjointSets sets(n);
    std::vector<std::optional<std::string>> cluster_doi(n);
    for (std::size_t i = 0; i < n; ++i)
        cluster_doi[i] = records[i].doi;

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (not records_equivalent(records[i], records[j]))
                continue;
            const auto root_i = sets.find(i), root_j = sets.find(j);
            if (root_i == root_j)
                continue;
            const auto &doi_i = cluster_doi[root_i], &doi_j = cluster_doi[root_j];
            if (doi_i and doi_j and *doi_i != *doi_j)
                continue;
            const auto doi = doi_i ? doi_i : doi_j;
            sets.unite(root_i, root_j);
            cluster_doi[sets.find(i)] = doi;
        }
    }

    std::vector<std::vector<std::size_t>> clusters;
    std::vector<std::ptrdiff_t> cluster_of_root(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto root = sets.find(i);
        if (cluster_of_root[root] < 0) {
            cluster_of_root[root] = static_cast<std::ptrdiff_t>(clusters.size());
            clusters.emplace_back();
        }
        clusters[static_cast<std::size_t>(cluster_of_root[root])].push_back(i);
    }

    DedupResult result;
    std::map<std::string, int> id_uses;
    for (const auto &members : clusters) {
        PaperRecord merged = records[members.front()];
        MergeLogEntry entry{ merged.record_id, {} };
        for (std::size_t k = 1; k < members.size(); ++k) {
            merged = merge_record_fields(merged, records[members[k]]);
            entry.absorbed.push_back(records[members[k]].record_id);
        }
        // Same title and DOI but incompatible years hash to the same id.
        const int uses = ++id_uses[merged.record_id];
        if (uses > 1) {
            merged.record_id += "-" + std::to_string(uses);
            entry.kept = merged.record_id;
        }
        if (not entry.absorbed.empty())
            result.merge_log.push_back(entry);
        result.records.push_back(std::move(merged));
    }
    return result;
}


void to_json(json &j, const MergeLogEntry &entry) {
    j = json{ { "kept", entry.kept }, { "absorbed", entry.absorbed } };
}

} // namespace slr
