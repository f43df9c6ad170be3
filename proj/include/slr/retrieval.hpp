#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "slr/domain.hpp"
#include "slr/query.hpp"
#include "slr/util.hpp"

namespace slr {

/// Where one PaperRecord field comes from in a provider's item JSON.
///
/// Paths are dot-separated; numeric segments index arrays and `*` fans out
/// over every element. With `concat`, each resolved object contributes the
/// named sub-fields joined by a space (e.g. given + family name).
struct FieldMapping {
    std::string path;
    std::vector<std::string> concat;
};


/// A scholarly-metadata source described as data.
///
/// Provider-specific query-string parameters are expressed as formats where
/// `{start}`, `{end}` and `{languages}` are substituted; several parameters
/// with the same name are joined with a comma.
struct ProviderDescriptor {
    std::string tag;
    std::string base_url;
    /// "http" or "fixture" (pages read from <base_url>/<tag>/<cursor>.json).
    std::string transport = "http";
    Dialect dialect = Dialect::url_keywords;
    int page_size = 10;
    /// Requests per second; 0 disables throttling.
    double rate_limit = 1.0;

    std::string query_param = "query";
    std::string page_size_param;
    std::string year_from_param;
    std::string year_from_format;
    std::string year_to_param;
    std::string year_to_format;
    std::string language_param;
    std::string language_format;
    std::vector<std::pair<std::string, std::string>> static_params;

    std::string cursor_param = "cursor";
    std::string initial_cursor = "*";
    /// Path of the next cursor in a response; empty means numbered pages.
    std::string next_cursor_path;
    std::string items_path;

    /// PaperRecord field name (plus "source_id") -> mapping.
    std::map<std::string, FieldMapping> fields;
};

/// Throws ValidationError on page_size < 1, missing title mapping, unknown
/// mapped field names or a negative rate.
void validate(const ProviderDescriptor &provider);

/// Descriptors for Crossref, OpenAlex and the file-backed fixture provider.
const std::vector<ProviderDescriptor> &builtin_providers();
std::optional<ProviderDescriptor> find_builtin_provider(std::string_view tag);


struct RequestDescriptor {
    std::string url;
    /// Values are already percent-encoded for the query string.
    std::vector<std::pair<std::string, std::string>> params;

    std::optional<std::string> param(std::string_view name) const;
    std::string full_url() const;
};

/// Deterministic; throws DialectUnsupported when the provider dialect cannot
/// express the query.
RequestDescriptor build_request(const ProviderDescriptor &provider, const Query &query, const YearRange &year_range,
                                const std::string &cursor, const std::vector<std::string> &languages = {});


struct MappedPage {
    std::vector<PaperRecord> records;
    std::size_t item_count = 0;
    std::optional<std::string> next_cursor;
    std::vector<std::string> warnings;
};

/// Maps one response body. Items without a title are skipped with a warning.
/// `first_index` numbers items for provenance when no source_id is mapped.
MappedPage map_response(const ProviderDescriptor &provider, const std::string &body, const std::string &cursor,
                        std::size_t first_index);

/// Resolves a mapping path (see FieldMapping) against `item`.
std::vector<nlohmann::json> resolve_path(const nlohmann::json &item, std::string_view path);


struct TransportResponse {
    int status = 0;
    std::string body;
};


class Transport {
public:
    virtual ~Transport() = default;
    /// Throws TransportError when no response could be obtained.
    virtual TransportResponse get(const ProviderDescriptor &provider, const RequestDescriptor &request) = 0;
};


class HttpTransport final : public Transport {
public:
    HttpTransport(std::string user_agent, int timeout_seconds = 30)
        : user_agent_(std::move(user_agent)), timeout_seconds_(timeout_seconds) { }

    TransportResponse get(const ProviderDescriptor &provider, const RequestDescriptor &request) override;

private:
    std::string user_agent_;
    int timeout_seconds_;
};


/// Serves fixtures/providers/<tag>/<cursor>.json; a missing page is a 404.
class FixtureTransport final : public Transport {
public:
    TransportResponse get(const ProviderDescriptor &provider, const RequestDescriptor &request) override;
};


/// Token bucket with capacity one: consecutive acquisitions are spaced at
/// least 1/rate apart on the given clock.
class RateLimiter {
public:
    RateLimiter(double rate, Clock &clock);

    void acquire();

private:
    double rate_;
    Clock &clock_;
    std::mutex mutex_;
    double tokens_ = 1.0;
    Clock::time_point last_refill_;
};


struct RetrievalContext {
    std::function<std::shared_ptr<Transport>(const ProviderDescriptor &)> transport_for;
    Clock *clock = &SystemClock::instance();
    int max_in_flight = 4;
};

/// HttpTransport for "http" descriptors, FixtureTransport for "fixture".
std::function<std::shared_ptr<Transport>(const ProviderDescriptor &)> default_transports(std::string user_agent);


struct ProviderFailure {
    std::string provider;
    std::string message;
};


struct FetchResult {
    /// Provider order, then arrival order within a provider.
    std::vector<PaperRecord> records;
    std::vector<ProviderFailure> failures;
    std::vector<std::string> warnings;
    std::map<std::string, int> pages_requested;
};

/// Pages every provider until protocol.max_records records or the last page.
/// Providers run concurrently; a failing provider is reported in `failures`
/// and the others continue. Throws AllProvidersFailed when none succeeded.
FetchResult fetch_candidates(const ReviewProtocol &protocol, const std::vector<ProviderDescriptor> &providers,
                             const RetrievalContext &context);


struct MergeLogEntry {
    std::string kept;
    std::vector<std::string> absorbed;
};


struct DedupResult {
    std::vector<PaperRecord> records;
    std::vector<MergeLogEntry> merge_log;
};

/// Union-find clustering under records_equivalent(); clusters never join two
/// distinct DOIs. Each cluster is merged in arrival order and keeps its first
/// member's record_id. Output order follows each cluster's first arrival.
DedupResult deduplicate(const std::vector<PaperRecord> &records);

void to_json(nlohmann::json &json, const MergeLogEntry &entry);

} // namespace slr
