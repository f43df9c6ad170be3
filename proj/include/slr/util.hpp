#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace slr {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string to_lower_ascii(std::string_view text);
std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char separator);
std::string join(const std::vector<std::string> &parts, std::string_view separator);
bool iequals(std::string_view a, std::string_view b);
bool icontains(std::string_view haystack, std::string_view needle);
std::size_t word_count(std::string_view text);

/// Keeps at most `max_words` whitespace-separated words, joined by single spaces.
std::string truncate_words(std::string_view text, std::size_t max_words);

/// RFC 3986 percent-encoding; only unreserved characters pass through.
std::string percent_encode(std::string_view text);


class Clock {
public:
    using time_point = std::chrono::system_clock::time_point;

    virtual ~Clock() = default;
    virtual time_point now() = 0;
    virtual void sleep_until(time_point when) = 0;
};


class SystemClock final : public Clock {
public:
    time_point now() override { return std::chrono::system_clock::now(); }
    void sleep_until(time_point when) override;

    static Clock &instance();
};


/// Deterministic clock for tests: sleeping advances virtual time instantly.
class ManualClock final : public Clock {
public:
    explicit ManualClock(time_point start = time_point{}) : now_(start) { }

    time_point now() override;
    void sleep_until(time_point when) override;
    void advance(std::chrono::nanoseconds delta);

private:
    std::mutex mutex_;
    time_point now_;
};


/// Runs body(0..count-1) on up to `workers` threads. The first exception
/// thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)> &body);


/// ISO-8601 UTC with millisecond precision, e.g. 2024-05-01T12:00:00.000Z.
std::string format_timestamp(Clock::time_point when);


namespace fs_util {

std::string read_file(const std::filesystem::path &path);

/// Writes `content` to a sibling temp file, fsyncs and renames over `path`.
void write_atomic(const std::filesystem::path &path, std::string_view content);

/// Appends one line (a trailing newline is added) and fsyncs.
void append_line(const std::filesystem::path &path, std::string_view line);

} // namespace fs_util

} // namespace slr
