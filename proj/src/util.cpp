#include "slr/util.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <exception>
#include <cctype>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace slr {

std::string sha256_hex(std::string_view data) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (ctx == nullptr or EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1
        or EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1
        or EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1)
        throw std::runtime_error("SHA-256 computation failed");

    static constexpr char HEX[] = "0123456789abcdef";
    std::string hex;
    hex.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        hex.push_back(HEX[digest[i] >> 4]);
        hex.push_back(HEX[digest[i] & 0x0f]);
    }
    return hex;
}


std::string to_lower_ascii(std::string_view text) {
    std::string lowered(text);
    for (auto &ch : lowered) {
        if (ch >= 'A' and ch <= 'Z')
            ch = static_cast<char>(ch - 'A' + 'a');
    }
    return lowered;
}


namespace {

bool is_space(char ch) {
    return ch == ' ' or ch == '\t' or ch == '\n' or ch == '\r' or ch == '\f' or ch == '\v';
}

} // unnamed namespace


std::string trim(std::string_view text) {
    std::size_t begin = 0, end = text.size();
    while (begin < end and is_space(text[begin]))
        ++begin;
    while (end > begin and is_space(text[end - 1]))
        --end;
    return std::string(text.substr(begin, end - begin));
}


std::vector<std::string> split(std::string_view text, char separator) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        const auto pos = text.find(separator, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(text.substr(start));
            return parts;
        }
        parts.emplace_back(text.substr(start, pos - start));
        start = pos + 1;
    }
}


std::string join(const std::vector<std::string> &parts, std::string_view separator) {
    std::string joined;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0)
            joined += separator;
        joined += parts[i];
    }
    return joined;
}


bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size())
        return false;
    auto lower = [](char ch) { return ch >= 'A' and ch <= 'Z' ? static_cast<char>(ch - 'A' + 'a') : ch; };
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (lower(a[i]) != lower(b[i]))
            return false;
    }
    return true;
}


bool icontains(std::string_view haystack, std::string_view needle) {
    return to_lower_ascii(haystack).find(to_lower_ascii(needle)) != std::string::npos;
}


std::size_t word_count(std::string_view text) {
    std::size_t count = 0;
    bool in_word = false;
    for (const char ch : text) {
        if (is_space(ch))
            in_word = false;
        else if (not in_word) {
            in_word = true;
            ++count;
        }
    }
    return count;
}


std::string truncate_words(std::string_view text, std::size_t max_words) {
    std::vector<std::string> words;
    std::string current;
    for (const char ch : text) {
        if (is_space(ch)) {
            if (not current.empty())
                words.push_back(std::move(current));
            current.clear();
        } else
            current.push_back(ch);
    }
    if (not current.empty())
        words.push_back(std::move(current));
    if (words.size() > max_words)
        words.resize(max_words);
    return join(words, " ");
}


std::string percent_encode(std::string_view text) {
    static constexpr char HEX[] = "0123456789ABCDEF";
    std::string encoded;
    for (const char ch : text) {
        const auto byte = static_cast<unsigned char>(ch);
        if (std::isalnum(byte) and byte < 0x80)
            encoded.push_back(ch);
        else if (ch == '-' or ch == '.' or ch == '_' or ch == '~')
            encoded.push_back(ch);
        else {
            encoded.push_back('%');
            encoded.push_back(HEX[byte >> 4]);
            encoded.push_back(HEX[byte & 0x0f]);
        }
    }
    return encoded;
}


void SystemClock::sleep_until(time_point when) {
    std::this_thread::sleep_until(when);
}


Clock &SystemClock::instance() {
    static SystemClock clock;
    return clock;
}


ManualClock::time_point ManualClock::now() {
    std::lock_guard lock(mutex_);
    return now_;
}


void ManualClock::sleep_until(time_point when) {
    std::lock_guard lock(mutex_);
    if (when > now_)
        now_ = when;
}


void ManualClock::advance(std::chrono::nanoseconds delta) {
    std::lock_guard lock(mutex_);
    now_ += std::chrono::duration_cast<std::chrono::system_clock::duration>(delta);
}


void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)> &body) {
    const auto threads = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(workers, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            body(i);
        return;
    }
    std::atomic<std::size_t> next{ 0 };
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (auto i = next++; i < count; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (not failure)
                        failure = std::current_exception();
                }
            }
        });
    }
    for (auto &thread : pool)
        thread.join();
    if (failure)
        std::rethrow_exception(failure);
}


std::string format_timestamp(Clock::time_point when) {
    const auto millis = std::chrono::duration_cast<std::chrono::milliseconds>(when.time_since_epoch()).count();
    auto seconds = static_cast<std::time_t>(millis / 1000);
    auto remainder = millis % 1000;
    if (remainder < 0) {
        remainder += 1000;
        --seconds;
    }
    std::tm utc{};
    gmtime_r(&seconds, &utc);
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", utc.tm_year + 1900, utc.tm_mon + 1,
                  utc.tm_mday, utc.tm_hour, utc.tm_min, utc.tm_sec, static_cast<int>(remainder));
    return buffer;
}


namespace fs_util {

std::string read_file(const std::filesystem::path &path) {
    std::ifstream input(path, std::ios::binary);
    if (not input)
        throw std::runtime_error("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << input.rdbuf();
    return buffer.str();
}


namespace {

void write_all(int fd, std::string_view content, const std::filesystem::path &path) {
    std::size_t written = 0;
    while (written < content.size()) {
        const auto n = ::write(fd, content.data() + written, content.size() - written);
        if (n < 0) {
            ::close(fd);
            throw std::runtime_error("write failed: " + path.string());
        }
        written += static_cast<std::size_t>(n);
    }
}

} // unnamed namespace


void write_atomic(const std::filesystem::path &path, std::string_view content) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    static std::atomic<unsigned long> counter{ 0 };
    const auto temp = path.string() + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(++counter);
    const int fd = ::open(temp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0)
        throw std::runtime_error("cannot create " + temp);
    write_all(fd, content, temp);
    ::fsync(fd);
    ::close(fd);
    std::filesystem::rename(temp, path);
}


void append_line(const std::filesystem::path &path, std::string_view line) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0)
        throw std::runtime_error("cannot open for append " + path.string());
    std::string buffer(line);
    buffer.push_back('\n');
    write_all(fd, buffer, path);
    ::fsync(fd);
    ::close(fd);
}

} // namespace fs_util

} // namespace slr
