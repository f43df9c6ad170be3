#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace slr {

/// Base of every error the pipeline raises on purpose. `kind()` is the stable
/// machine-readable name used in CLI `--json` output and HTTP error bodies.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string &message)
        : std::runtime_error(message), kind_(std::move(kind)) { }

    const std::string &kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define SLR_SIMPLE_ERROR(Name)                                                  \
    class Name : public Error {                                                 \
    public:                                                                     \
        explicit Name(const std::string &message) : Error(#Name, message) { }  \
    }

SLR_SIMPLE_ERROR(ValidationError);
SLR_SIMPLE_ERROR(NotEquivalent);
SLR_SIMPLE_ERROR(MissingVariable);
SLR_SIMPLE_ERROR(UnknownVariable);
SLR_SIMPLE_ERROR(ProviderTimeout);
SLR_SIMPLE_ERROR(MockMiss);
SLR_SIMPLE_ERROR(AllProvidersFailed);
SLR_SIMPLE_ERROR(NoContent);
SLR_SIMPLE_ERROR(InvalidParams);
SLR_SIMPLE_ERROR(StageIncomplete);
SLR_SIMPLE_ERROR(UnknownDecision);
SLR_SIMPLE_ERROR(RunFinalized);
SLR_SIMPLE_ERROR(UnknownRating);
SLR_SIMPLE_ERROR(UnknownRun);
SLR_SIMPLE_ERROR(InvalidTransition);
SLR_SIMPLE_ERROR(StageFailed);
SLR_SIMPLE_ERROR(TransportError);

#undef SLR_SIMPLE_ERROR

class SyntaxError : public Error {
public:
    SyntaxError(std::string input, std::size_t offset, std::vector<std::string> expected,
                const std::string &detail);

    const std::string &input() const noexcept { return input_; }
    std::size_t offset() const noexcept { return offset_; }
    const std::vector<std::string> &expected() const noexcept { return expected_; }

private:
    std::string input_;
    std::size_t offset_;
    std::vector<std::string> expected_;
};

class DialectUnsupported : public Error {
public:
    explicit DialectUnsupported(std::string construct)
        : Error("DialectUnsupported", "dialect cannot express " + construct), construct_(std::move(construct)) { }

    const std::string &construct() const noexcept { return construct_; }

private:
    std::string construct_;
};

class SchemaViolation : public Error {
public:
    SchemaViolation(const std::string &message, std::string raw_text)
        : Error("SchemaViolation", message), raw_text_(std::move(raw_text)) { }

    /// Last provider response that failed validation.
    const std::string &raw_text() const noexcept { return raw_text_; }

private:
    std::string raw_text_;
};

class ProviderHttp : public Error {
public:
    ProviderHttp(int status, const std::string &message)
        : Error("ProviderHttp", "provider returned HTTP " + std::to_string(status) + ": " + message), status_(status) { }

    int status() const noexcept { return status_; }

private:
    int status_;
};

class CorruptStore : public Error {
public:
    CorruptStore(std::string path, const std::string &detail)
        : Error("CorruptStore", "corrupt run store artifact " + path + ": " + detail), path_(std::move(path)) { }

    const std::string &path() const noexcept { return path_; }

private:
    std::string path_;
};

} // namespace slr
