#include "slr/errors.hpp"

#include "slr/util.hpp"

namespace slr {

namespace {

std::string syntax_message(std::size_t offset, const std::vector<std::string> &expected, const std::string &detail) {
    return "syntax error at offset " + std::to_string(offset) + ": " + detail + " (expected one of: "
           + join(expected, ", ") + ")";
}

} // unnamed namespace


SyntaxError::SyntaxError(std::string input, std::size_t offset, std::vector<std::string> expected,
                         const std::string &detail)
    : Error("SyntaxError", syntax_message(offset, expected, detail)), input_(std::move(input)), offset_(offset),
      expected_(std::move(expected)) { }

} // namespace slr
