#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace icshunt {

enum class ErrorCode {
    parse,
    structural,
    not_found,
    insufficient_classes,
    dimension,
    validation,
    truncation,
    not_modbus,
    length,
    encoding,
    unsupported_format,
    partial_read,
    io,
    integrity,
    empty_observation,
    evaluation,
    durable_write,
    startup,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base exception for every failure surfaced by the library. The code lets
/// callers (CLI, HTTP layer) branch without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace icshunt
