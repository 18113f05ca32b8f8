#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctreg {

enum class ErrorCode {
    InvalidCoordinate,
    ShapeMismatch,
    UnknownLabel,
    DegenerateVolume,
    OutOfRange,
    InvalidParams,
    NotEnoughLabels,
    EmptyLabel,
    DegenerateSample,
    EmptyMask,
    MalformedFile,
    UnsupportedDatatype,
    UnsupportedOrientation,
    WriteError,
    ReadError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::InvalidCoordinate: return "InvalidCoordinate";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::DegenerateVolume: return "DegenerateVolume";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::NotEnoughLabels: return "NotEnoughLabels";
    case ErrorCode::EmptyLabel: return "EmptyLabel";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::UnsupportedOrientation: return "UnsupportedOrientation";
    case ErrorCode::WriteError: return "WriteError";
    case ErrorCode::ReadError: return "ReadError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so that
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what)
    {}

    ErrorCode code() const noexcept { return code_; }
    /// The description without the code prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorCode code_;
    std::string message_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what)
{
    throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what)
{
    if (!cond)
        fail(code, what);
}

} // namespace ctreg
