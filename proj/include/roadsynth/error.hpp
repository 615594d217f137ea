#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace roadsynth {

enum class ErrorCode {
    DegenerateBox,
    EmptyTrack,
    NoOverlap,
    NoConvergedRays,
    Diverged,
    EmptyCloud,
    NoFields,
    FormatError,
    MissingFile,
    EmptyInput,
    InvalidArgument,
    StageFailed,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception; the code identifies the failure class named in each
/// operation's contract.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace roadsynth
