#pragma once

#include <stdexcept>
#include <string>

namespace lookalike {

enum class ErrorKind {
    MissingFile,
    Schema,
    Invariant,
    Io,
    Decode,
    Shape,
    ViewCount,
    DimMismatch,
    Domain,
    DuplicatePair,
    Precondition,
    Divergence,
    UniverseMismatch,
    DegenerateGeometry,
    EmptyDataset,
    NoPairsRemaining,
    Validation,
    Conflict,
    NothingToUndo,
    NotFound,
};

const char* error_kind_name(ErrorKind kind);

// Single exception type for the core; callers switch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace lookalike
