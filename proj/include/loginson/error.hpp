#pragma once

#include <stdexcept>
#include <string>

namespace loginson {

enum class Errc {
    BadMagic,
    UnsupportedVersion,
    NonzeroReserved,
    Truncated,
    RingFull,
    NodeDown,
    PoolExhausted,
    IoError,
    Cancelled,
    LateRecord,
    SpawnFailed,
    ChildCrashLoop,
    InvalidInterval,
    UnknownType,
    NotFound,
    AlreadyTerminal,
    NodeUnreachable,
    MalformedDoc,
    InvalidName,
    UnknownIndex,
    SinkUnavailable,
    BufferOverflow,
    InvalidModel,
    SocketError,
    InvalidConfig,
};

const char* to_string(Errc code) noexcept;

/// Base exception for every failure reported by the library. The code
/// identifies the error kind; what() carries the diagnostic.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace loginson
