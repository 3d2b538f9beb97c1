#include "loginson/error.hpp"

namespace loginson {

const char* to_string(Errc code) noexcept {
    switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::NonzeroReserved: return "NonzeroReserved";
    case Errc::Truncated: return "Truncated";
    case Errc::RingFull: return "RingFull";
    case Errc::NodeDown: return "NodeDown";
    case Errc::PoolExhausted: return "PoolExhausted";
    case Errc::IoError: return "IoError";
    case Errc::Cancelled: return "Cancelled";
    case Errc::LateRecord: return "LateRecord";
    case Errc::SpawnFailed: return "SpawnFailed";
    case Errc::ChildCrashLoop: return "ChildCrashLoop";
    case Errc::InvalidInterval: return "InvalidInterval";
    case Errc::UnknownType: return "UnknownType";
    case Errc::NotFound: return "NotFound";
    case Errc::AlreadyTerminal: return "AlreadyTerminal";
    case Errc::NodeUnreachable: return "NodeUnreachable";
    case Errc::MalformedDoc: return "MalformedDoc";
    case Errc::InvalidName: return "InvalidName";
    case Errc::UnknownIndex: return "UnknownIndex";
    case Errc::SinkUnavailable: return "SinkUnavailable";
    case Errc::BufferOverflow: return "BufferOverflow";
    case Errc::InvalidModel: return "InvalidModel";
    case Errc::SocketError: return "SocketError";
    case Errc::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

} // namespace loginson
