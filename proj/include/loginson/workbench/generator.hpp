#pragma once

#include "loginson/net.hpp"
#include "loginson/workbench/manifest.hpp"
#include "loginson/workbench/profile.hpp"

#include <atomic>
#include <cstdint>

namespace loginson::workbench {

struct GenerateOptions {
    /// Lines are packed into datagrams up to this many bytes.
    std::size_t max_datagram_bytes = 1400;
    /// Optional external stop flag.
    const std::atomic<bool>* stop = nullptr;
};

struct GenerateResult {
    std::uint64_t lines = 0;
    std::uint64_t datagrams = 0;
    std::uint64_t bytes = 0;
    std::uint64_t send_retries = 0;
    double elapsed_s = 0;
    Manifest manifest;

    double achieved_rate() const noexcept { return elapsed_s > 0 ? static_cast<double>(lines) / elapsed_s : 0; }
};

/// Sends profile.count lines (or runs for profile.duration_s) to target at
/// profile.rate lines/s (unlimited when 0). Throws Error{SocketError}.
GenerateResult generate_load(const LoadProfile& profile, const net::Endpoint& target, GenerateOptions opts = {});

} // namespace loginson::workbench
