#pragma once

#include "loginson/net.hpp"
#include "loginson/record.hpp"
#include "loginson/workbench/manifest.hpp"
#include "loginson/workbench/metrics.hpp"

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace loginson::workbench {

struct SinkOptions {
    /// Send cumulative 8-byte acks after each read.
    bool ack = true;
    /// Keep every received record (tests).
    bool keep_records = false;
    /// Track a manifest of received payloads.
    bool track_manifest = false;
};

/// Minimal storage-node stand-in: accepts framed-record TCP streams, counts
/// and optionally keeps what arrives, and acknowledges like a real node.
class CountingSink {
public:
    explicit CountingSink(SinkOptions opts = {}, std::uint16_t port = 0);
    ~CountingSink();
    CountingSink(const CountingSink&) = delete;
    CountingSink& operator=(const CountingSink&) = delete;

    net::Endpoint endpoint() const { return {"127.0.0.1", port_}; }
    std::uint16_t port() const noexcept { return port_; }

    /// Drops every connection and stops listening (simulated node death).
    void kill();

    std::uint64_t records() const noexcept { return records_.load(); }
    std::uint64_t bytes() const noexcept { return bytes_.load(); }
    std::uint64_t connections() const noexcept { return connections_.load(); }
    std::vector<LogRecord> received() const;
    Manifest manifest() const;
    /// Records and bytes by arrival time in 100 ms buckets aligned to the
    /// epoch, covering [from_ns, to_ns); buckets with no arrivals are zero.
    std::vector<MetricsWindow> arrival_windows(std::uint64_t from_ns, std::uint64_t to_ns) const;

private:
    void accept_loop();
    void serve(net::TcpStream stream);

    SinkOptions opts_;
    net::TcpListener listener_;
    std::uint16_t port_;
    std::atomic<bool> stop_{false};
    std::atomic<std::uint64_t> records_{0};
    std::atomic<std::uint64_t> bytes_{0};
    std::atomic<std::uint64_t> connections_{0};

    mutable std::mutex mu_;
    std::vector<LogRecord> kept_;
    Manifest manifest_;
    mutable std::mutex bucket_mu_;
    std::map<std::uint64_t, std::pair<std::uint64_t, std::uint64_t>> buckets_;
    std::vector<int> open_fds_;
    std::vector<std::thread> conn_threads_;
    std::thread acceptor_;
};

} // namespace loginson::workbench
