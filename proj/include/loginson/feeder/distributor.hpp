#pragma once

#include "loginson/net.hpp"
#include "loginson/record.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

namespace loginson::feeder {

/// A run of framed records bound for one node.
struct Chunk {
    std::vector<std::uint8_t> bytes;
    std::uint32_t records = 0;
};

struct DistributorOptions {
    /// Per-node bound on queued + unacknowledged bytes; submit blocks above it.
    std::size_t outbox_bytes = 64u << 20;
    std::chrono::milliseconds connect_timeout{1000};
    std::chrono::milliseconds reconnect_backoff{100};
    std::chrono::milliseconds max_reconnect_backoff{2000};
};

struct NodeStatus {
    net::Endpoint endpoint;
    bool live = false;
    std::uint64_t records_sent = 0;  // written to the socket (includes later re-dispatched ones)
    std::uint64_t records_acked = 0; // confirmed appended by the node
    std::uint64_t failures = 0;
    std::size_t pending_bytes = 0;
};

/// Round-robin fan-out of framed records to storage nodes over TCP.
///
/// Record i of a reservation goes to live[(cursor + i) % live.size()]. Each
/// node has one sender thread, a bounded outbox and a list of chunks written
/// but not yet acknowledged. Nodes acknowledge with a cumulative 8-byte
/// little-endian record count per connection. When a connection fails, the
/// node leaves the rotation and every unacknowledged record is re-dispatched
/// to the survivors; reconnection continues in the background.
class Distributor {
public:
    explicit Distributor(std::vector<net::Endpoint> nodes, DistributorOptions opts = {});
    ~Distributor();
    Distributor(const Distributor&) = delete;
    Distributor& operator=(const Distributor&) = delete;

    /// Starts sender threads; returns once every node had one connection attempt.
    void start();
    /// Waits up to drain_timeout for outboxes to empty and acks to arrive, then
    /// stops all threads.
    void stop(std::chrono::milliseconds drain_timeout = std::chrono::seconds(10));

    struct Reservation {
        std::vector<std::size_t> live; // node indices in rotation order
        std::uint64_t base = 0;

        std::size_t node_for(std::size_t i) const noexcept { return live[(base + i) % live.size()]; }
    };

    /// Reserves a block of n cursor positions over the current live set.
    /// Blocks while no node is live; returns an empty live list once stopped.
    Reservation reserve(std::size_t n);

    /// Queues a chunk for a node. Re-dispatches it if the node is not live.
    void submit(std::size_t node, Chunk chunk);

    /// Convenience path used by tests and replays: frames and dispatches.
    /// Returns per-node record counts indexed like the constructor's list.
    std::vector<std::size_t> dispatch(std::span<const LogRecord> records);

    /// True when every outbox is empty and every written record is acked.
    bool wait_idle(std::chrono::milliseconds timeout);

    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::size_t live_count() const;
    std::vector<NodeStatus> status() const;
    std::uint64_t records_redispatched() const noexcept { return redispatched_.load(); }
    std::uint64_t records_lost() const noexcept { return lost_.load(); }

private:
    struct Node;

    void run_sender(std::size_t index);
    bool try_connect(Node& n);
    void fail(std::size_t index, const char* why);
    void redispatch(std::deque<Chunk> chunks);
    void set_live(std::size_t index, bool live);
    void drain_acks(Node& n, bool block);

    DistributorOptions opts_;
    std::vector<std::unique_ptr<Node>> nodes_;

    mutable std::mutex rotation_mu_;
    std::condition_variable rotation_cv_;
    std::vector<std::size_t> live_;
    std::uint64_t cursor_ = 0;
    bool stopping_ = false;

    std::atomic<bool> halt_{false};
    std::atomic<std::uint64_t> redispatched_{0};
    std::atomic<std::uint64_t> lost_{0};
};

} // namespace loginson::feeder
