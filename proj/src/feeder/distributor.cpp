#include "loginson/feeder/distributor.hpp"

#include "loginson/error.hpp"

#include <poll.h>

#include <algorithm>
#include <iostream>

namespace loginson::feeder {

struct Distributor::Node {
    net::Endpoint endpoint;
    std::thread thread;

    mutable std::mutex mu;
    std::condition_variable cv;
    std::deque<Chunk> outbox;
    std::deque<Chunk> unacked;
    std::deque<std::uint64_t> unacked_end; // cumulative record count at the end of each unacked chunk
    std::size_t queued_bytes = 0;
    std::size_t unacked_bytes = 0;
    bool live = false;
    bool attempted = false;

    // Sender-thread only.
    net::TcpStream stream;
    std::uint64_t conn_written = 0;
    std::uint64_t conn_acked = 0;
    std::array<std::uint8_t, 8> ack_buf{};
    std::size_t ack_fill = 0;

    std::atomic<std::uint64_t> records_sent{0};
    std::atomic<std::uint64_t> records_acked{0};
    std::atomic<std::uint64_t> failures{0};
};

Distributor::Distributor(std::vector<net::Endpoint> nodes, DistributorOptions opts) : opts_(opts) {
    if (nodes.empty()) throw Error(Errc::InvalidConfig, "distributor needs at least one node");
    for (auto& ep : nodes) {
        auto n = std::make_unique<Node>();
        n->endpoint = std::move(ep);
        nodes_.push_back(std::move(n));
    }
}

Distributor::~Distributor() {
    if (!halt_.load()) stop(std::chrono::milliseconds(0));
}

void Distributor::start() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        nodes_[i]->thread = std::thread([this, i] { run_sender(i); });
    }
    for (auto& n : nodes_) {
        std::unique_lock lock(n->mu);
        n->cv.wait_for(lock, opts_.connect_timeout * 2, [&] { return n->attempted; });
    }
}

void Distributor::stop(std::chrono::milliseconds drain_timeout) {
    if (drain_timeout.count() > 0) wait_idle(drain_timeout);
    {
        std::lock_guard lock(rotation_mu_);
        stopping_ = true;
    }
    rotation_cv_.notify_all();
    halt_.store(true);
    for (auto& n : nodes_) {
        {
            std::lock_guard lock(n->mu);
            n->cv.notify_all();
        }
        if (n->thread.joinable()) n->thread.join();
        n->stream.close();
    }
}

Distributor::Reservation Distributor::reserve(std::size_t n) {
    std::unique_lock lock(rotation_mu_);
    rotation_cv_.wait(lock, [this] { return stopping_ || !live_.empty(); });
    Reservation r;
    if (stopping_ && live_.empty()) return r;
    r.live = live_;
    r.base = cursor_;
    cursor_ += n;
    return r;
}

void Distributor::set_live(std::size_t index, bool live) {
    {
        std::lock_guard lock(rotation_mu_);
        auto it = std::find(live_.begin(), live_.end(), index);
        if (live && it == live_.end()) {
            live_.push_back(index);
            std::sort(live_.begin(), live_.end());
        } else if (!live && it != live_.end()) {
            live_.erase(it);
        }
    }
    rotation_cv_.notify_all();
}

void Distributor::submit(std::size_t index, Chunk chunk) {
    if (chunk.records == 0) return;
    Node& n = *nodes_[index];
    {
        std::unique_lock lock(n.mu);
        n.cv.wait(lock, [&] {
            return !n.live || halt_.load() ||
                   n.queued_bytes + n.unacked_bytes + chunk.bytes.size() <= opts_.outbox_bytes ||
                   (n.queued_bytes == 0 && n.unacked_bytes == 0);
        });
        if (n.live && !halt_.load()) {
            n.queued_bytes += chunk.bytes.size();
            n.outbox.push_back(std::move(chunk));
            n.cv.notify_all();
            return;
        }
    }
    std::deque<Chunk> one;
    one.push_back(std::move(chunk));
    redispatch(std::move(one));
}

std::vector<std::size_t> Distributor::dispatch(std::span<const LogRecord> records) {
    std::vector<std::size_t> counts(nodes_.size(), 0);
    if (records.empty()) return counts;
    const Reservation r = reserve(records.size());
    if (r.live.empty()) {
        lost_ += records.size();
        return counts;
    }
    std::vector<Chunk> chunks(nodes_.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::size_t node = r.node_for(i);
        append_framed(chunks[node].bytes, records[i].header, records[i].payload);
        ++chunks[node].records;
        ++counts[node];
    }
    for (std::size_t node = 0; node < chunks.size(); ++node) submit(node, std::move(chunks[node]));
    return counts;
}

void Distributor::redispatch(std::deque<Chunk> chunks) {
    for (auto& chunk : chunks) {
        if (chunk.records == 0) continue;
        const Reservation r = reserve(chunk.records);
        if (r.live.empty()) {
            lost_ += chunk.records;
            continue;
        }
        redispatched_ += chunk.records;
        std::vector<Chunk> split(nodes_.size());
        FrameCursor cursor(chunk.bytes);
        std::size_t i = 0;
        while (auto rec = cursor.next()) {
            const std::size_t node = r.node_for(i++);
            split[node].bytes.insert(split[node].bytes.end(), rec->frame.begin(), rec->frame.end());
            ++split[node].records;
        }
        for (std::size_t node = 0; node < split.size(); ++node) submit(node, std::move(split[node]));
    }
}

bool Distributor::try_connect(Node& n) {
    try {
        n.stream = net::TcpStream::connect(n.endpoint, opts_.connect_timeout);
        n.stream.set_send_buffer(4 << 20);
    } catch (const Error&) {
        return false;
    }
    n.conn_written = 0;
    n.conn_acked = 0;
    n.ack_fill = 0;
    return true;
}

void Distributor::drain_acks(Node& n, bool block) {
    while (n.stream.valid()) {
        if (!n.stream.wait_readable(block ? std::chrono::milliseconds(50) : std::chrono::milliseconds(0))) return;
        std::array<std::uint8_t, 4096> buf{};
        const std::size_t got = n.stream.read_some(buf);
        if (got == 0) throw Error(Errc::NodeDown, "connection closed by " + n.endpoint.to_string());
        for (std::size_t i = 0; i < got; ++i) {
            n.ack_buf[n.ack_fill++] = buf[i];
            if (n.ack_fill == n.ack_buf.size()) {
                std::uint64_t v = 0;
                for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(n.ack_buf[b]) << (8 * b);
                n.ack_fill = 0;
                if (v > n.conn_acked) {
                    n.records_acked += v - n.conn_acked;
                    n.conn_acked = v;
                }
            }
        }
        std::lock_guard lock(n.mu);
        while (!n.unacked.empty() && n.unacked_end.front() <= n.conn_acked) {
            n.unacked_bytes -= n.unacked.front().bytes.size();
            n.unacked.pop_front();
            n.unacked_end.pop_front();
        }
        n.cv.notify_all();
        block = false;
    }
}

void Distributor::fail(std::size_t index, const char* why) {
    Node& n = *nodes_[index];
    std::deque<Chunk> orphans;
    {
        std::lock_guard lock(n.mu);
        n.live = false;
        for (auto& c : n.unacked) orphans.push_back(std::move(c));
        for (auto& c : n.outbox) orphans.push_back(std::move(c));
        n.unacked.clear();
        n.unacked_end.clear();
        n.outbox.clear();
        n.queued_bytes = 0;
        n.unacked_bytes = 0;
        n.cv.notify_all();
    }
    n.stream.close();
    ++n.failures;
    set_live(index, false);
    std::cerr << "feeder: node " << n.endpoint.to_string() << " down (" << why << "), re-dispatching "
              << orphans.size() << " chunk(s)\n";
    redispatch(std::move(orphans));
}

void Distributor::run_sender(std::size_t index) {
    Node& n = *nodes_[index];
    auto backoff = opts_.reconnect_backoff;
    while (!halt_.load()) {
        if (!n.stream.valid()) {
            const bool ok = try_connect(n);
            {
                std::lock_guard lock(n.mu);
                n.attempted = true;
                n.live = ok;
                n.cv.notify_all();
            }
            if (!ok) {
                std::unique_lock lock(n.mu);
                n.cv.wait_for(lock, backoff, [this] { return halt_.load(); });
                backoff = std::min(backoff * 2, opts_.max_reconnect_backoff);
                continue;
            }
            backoff = opts_.reconnect_backoff;
            set_live(index, true);
        }

        Chunk chunk;
        bool have = false;
        {
            std::unique_lock lock(n.mu);
            n.cv.wait_for(lock, std::chrono::milliseconds(20), [&] { return halt_.load() || !n.outbox.empty(); });
            if (!n.outbox.empty()) {
                chunk = std::move(n.outbox.front());
                n.outbox.pop_front();
                n.queued_bytes -= chunk.bytes.size();
                have = true;
            }
        }
        try {
            if (have) {
                const std::uint32_t records = chunk.records;
                // Track before writing so a failure mid-write re-dispatches it.
                // Only this thread removes unacked entries, and deque references
                // survive push_back, so the write can run unlocked.
                const Chunk* sent = nullptr;
                {
                    std::lock_guard lock(n.mu);
                    n.unacked_end.push_back(n.conn_written + records);
                    n.unacked_bytes += chunk.bytes.size();
                    n.unacked.push_back(std::move(chunk));
                    sent = &n.unacked.back();
                }
                n.stream.write_all(sent->bytes);
                n.conn_written += records;
                n.records_sent += records;
            }
            drain_acks(n, false);
        } catch (const Error& e) {
            fail(index, e.what());
        }
    }
}

std::size_t Distributor::live_count() const {
    std::lock_guard lock(rotation_mu_);
    return live_.size();
}

bool Distributor::wait_idle(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        bool idle = true;
        for (auto& n : nodes_) {
            std::lock_guard lock(n->mu);
            if (!n->outbox.empty() || !n->unacked.empty()) idle = false;
        }
        if (idle) return true;
        if (std::chrono::steady_clock::now() >= deadline) return false;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
}

std::vector<NodeStatus> Distributor::status() const {
    std::vector<NodeStatus> out;
    for (const auto& n : nodes_) {
        NodeStatus s;
        s.endpoint = n->endpoint;
        std::lock_guard lock(n->mu);
        s.live = n->live;
        s.records_sent = n->records_sent.load();
        s.records_acked = n->records_acked.load();
        s.failures = n->failures.load();
        s.pending_bytes = n->queued_bytes + n->unacked_bytes;
        out.push_back(s);
    }
    return out;
}

} // namespace loginson::feeder
