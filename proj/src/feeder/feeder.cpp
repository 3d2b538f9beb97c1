#include "loginson/feeder/feeder.hpp"

#include "loginson/error.hpp"

#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>

#include <cstring>
#include <iostream>

namespace loginson::feeder {

FeederConfig FeederConfig::from_json(const nlohmann::json& j) {
    FeederConfig c;
    c.bind_host = j.value("bind_host", c.bind_host);
    c.listen_ports = j.value("listen_ports", std::vector<std::uint16_t>{});
    c.registry = TypeRegistry::from_json(j.value("type_rules", nlohmann::json::array()));
    for (const auto& n : j.at("nodes")) c.nodes.push_back(net::Endpoint::parse(n.get<std::string>()));
    c.ring_slots = j.value("ring_slots", c.ring_slots);
    c.slot_bytes = j.value("slot_bytes", c.slot_bytes);
    c.header_workers = j.value("header_workers", c.header_workers);
    c.stats_csv_path = j.value("stats_csv_path", c.stats_csv_path);
    c.idle_publish = std::chrono::milliseconds(j.value("idle_publish_ms", c.idle_publish.count()));
    c.outbox_bytes = j.value("outbox_bytes", c.outbox_bytes);
    if (c.header_workers == 0) throw Error(Errc::InvalidConfig, "header_workers must be >= 1");
    return c;
}

namespace {

DistributorOptions distributor_options(const FeederConfig& c) {
    DistributorOptions o;
    o.outbox_bytes = c.outbox_bytes;
    return o;
}

} // namespace

Feeder::Feeder(FeederConfig config)
    : config_(std::move(config)),
      ring_(config_.ring_slots, config_.slot_bytes),
      distributor_(config_.nodes, distributor_options(config_)) {}

Feeder::~Feeder() {
    if (running_.load()) stop();
}

void Feeder::start() {
    for (auto port : config_.listen_ports) {
        sockets_.push_back(net::UdpSocket::bind(net::Endpoint{config_.bind_host, port}));
        bound_ports_.push_back(sockets_.back().port());
    }
    distributor_.start();
    sampler_ = std::make_unique<StatsSampler>(
        counters_,
        [this] {
            std::vector<std::uint64_t> v;
            for (const auto& s : distributor_.status()) v.push_back(s.records_sent);
            return v;
        },
        config_.stats_csv_path);
    sampler_->start();
    running_.store(true);
    for (std::size_t i = 0; i < config_.header_workers; ++i) workers_.emplace_back([this] { worker_loop(); });
    if (!sockets_.empty()) receiver_ = std::thread([this] { receive_loop(); });
}

void Feeder::stop() {
    const bool drained = flush(std::chrono::seconds(10));
    running_.store(false);
    if (receiver_.joinable()) receiver_.join();
    if (!drained) {
        std::cerr << "feeder: stopping with undelivered records\n";
        distributor_.stop(std::chrono::milliseconds(0));
    }
    ring_.close();
    for (auto& w : workers_) w.join();
    workers_.clear();
    if (drained) distributor_.stop(std::chrono::seconds(5));
    if (sampler_) sampler_->stop();
    for (auto& s : sockets_) s.close();
}

IngestResult Feeder::ingest_datagram(std::span<const std::uint8_t> datagram, std::uint16_t recv_port,
                                     const Ipv6Bytes& src_addr, std::uint16_t src_port) {
    DatagramInfo info{now_ns(), src_addr, src_port, recv_port};
    const IngestResult r = ring_.ingest(datagram, info);
    counters_.datagrams_in.fetch_add(1, std::memory_order_relaxed);
    if (r.dropped) {
        counters_.datagrams_dropped.fetch_add(1, std::memory_order_relaxed);
    } else {
        counters_.records_in.fetch_add(r.records, std::memory_order_relaxed);
        counters_.bytes_in.fetch_add(datagram.size(), std::memory_order_relaxed);
    }
    return r;
}

bool Feeder::flush(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    if (receiver_.joinable() && running_.load()) {
        publish_request_.store(true);
    } else {
        ring_.publish_partial();
    }
    const auto left = [&] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    };
    if (!ring_.wait_drained(std::max(left(), std::chrono::milliseconds(0)))) return false;
    return distributor_.wait_idle(std::max(left(), std::chrono::milliseconds(0)));
}

void Feeder::receive_loop() {
    constexpr std::size_t kBatch = 32;
    constexpr std::size_t kMaxDatagram = 65536;
    std::vector<std::uint8_t> storage(kBatch * kMaxDatagram);
    std::array<mmsghdr, kBatch> msgs{};
    std::array<iovec, kBatch> iovs{};
    std::array<sockaddr_in6, kBatch> addrs{};

    std::vector<pollfd> pfds;
    for (const auto& s : sockets_) pfds.push_back(pollfd{s.fd(), POLLIN, 0});

    using clock = std::chrono::steady_clock;
    std::optional<clock::time_point> filling_since;

    while (running_.load(std::memory_order_relaxed)) {
        const int ready = ::poll(pfds.data(), pfds.size(), 5);
        if (publish_request_.exchange(false)) {
            ring_.publish_partial();
            filling_since.reset();
        }
        if (ready > 0) {
            for (std::size_t si = 0; si < pfds.size(); ++si) {
                if (!(pfds[si].revents & POLLIN)) continue;
                for (;;) {
                    for (std::size_t i = 0; i < kBatch; ++i) {
                        iovs[i] = iovec{storage.data() + i * kMaxDatagram, kMaxDatagram};
                        msgs[i].msg_hdr = msghdr{};
                        msgs[i].msg_hdr.msg_iov = &iovs[i];
                        msgs[i].msg_hdr.msg_iovlen = 1;
                        msgs[i].msg_hdr.msg_name = &addrs[i];
                        msgs[i].msg_hdr.msg_namelen = sizeof(sockaddr_in6);
                    }
                    const int n = ::recvmmsg(pfds[si].fd, msgs.data(), kBatch, MSG_DONTWAIT, nullptr);
                    if (n <= 0) break;
                    for (int i = 0; i < n; ++i) {
                        Ipv6Bytes addr{};
                        std::uint16_t port = 0;
                        const auto* sa = reinterpret_cast<const sockaddr*>(&addrs[i]);
                        if (sa->sa_family == AF_INET) {
                            const auto* v4 = reinterpret_cast<const sockaddr_in*>(sa);
                            addr = ipv4_mapped(ntohl(v4->sin_addr.s_addr));
                            port = ntohs(v4->sin_port);
                        } else if (sa->sa_family == AF_INET6) {
                            const auto* v6 = reinterpret_cast<const sockaddr_in6*>(sa);
                            std::memcpy(addr.data(), &v6->sin6_addr, 16);
                            port = ntohs(v6->sin6_port);
                        }
                        const auto r = ingest_datagram(
                            std::span<const std::uint8_t>(storage.data() + i * kMaxDatagram, msgs[i].msg_len),
                            bound_ports_[si], addr, port);
                        if (r.records > 0 && !filling_since) filling_since = clock::now();
                    }
                    if (static_cast<std::size_t>(n) < kBatch) break;
                }
            }
        }
        if (filling_since && clock::now() - *filling_since >= config_.idle_publish) {
            if (ring_.publish_partial()) filling_since.reset();
        }
    }
    ring_.publish_partial();
}

void Feeder::worker_loop() {
    const std::size_t node_count = distributor_.node_count();
    for (;;) {
        BufferSlot* slot = ring_.claim(std::chrono::milliseconds(100));
        if (!slot) {
            if (!running_.load()) {
                // Drain whatever is still queued before exiting.
                slot = ring_.claim(std::chrono::milliseconds(0));
                if (!slot) return;
            } else {
                continue;
            }
        }
        const std::size_t n = slot->line_count();
        const auto reservation = distributor_.reserve(n);
        if (reservation.live.empty()) {
            ring_.release(slot);
            continue;
        }
        std::vector<Chunk> chunks(node_count);
        const std::size_t estimate = (slot->fill_len + kHeaderSize * n) / reservation.live.size() + 4096;
        for (std::size_t idx : reservation.live) chunks[idx].bytes.reserve(estimate);

        std::size_t i = 0;
        for_each_framed(*slot, config_.registry, [&](const RecordHeader& h, std::string_view payload) {
            Chunk& c = chunks[reservation.node_for(i++)];
            const std::size_t at = c.bytes.size();
            c.bytes.resize(at + kHeaderSize + payload.size());
            encode_header(h, std::span<std::uint8_t, kHeaderSize>(c.bytes.data() + at, kHeaderSize));
            std::memcpy(c.bytes.data() + at + kHeaderSize, payload.data(), payload.size());
            ++c.records;
        });
        for (std::size_t node = 0; node < node_count; ++node) {
            if (chunks[node].records > 0) distributor_.submit(node, std::move(chunks[node]));
        }
        ring_.release(slot);
        counters_.records_out.fetch_add(n, std::memory_order_relaxed);
    }
}

} // namespace loginson::feeder
