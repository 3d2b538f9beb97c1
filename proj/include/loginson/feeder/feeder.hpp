#pragma once

#include "loginson/feeder/distributor.hpp"
#include "loginson/feeder/ring_queue.hpp"
#include "loginson/feeder/stats.hpp"
#include "loginson/net.hpp"
#include "loginson/type_registry.hpp"

#include <atomic>
#include <memory>
#include <string>
#include <thread>
#include <vector>

namespace loginson::feeder {

struct FeederConfig {
    std::string bind_host = "0.0.0.0";
    /// 0 binds an ephemeral port (tests); see Feeder::udp_ports().
    std::vector<std::uint16_t> listen_ports;
    TypeRegistry registry;
    std::vector<net::Endpoint> nodes;
    std::size_t ring_slots = 16;
    std::size_t slot_bytes = 4u << 20;
    std::size_t header_workers = 4;
    std::string stats_csv_path;
    std::chrono::milliseconds idle_publish{5};
    std::size_t outbox_bytes = 64u << 20;

    /// Keys: listen_ports, bind_host, type_rules, nodes, ring_slots, slot_bytes,
    /// header_workers, stats_csv_path, idle_publish_ms, outbox_bytes.
    static FeederConfig from_json(const nlohmann::json& j);
};

/// The LogFeeder: one UDP receiver thread fills the ring, N header workers
/// frame each READY slot and fan its records out round-robin.
class Feeder {
public:
    explicit Feeder(FeederConfig config);
    ~Feeder();
    Feeder(const Feeder&) = delete;
    Feeder& operator=(const Feeder&) = delete;

    /// Binds UDP listeners, connects to nodes, starts all threads.
    void start();
    /// Publishes the tail, drains the ring and outboxes, stops threads.
    void stop();

    /// Direct entry point (tests and the UDP loop). Receiver-thread only:
    /// must not be called concurrently with a running UDP receiver.
    IngestResult ingest_datagram(std::span<const std::uint8_t> datagram, std::uint16_t recv_port,
                                 const Ipv6Bytes& src_addr, std::uint16_t src_port);

    /// Asks the receiver to publish its partial slot and waits until every
    /// record has been framed, sent and acknowledged.
    bool flush(std::chrono::milliseconds timeout);

    void pause_workers(bool paused) { ring_.set_paused(paused); }

    std::vector<std::uint16_t> udp_ports() const { return bound_ports_; }
    const FeederCounters& counters() const noexcept { return counters_; }
    std::vector<StatsWindow> stats_snapshot() const { return sampler_ ? sampler_->windows() : std::vector<StatsWindow>{}; }
    std::vector<NodeStatus> node_status() const { return distributor_.status(); }
    const Distributor& distributor() const noexcept { return distributor_; }
    RingQueue& ring() noexcept { return ring_; }

private:
    void receive_loop();
    void worker_loop();

    FeederConfig config_;
    RingQueue ring_;
    Distributor distributor_;
    FeederCounters counters_;
    std::unique_ptr<StatsSampler> sampler_;

    std::vector<net::UdpSocket> sockets_;
    std::vector<std::uint16_t> bound_ports_;
    std::thread receiver_;
    std::vector<std::thread> workers_;
    std::atomic<bool> running_{false};
    std::atomic<bool> publish_request_{false};
};

} // namespace loginson::feeder
