#pragma once

#include "loginson/dbnode/rpc.hpp"
#include "loginson/dbnode/store.hpp"
#include "loginson/net.hpp"
#include "loginson/pipeline/runtime.hpp"
#include "loginson/type_registry.hpp"

#include "json.hpp"

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace loginson::dbnode {

struct NodeConfig {
    std::string bind_host = "0.0.0.0";
    std::uint16_t listen_port = 0;
    std::uint16_t control_port = 0;
    StoreOptions store;
    /// Measure W_max at startup when max_write_bytes_per_s is not given.
    bool calibrate = false;
    TypeRegistry registry;
    std::vector<pipeline::PipelineSpec> pipelines;
    std::optional<net::Endpoint> receptor;
    std::size_t tee_capacity = 65536;
    std::chrono::milliseconds window_grace{1000};

    /// Keys: bind_host, listen_port, control_port, data_dir, segment_bytes,
    /// buffer_pool, utilization_cap, max_write_bytes_per_s, calibrate,
    /// device_bytes_per_s, min_read_share, idle_flush_ms, sync_writes,
    /// type_rules, pipeline_config (path) or pipelines (inline), receptor,
    /// tee_capacity, window_grace_ms. Pipeline type names resolve through
    /// type_rules.
    static NodeConfig from_json(const nlohmann::json& j);
};

/// A storage node: framed-record ingest with cumulative acks, the segment
/// store, the live pipeline tee and the control RPC listener.
class NodeServer {
public:
    explicit NodeServer(NodeConfig config);
    ~NodeServer();
    NodeServer(const NodeServer&) = delete;
    NodeServer& operator=(const NodeServer&) = delete;

    void start();
    /// Closes listeners and connections, drains the pipelines and the store.
    void stop();

    std::uint16_t ingest_port() const noexcept { return ingest_port_; }
    std::uint16_t control_port() const noexcept { return control_port_; }
    net::Endpoint ingest_endpoint() const { return {"127.0.0.1", ingest_port_}; }
    net::Endpoint control_endpoint() const { return {"127.0.0.1", control_port_}; }

    SegmentStore& store() noexcept { return *store_; }
    pipeline::PipelineDispatcher* pipelines() noexcept { return dispatcher_.get(); }
    nlohmann::json stats_json() const;
    std::uint64_t records_ingested() const noexcept { return ingested_.load(); }

    /// Test hook: runs after each scanned segment with (query_id, scanned).
    void set_scan_observer(std::function<void(const std::string&, std::size_t)> fn);

private:
    void ingest_accept_loop();
    void serve_ingest(net::TcpStream stream);
    void control_accept_loop();
    void serve_control(net::TcpStream stream);
    void run_scan(net::TcpStream& stream, const nlohmann::json& req);
    void spawn_connection(net::TcpStream stream, std::function<void(net::TcpStream)> serve);
    void untrack(int fd);

    NodeConfig config_;
    std::unique_ptr<SegmentStore> store_;
    std::unique_ptr<pipeline::ReceptorClient> live_receptor_;
    std::unique_ptr<pipeline::PipelineDispatcher> dispatcher_;
    std::map<std::uint32_t, const pipeline::PipelineSpec*> spec_by_type_;
    std::unique_ptr<net::TcpListener> ingest_listener_;
    std::unique_ptr<net::TcpListener> control_listener_;
    std::uint16_t ingest_port_ = 0;
    std::uint16_t control_port_ = 0;

    mutable std::mutex mu_;
    std::vector<int> open_fds_;
    struct Connection {
        std::thread thread;
        std::shared_ptr<std::atomic<bool>> done;
    };
    std::vector<Connection> threads_;
    std::map<std::string, CancelToken> scans_;
    std::function<void(const std::string&, std::size_t)> scan_observer_;
    std::thread ingest_acceptor_;
    std::thread control_acceptor_;
    std::atomic<bool> running_{false};
    std::atomic<std::uint64_t> ingested_{0};
    std::atomic<std::uint64_t> ingest_connections_{0};
    std::atomic<std::uint64_t> bad_frames_{0};
    std::atomic<std::uint64_t> scans_total_{0};
};

} // namespace loginson::dbnode
