#pragma once

#include "loginson/dbnode/rpc.hpp"
#include "loginson/net.hpp"
#include "loginson/record.hpp"
#include "loginson/type_registry.hpp"

#include "json.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace loginson::control {

enum class QueryState { Queued, Running, Done, Cancelled, Failed };

const char* to_string(QueryState s) noexcept;
std::optional<QueryState> parse_state(std::string_view s) noexcept;
bool is_terminal(QueryState s) noexcept;
/// QUEUED -> RUNNING | CANCELLED, RUNNING -> DONE | CANCELLED | FAILED.
bool legal_transition(QueryState from, QueryState to) noexcept;

struct NodeProgress {
    std::string address;
    std::size_t scanned = 0;
    std::size_t total = 0;
    std::uint64_t records = 0;
    std::string status; // empty until the node reports done
    std::string error;

    /// scanned / total; 1.0 once the node finished a scan with no segments.
    double fraction() const noexcept;
};

struct DrillQuery {
    std::string query_id;
    std::string type_name;
    std::uint32_t type_id = 0;
    Interval interval;
    QueryState state = QueryState::Queued;
    std::vector<NodeProgress> nodes;
    std::uint64_t created_at_ns = 0;
    std::uint64_t finished_at_ns = 0;
    bool partial = false;
    std::string error;
    std::uint64_t seq = 0;

    nlohmann::json to_json() const;
};

struct NodeHealth {
    std::string address;
    bool connected = false;
    std::uint64_t last_seen_ns = 0; // 0 = never
};

struct ControllerConfig {
    std::string listen_host = "0.0.0.0";
    std::uint16_t listen_port = 0;
    std::vector<net::Endpoint> nodes; // control endpoints
    std::size_t max_concurrent = 1;
    std::string journal_path; // empty = no journal
    TypeRegistry types;
    std::chrono::milliseconds health_interval{1000};
    std::chrono::milliseconds cancel_wait{10000};

    /// Keys: listen_addr ("host:port"), nodes (["host:port", ...]),
    /// max_concurrent, journal_path, type_rules, health_interval_ms.
    static ControllerConfig from_json(const nlohmann::json& j);
};

/// The drill-down query controller: FIFO queue with at most max_concurrent
/// RUNNING queries, parallel per-node scans, cancellation and a JSON-lines
/// journal so QUEUED work survives a restart.
class Controller {
public:
    explicit Controller(ControllerConfig config);
    ~Controller();
    Controller(const Controller&) = delete;
    Controller& operator=(const Controller&) = delete;

    /// Starts the scheduler and health threads. with_http also serves the API.
    void start(bool with_http = true);
    void stop();
    std::uint16_t http_port() const noexcept { return http_port_; }

    /// "*" selects every type. Throws Error{InvalidInterval} / Error{UnknownType}.
    DrillQuery submit(const std::string& type_name, const Interval& interval);
    /// QUEUED queries end immediately; RUNNING ones once every node stopped
    /// (waits up to cancel_wait). A terminal query is returned unchanged with
    /// already_terminal set. Throws Error{NotFound}.
    DrillQuery cancel(const std::string& query_id, bool* already_terminal = nullptr);
    DrillQuery get(const std::string& query_id) const;
    std::vector<DrillQuery> list() const;
    std::vector<NodeHealth> nodes() const;

    /// Waits until the query reaches a terminal state.
    std::optional<DrillQuery> wait(const std::string& query_id, std::chrono::milliseconds timeout) const;

    using TransitionFn = std::function<void(const std::string& id, QueryState from, QueryState to)>;
    /// Called under the controller lock for every state change, in order.
    void set_transition_listener(TransitionFn fn);

private:
    void scheduler_loop();
    void health_loop();
    void execute(std::string id);
    void transition_locked(DrillQuery& q, QueryState to);
    void journal_locked(const DrillQuery& q);
    void recover();
    void setup_http();

    ControllerConfig config_;
    std::unique_ptr<httplib::Server> http_;
    std::uint16_t http_port_ = 0;

    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::map<std::string, DrillQuery> queries_;
    std::deque<std::string> queue_;
    std::map<std::string, bool> cancel_requested_; // running query id -> flag
    std::size_t running_ = 0;
    std::uint64_t next_seq_ = 0;
    bool stopping_ = false;
    TransitionFn listener_;
    std::FILE* journal_ = nullptr;

    std::vector<NodeHealth> health_;
    std::vector<std::thread> runners_;
    std::thread scheduler_;
    std::thread health_thread_;
    std::thread http_thread_;
    bool started_ = false;
};

} // namespace loginson::control
