#pragma once

#include "loginson/net.hpp"
#include "loginson/receptor/bulk.hpp"
#include "loginson/receptor/index_store.hpp"

#include "json.hpp"

#include <array>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace loginson::receptor {

struct ReceptorConfig {
    std::string bind_host = "0.0.0.0";
    std::uint16_t ingest_port = 0;
    std::uint16_t http_port = 0;
    IndexStoreOptions store;
    /// Lines waiting for the indexing thread; ingest connections block above it.
    std::size_t queue_lines = 1u << 18;
    std::optional<BulkOptions> bulk;

    /// Keys: bind_host, ingest_port, http_port, data_dir, recent_window,
    /// max_file_bytes, queue_lines, bulk {url, headers, max_docs, max_delay_ms,
    /// max_buffered_batches}.
    static ReceptorConfig from_json(const nlohmann::json& j);
};

/// The summary receptor: NDJSON ingest over TCP, one indexing thread, the
/// HTTP read API and the optional bulk forwarder.
class Receptor {
public:
    explicit Receptor(ReceptorConfig config);
    ~Receptor();
    Receptor(const Receptor&) = delete;
    Receptor& operator=(const Receptor&) = delete;

    void start();
    void stop();

    net::Endpoint ingest_endpoint() const { return {"127.0.0.1", ingest_port_}; }
    std::uint16_t ingest_port() const noexcept { return ingest_port_; }
    std::uint16_t http_port() const noexcept { return http_port_; }

    /// Queues lines for indexing (blocks while the queue is full).
    void submit(std::vector<std::string> lines);
    /// Waits until every queued line has been indexed and flushed.
    bool sync(std::chrono::milliseconds timeout = std::chrono::seconds(10));

    IndexStore& store() noexcept { return *store_; }
    BulkForwarder* bulk() noexcept { return bulk_.get(); }
    nlohmann::json stats_json() const;

private:
    void indexing_loop();
    void accept_loop();
    void serve(net::TcpStream stream);
    void setup_http();

    ReceptorConfig config_;
    std::unique_ptr<IndexStore> store_;
    std::unique_ptr<BulkForwarder> bulk_;
    std::unique_ptr<httplib::Server> http_;
    std::unique_ptr<net::TcpListener> listener_;
    std::uint16_t ingest_port_ = 0;
    std::uint16_t http_port_ = 0;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable space_cv_;
    std::condition_variable idle_cv_;
    std::deque<std::vector<std::string>> queue_;
    std::size_t queued_lines_ = 0;
    bool busy_ = false;
    std::atomic<bool> running_{false};
    std::vector<int> open_fds_;
    std::vector<std::thread> conns_;
    std::thread indexer_;
    std::thread acceptor_;
    std::thread http_thread_;

    struct RateBucket {
        std::int64_t second = -1;
        std::uint64_t docs = 0;
    };
    mutable std::mutex rate_mu_;
    std::array<RateBucket, 16> rate_{};
    std::atomic<std::uint64_t> lines_received_{0};
    std::atomic<std::uint64_t> connections_{0};
};

} // namespace loginson::receptor
