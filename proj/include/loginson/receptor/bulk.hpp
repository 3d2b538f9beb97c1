#pragma once

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace loginson::receptor {

struct BulkOptions {
    /// http://host:port/path
    std::string url;
    std::map<std::string, std::string> headers;
    std::size_t max_docs = 1000;
    std::chrono::milliseconds max_delay{1000};
    std::size_t max_buffered_batches = 100;
    std::chrono::milliseconds backoff_initial{100};
    std::chrono::milliseconds backoff_max{5000};
    std::chrono::milliseconds request_timeout{5000};

    /// Keys: url, headers, max_docs, max_delay_ms, max_buffered_batches.
    static BulkOptions from_json(const nlohmann::json& j);
};

struct BulkBatch {
    std::string index;
    std::vector<std::string> docs;
    std::chrono::steady_clock::time_point opened;

    /// `{"index":"<name>"}` then one doc per line.
    std::string body() const;
};

struct BulkStats {
    std::uint64_t batches_sent = 0;
    std::uint64_t docs_sent = 0;
    std::uint64_t send_failures = 0;
    std::uint64_t batches_dropped = 0;
    std::uint64_t docs_dropped = 0;
    std::size_t buffered_batches = 0;
};

/// Batches docs per index and POSTs them to an external bulk indexer in
/// arrival order. Failed posts are retried with exponential backoff; when
/// more than max_buffered_batches are waiting the oldest is dropped.
class BulkForwarder {
public:
    explicit BulkForwarder(BulkOptions opts);
    ~BulkForwarder();
    BulkForwarder(const BulkForwarder&) = delete;
    BulkForwarder& operator=(const BulkForwarder&) = delete;

    void add(const std::string& index, std::string_view doc);
    /// Seals open batches and waits until nothing is buffered.
    bool flush(std::chrono::milliseconds timeout);
    BulkStats stats() const;

private:
    void run();
    void seal_locked(std::map<std::string, BulkBatch>::iterator it);
    bool post(const BulkBatch& b);

    BulkOptions opts_;
    std::string host_;
    int port_ = 80;
    std::string path_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::string, BulkBatch> open_;
    std::deque<BulkBatch> ready_;
    bool in_flight_ = false;
    bool stopping_ = false;
    BulkStats stats_;
    std::thread worker_;
};

} // namespace loginson::receptor
