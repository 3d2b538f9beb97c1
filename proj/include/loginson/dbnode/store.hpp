#pragma once

#include "loginson/dbnode/catalog.hpp"
#include "loginson/dbnode/throttle.hpp"
#include "loginson/record.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace loginson::dbnode {

inline constexpr std::size_t kDefaultSegmentBytes = std::size_t{1} << 30;

struct StoreOptions {
    std::string data_dir;
    std::size_t segment_bytes = kDefaultSegmentBytes;
    std::size_t buffer_pool = 4;
    std::size_t write_chunk_bytes = 1 << 20;
    std::size_t read_chunk_bytes = 1 << 20;
    /// Calibrated W_max in bytes/s; 0 leaves flushes unthrottled.
    double max_write_bytes_per_s = 0;
    double utilization_cap = 0.5;
    /// Scans never read slower than this share of W_max, even when U >= 1.
    double min_read_share = 0.25;
    /// Simulated disk bandwidth shared by flushes and scans; 0 disables it.
    double device_bytes_per_s = 0;
    std::chrono::milliseconds idle_flush{5000};
    int io_retries = 3;
    std::chrono::milliseconds retry_backoff{100};
    bool sync_writes = true;
    /// Best-effort idle I/O priority for scan threads.
    bool idle_io_priority = true;
    Clock* clock = nullptr;
};

using CancelToken = std::shared_ptr<std::atomic<bool>>;
inline CancelToken make_cancel_token() { return std::make_shared<std::atomic<bool>>(false); }

enum class ScanStatus { Done, Cancelled, Failed };
const char* to_string(ScanStatus s) noexcept;

struct ScanResult {
    ScanStatus status = ScanStatus::Done;
    std::uint64_t records = 0;
    std::size_t segments_scanned = 0;
    std::string error;
};

struct StoreStats {
    std::uint64_t records_appended = 0;
    std::uint64_t bytes_appended = 0;
    std::uint64_t bytes_flushed = 0;
    std::uint64_t segments_flushed = 0;
    std::uint64_t records_rejected = 0;
    std::uint64_t flush_failures = 0;
    std::size_t buffers_pending = 0;
    std::size_t active_fill = 0;
    bool healthy = true;
    bool flush_in_progress = false;
};

/// Append-only segment storage: a pool of K segment buffers, one asynchronous
/// flusher writing full buffers as single files, and a SQLite catalog.
class SegmentStore {
public:
    /// Creates data_dir, opens the catalog and runs recovery.
    explicit SegmentStore(StoreOptions opts);
    ~SegmentStore();
    SegmentStore(const SegmentStore&) = delete;
    SegmentStore& operator=(const SegmentStore&) = delete;

    /// Appends a run of complete framed records (headers already validated).
    /// Blocks while every buffer is full or flushing.
    void append_batch(std::span<const std::uint8_t> framed);
    void append(const LogRecord& rec);

    /// Hands the active buffer to the flusher if it holds anything.
    void seal();
    /// Seals and waits for every pending flush to reach the catalog.
    bool flush_all(std::chrono::milliseconds timeout);
    /// Seals the active buffer when nothing was appended for idle_flush.
    void seal_if_idle();

    std::vector<CatalogEntry> lookup_segments(const Interval& q, std::uint32_t type_id) const;

    using RecordFn = std::function<void(const RecordView&)>;
    using SegmentFn = std::function<void(std::size_t scanned, std::size_t total, std::uint64_t records)>;
    /// Streams matching records in segment order then record order. The token
    /// is checked before every read chunk.
    ScanResult scan_segments(const std::vector<CatalogEntry>& entries, const Interval& q, std::uint32_t type_id,
                             const CancelToken& cancel, const RecordFn& on_record,
                             const SegmentFn& on_segment = {});

    StoreStats stats() const;
    const StoreOptions& options() const noexcept { return opts_; }
    const Catalog& catalog() const noexcept { return *catalog_; }
    std::string segment_path(std::uint64_t id) const;

    /// Test hooks. The crash hook runs after a segment file is in place and
    /// before its catalog row is written; returning true abandons the catalog
    /// write and stops the flusher, as a crash would. The fault hook returning
    /// true makes the next write attempt fail with an I/O error.
    void set_crash_hook(std::function<bool(const CatalogEntry&)> hook);
    void set_fault_hook(std::function<bool()> hook);

    /// Stops the flusher after draining (unless crashed).
    void close(std::chrono::milliseconds timeout = std::chrono::seconds(60));

private:
    struct Buffer {
        std::unique_ptr<std::uint8_t[]> data;
        std::size_t fill = 0;
        std::uint64_t records = 0;
        std::uint64_t min_ts = UINT64_MAX;
        std::uint64_t max_ts = 0;
        std::set<std::uint32_t> types;
        void reset() {
            fill = 0;
            records = 0;
            min_ts = UINT64_MAX;
            max_ts = 0;
            types.clear();
        }
    };

    void recover();
    void flusher_loop();
    void write_segment(Buffer& b, const CatalogEntry& e);
    Buffer* take_free_locked(std::unique_lock<std::mutex>& lock);
    void seal_locked();

    StoreOptions opts_;
    Clock& clock_;
    std::unique_ptr<Catalog> catalog_;
    WriteThrottle throttle_;
    TokenBucket device_;
    TokenBucket read_pacer_;

    mutable std::mutex mu_;
    std::condition_variable free_cv_;
    std::condition_variable flush_cv_;
    std::condition_variable idle_cv_;
    std::vector<std::unique_ptr<Buffer>> buffers_;
    std::vector<Buffer*> free_;
    Buffer* active_ = nullptr;
    std::deque<std::pair<Buffer*, std::uint64_t>> flush_queue_;
    std::uint64_t next_segment_id_ = 1;
    std::uint64_t last_append_ns_ = 0;
    bool stopping_ = false;
    bool crashed_ = false;
    std::atomic<bool> flushing_{false};
    std::atomic<bool> healthy_{true};

    std::atomic<std::uint64_t> records_appended_{0};
    std::atomic<std::uint64_t> bytes_appended_{0};
    std::atomic<std::uint64_t> bytes_flushed_{0};
    std::atomic<std::uint64_t> segments_flushed_{0};
    std::atomic<std::uint64_t> records_rejected_{0};
    std::atomic<std::uint64_t> flush_failures_{0};

    std::function<bool(const CatalogEntry&)> crash_hook_;
    std::function<bool()> fault_hook_;
    std::thread flusher_;
};

/// Writes segment_bytes from memory to a scratch file in dir, in chunks,
/// optionally through a shared device limiter, and returns bytes/s (best of
/// `rounds`). Throws Error{IoError}.
double calibrate_write_speed(const std::string& dir, std::size_t segment_bytes, std::size_t chunk_bytes = 1 << 20,
                             TokenBucket* device = nullptr, int rounds = 1, bool sync = true);

} // namespace loginson::dbnode
