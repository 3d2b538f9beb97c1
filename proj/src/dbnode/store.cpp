#include "loginson/dbnode/store.hpp"

#include "loginson/error.hpp"

#include <fcntl.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;

namespace loginson::dbnode {

const char* to_string(ScanStatus s) noexcept {
    switch (s) {
    case ScanStatus::Done: return "DONE";
    case ScanStatus::Cancelled: return "CANCELLED";
    case ScanStatus::Failed: return "FAILED";
    }
    return "?";
}

namespace {

constexpr const char* kSegmentPrefix = "segment-";
constexpr const char* kSegmentSuffix = ".lgs";
constexpr const char* kTmpSuffix = ".lgs.tmp";

double read_rate(const StoreOptions& o) {
    if (o.max_write_bytes_per_s <= 0) return 0;
    return std::max(1.0 - o.utilization_cap, o.min_read_share) * o.max_write_bytes_per_s;
}

std::uint64_t steady_ns() { return SteadyClock::instance().now_ns(); }

[[noreturn]] void throw_io(const std::string& what) {
    throw Error(Errc::IoError, what + ": " + std::strerror(errno));
}

void write_all_fd(int fd, const std::uint8_t* p, std::size_t n, const std::string& path) {
    while (n > 0) {
        const ssize_t w = ::write(fd, p, n);
        if (w < 0) {
            if (errno == EINTR) continue;
            throw_io("write " + path);
        }
        p += w;
        n -= static_cast<std::size_t>(w);
    }
}

std::optional<std::uint64_t> segment_id_from_name(const std::string& name) {
    const std::string prefix = kSegmentPrefix;
    const std::string suffix = kSegmentSuffix;
    if (name.size() <= prefix.size() + suffix.size() || name.compare(0, prefix.size(), prefix) != 0 ||
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
        return std::nullopt;
    }
    std::uint64_t id = 0;
    const char* b = name.data() + prefix.size();
    const char* e = name.data() + name.size() - suffix.size();
    auto [ptr, ec] = std::from_chars(b, e, id);
    if (ec != std::errc() || ptr != e) return std::nullopt;
    return id;
}

void set_idle_io_priority() {
#ifdef SYS_ioprio_set
    constexpr int kWhoProcess = 1; // IOPRIO_WHO_PROCESS; pid 0 = calling thread
    constexpr int kClassIdle = 3;
    constexpr int kClassShift = 13;
    ::syscall(SYS_ioprio_set, kWhoProcess, 0, kClassIdle << kClassShift);
#endif
}

} // namespace

SegmentStore::SegmentStore(StoreOptions opts)
    : opts_(std::move(opts)),
      clock_(opts_.clock ? *opts_.clock : SteadyClock::instance()),
      throttle_(opts_.max_write_bytes_per_s, opts_.utilization_cap, static_cast<double>(opts_.write_chunk_bytes), clock_),
      device_(opts_.device_bytes_per_s, static_cast<double>(opts_.write_chunk_bytes), clock_),
      read_pacer_(read_rate(opts_), static_cast<double>(opts_.read_chunk_bytes), clock_) {
    if (opts_.data_dir.empty()) throw Error(Errc::InvalidConfig, "data_dir is required");
    if (opts_.segment_bytes < kHeaderSize + 1) throw Error(Errc::InvalidConfig, "segment_bytes too small");
    if (opts_.buffer_pool < 2) throw Error(Errc::InvalidConfig, "buffer_pool must be >= 2");
    if (opts_.write_chunk_bytes == 0 || opts_.read_chunk_bytes == 0) {
        throw Error(Errc::InvalidConfig, "chunk sizes must be positive");
    }
    std::error_code ec;
    fs::create_directories(opts_.data_dir, ec);
    if (ec) throw Error(Errc::IoError, "cannot create " + opts_.data_dir + ": " + ec.message());
    catalog_ = std::make_unique<Catalog>((fs::path(opts_.data_dir) / "catalog.sqlite").string());
    recover();
    last_append_ns_ = steady_ns();
    flusher_ = std::thread([this] { flusher_loop(); });
}

SegmentStore::~SegmentStore() { close(); }

std::string SegmentStore::segment_path(std::uint64_t id) const {
    return (fs::path(opts_.data_dir) / (kSegmentPrefix + std::to_string(id) + kSegmentSuffix)).string();
}

void SegmentStore::recover() {
    std::uint64_t max_id = catalog_->max_segment_id();
    std::set<std::uint64_t> cataloged;
    for (const auto& e : catalog_->all()) {
        if (!fs::exists(e.path)) {
            std::cerr << "dbnode: catalog entry " << e.segment_id << " has no file (" << e.path << "), dropping it\n";
            catalog_->remove(e.segment_id);
            continue;
        }
        cataloged.insert(e.segment_id);
    }
    std::vector<std::pair<std::uint64_t, fs::path>> orphans;
    for (const auto& de : fs::directory_iterator(opts_.data_dir)) {
        const std::string name = de.path().filename().string();
        if (name.size() > std::strlen(kTmpSuffix) &&
            name.compare(name.size() - std::strlen(kTmpSuffix), std::strlen(kTmpSuffix), kTmpSuffix) == 0) {
            fs::remove(de.path());
            continue;
        }
        const auto id = segment_id_from_name(name);
        if (!id) continue;
        max_id = std::max(max_id, *id);
        if (!cataloged.count(*id)) orphans.emplace_back(*id, de.path());
    }
    std::sort(orphans.begin(), orphans.end());
    for (const auto& [id, path] : orphans) {
        CatalogEntry e;
        e.segment_id = id;
        e.path = path.string();
        e.min_ts_ns = UINT64_MAX;
        std::set<std::uint32_t> types;
        std::uint64_t good = 0;
        {
            const int fd = ::open(e.path.c_str(), O_RDONLY | O_CLOEXEC);
            if (fd < 0) throw_io("open " + e.path);
            std::vector<std::uint8_t> buf;
            std::vector<std::uint8_t> chunk(opts_.read_chunk_bytes);
            bool corrupt = false;
            for (;;) {
                const ssize_t n = ::read(fd, chunk.data(), chunk.size());
                if (n < 0) {
                    if (errno == EINTR) continue;
                    ::close(fd);
                    throw_io("read " + e.path);
                }
                if (n == 0) break;
                buf.insert(buf.end(), chunk.begin(), chunk.begin() + n);
                FrameCursor cur(buf);
                try {
                    while (auto rv = cur.next()) {
                        ++e.record_count;
                        e.min_ts_ns = std::min(e.min_ts_ns, rv->header.ingest_ts_ns);
                        e.max_ts_ns = std::max(e.max_ts_ns, rv->header.ingest_ts_ns);
                        types.insert(rv->header.type_id);
                    }
                } catch (const Error&) {
                    corrupt = true;
                }
                good += cur.offset();
                buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(cur.offset()));
                if (corrupt) break;
            }
            ::close(fd);
        }
        const std::uint64_t size = fs::file_size(path);
        if (good < size) {
            std::cerr << "dbnode: truncating " << e.path << " from " << size << " to " << good << " bytes\n";
            fs::resize_file(path, good);
        }
        if (e.record_count == 0) {
            fs::remove(path);
            continue;
        }
        e.byte_size = good;
        e.type_set.assign(types.begin(), types.end());
        std::cerr << "dbnode: re-cataloged orphan segment " << id << " (" << e.record_count << " records)\n";
        catalog_->insert(e);
    }
    next_segment_id_ = max_id + 1;
}

SegmentStore::Buffer* SegmentStore::take_free_locked(std::unique_lock<std::mutex>& lock) {
    for (;;) {
        if (!free_.empty()) {
            Buffer* b = free_.back();
            free_.pop_back();
            b->reset();
            return b;
        }
        if (buffers_.size() < opts_.buffer_pool) {
            auto b = std::make_unique<Buffer>();
            b->data.reset(new std::uint8_t[opts_.segment_bytes]);
            buffers_.push_back(std::move(b));
            return buffers_.back().get();
        }
        if (stopping_) throw Error(Errc::PoolExhausted, "store is closing");
        // Pool exhausted: block the caller, which stops reading its socket.
        free_cv_.wait(lock);
    }
}

void SegmentStore::seal_locked() {
    if (!active_ || active_->fill == 0) return;
    flush_queue_.emplace_back(active_, next_segment_id_++);
    active_ = nullptr;
    flush_cv_.notify_all();
}

void SegmentStore::append_batch(std::span<const std::uint8_t> framed) {
    std::unique_lock lock(mu_);
    std::size_t off = 0;
    std::uint64_t recs = 0;
    while (off + kHeaderSize <= framed.size()) {
        const auto hdr = std::span<const std::uint8_t, kHeaderSize>(framed.data() + off, kHeaderSize);
        const std::size_t size = kHeaderSize + peek_payload_len(hdr);
        if (off + size > framed.size()) break;
        if (size > opts_.segment_bytes) {
            records_rejected_.fetch_add(1, std::memory_order_relaxed);
            off += size;
            continue;
        }
        if (active_ && active_->fill + size > opts_.segment_bytes) seal_locked();
        if (!active_) active_ = take_free_locked(lock);
        Buffer& b = *active_;
        std::memcpy(b.data.get() + b.fill, framed.data() + off, size);
        b.fill += size;
        ++b.records;
        const std::uint64_t ts = peek_ingest_ts(hdr);
        b.min_ts = std::min(b.min_ts, ts);
        b.max_ts = std::max(b.max_ts, ts);
        b.types.insert(peek_type_id(hdr));
        if (b.fill == opts_.segment_bytes) seal_locked();
        off += size;
        ++recs;
    }
    last_append_ns_ = steady_ns();
    records_appended_.fetch_add(recs, std::memory_order_relaxed);
    bytes_appended_.fetch_add(off, std::memory_order_relaxed);
}

void SegmentStore::append(const LogRecord& rec) {
    std::vector<std::uint8_t> bytes;
    append_framed(bytes, rec.header, rec.payload);
    append_batch(bytes);
}

void SegmentStore::seal() {
    std::lock_guard lock(mu_);
    seal_locked();
}

void SegmentStore::seal_if_idle() {
    std::lock_guard lock(mu_);
    if (active_ && active_->fill > 0 &&
        steady_ns() - last_append_ns_ >= static_cast<std::uint64_t>(opts_.idle_flush.count()) * 1'000'000ull) {
        seal_locked();
    }
}

bool SegmentStore::flush_all(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    seal_locked();
    return idle_cv_.wait_for(lock, timeout, [this] { return flush_queue_.empty() || crashed_; }) && !crashed_;
}

void SegmentStore::write_segment(Buffer& b, const CatalogEntry& e) {
    const std::string tmp = e.path.substr(0, e.path.size() - std::strlen(kSegmentSuffix)) + kTmpSuffix;
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw_io("open " + tmp);
    try {
        std::size_t off = 0;
        while (off < b.fill) {
            const std::size_t n = std::min(opts_.write_chunk_bytes, b.fill - off);
            throttle_.acquire(n);
            device_.acquire(n);
            if (fault_hook_ && fault_hook_()) {
                errno = EIO;
                throw_io("write " + tmp);
            }
            write_all_fd(fd, b.data.get() + off, n, tmp);
            off += n;
            bytes_flushed_.fetch_add(n, std::memory_order_relaxed);
        }
        if (opts_.sync_writes && ::fdatasync(fd) != 0) throw_io("fdatasync " + tmp);
        if (::close(fd) != 0) {
            ::unlink(tmp.c_str());
            throw_io("close " + tmp);
        }
    } catch (...) {
        ::close(fd);
        ::unlink(tmp.c_str());
        throw;
    }
    if (::rename(tmp.c_str(), e.path.c_str()) != 0) {
        const int err = errno;
        ::unlink(tmp.c_str());
        errno = err;
        throw_io("rename " + tmp);
    }
}

void SegmentStore::flusher_loop() {
    std::unique_lock lock(mu_);
    for (;;) {
        const auto tick = std::min<std::chrono::milliseconds>(opts_.idle_flush, std::chrono::milliseconds(100));
        flush_cv_.wait_for(lock, tick, [this] { return stopping_ || !flush_queue_.empty(); });
        if (flush_queue_.empty()) {
            if (stopping_) return;
            if (active_ && active_->fill > 0 &&
                steady_ns() - last_append_ns_ >= static_cast<std::uint64_t>(opts_.idle_flush.count()) * 1'000'000ull) {
                seal_locked();
            }
            continue;
        }
        Buffer* b = flush_queue_.front().first;
        CatalogEntry e;
        e.segment_id = flush_queue_.front().second;
        e.path = segment_path(e.segment_id);
        e.min_ts_ns = b->min_ts;
        e.max_ts_ns = b->max_ts;
        e.type_set.assign(b->types.begin(), b->types.end());
        e.record_count = b->records;
        e.byte_size = b->fill;
        lock.unlock();

        bool crashed = false;
        int attempt = 0;
        bool written = false;
        for (;;) {
            try {
                flushing_.store(true);
                if (!written) {
                    write_segment(*b, e);
                    written = true;
                }
                flushing_.store(false);
                if (crash_hook_ && crash_hook_(e)) {
                    crashed = true;
                    break;
                }
                catalog_->insert(e);
                healthy_.store(true);
                break;
            } catch (const Error& err) {
                flushing_.store(false);
                flush_failures_.fetch_add(1, std::memory_order_relaxed);
                ++attempt;
                if (attempt >= opts_.io_retries && healthy_.exchange(false)) {
                    std::cerr << "dbnode: segment " << e.segment_id << " failed " << attempt
                              << " times, node unhealthy: " << err.what() << "\n";
                }
                const auto wait = opts_.retry_backoff * (1 << std::min(attempt, 6));
                std::unique_lock l2(mu_);
                if (stopping_ && attempt >= opts_.io_retries) {
                    crashed = true;
                    break;
                }
                flush_cv_.wait_for(l2, std::min<std::chrono::milliseconds>(wait, std::chrono::seconds(5)));
            }
        }

        lock.lock();
        if (crashed) {
            crashed_ = true;
            idle_cv_.notify_all();
            return;
        }
        flush_queue_.pop_front();
        b->reset();
        free_.push_back(b);
        segments_flushed_.fetch_add(1, std::memory_order_relaxed);
        free_cv_.notify_all();
        if (flush_queue_.empty()) idle_cv_.notify_all();
    }
}

void SegmentStore::close(std::chrono::milliseconds timeout) {
    if (!flusher_.joinable()) return;
    flush_all(timeout);
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    flush_cv_.notify_all();
    free_cv_.notify_all();
    flusher_.join();
}

std::vector<CatalogEntry> SegmentStore::lookup_segments(const Interval& q, std::uint32_t type_id) const {
    if (!q.valid()) throw Error(Errc::InvalidInterval, "from_ts_ns > to_ts_ns");
    return catalog_->lookup(q, type_id);
}

ScanResult SegmentStore::scan_segments(const std::vector<CatalogEntry>& entries, const Interval& q,
                                       std::uint32_t type_id, const CancelToken& cancel, const RecordFn& on_record,
                                       const SegmentFn& on_segment) {
    if (opts_.idle_io_priority) set_idle_io_priority();
    ScanResult res;
    const auto cancelled = [&] { return cancel && cancel->load(std::memory_order_relaxed); };
    std::vector<std::uint8_t> buf;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (cancelled()) {
            res.status = ScanStatus::Cancelled;
            return res;
        }
        const CatalogEntry& e = entries[i];
        const int fd = ::open(e.path.c_str(), O_RDONLY | O_CLOEXEC);
        if (fd < 0) {
            res.status = ScanStatus::Failed;
            res.error = "open " + e.path + ": " + std::strerror(errno);
            return res;
        }
        buf.clear();
        std::size_t have = 0;
        std::uint64_t file_off = 0;
        bool stop = false;
        for (;;) {
            if (cancelled()) {
                stop = true;
                break;
            }
            if (flushing_.load(std::memory_order_relaxed)) std::this_thread::yield();
            const std::size_t want = static_cast<std::size_t>(
                std::min<std::uint64_t>(opts_.read_chunk_bytes, e.byte_size > file_off ? e.byte_size - file_off : 0));
            if (want > 0) {
                read_pacer_.acquire(want);
                device_.acquire(want);
            }
            if (buf.size() < have + opts_.read_chunk_bytes) buf.resize(have + opts_.read_chunk_bytes);
            const ssize_t n = ::read(fd, buf.data() + have, opts_.read_chunk_bytes);
            if (n < 0) {
                if (errno == EINTR) continue;
                res.status = ScanStatus::Failed;
                res.error = "read " + e.path + ": " + std::strerror(errno);
                ::close(fd);
                return res;
            }
            if (n == 0) break;
            have += static_cast<std::size_t>(n);
            file_off += static_cast<std::uint64_t>(n);
            FrameCursor cur(std::span<const std::uint8_t>(buf.data(), have));
            try {
                while (auto rv = cur.next()) {
                    if ((type_id == 0 || rv->header.type_id == type_id) && q.contains(rv->header.ingest_ts_ns)) {
                        ++res.records;
                        on_record(*rv);
                    }
                }
            } catch (const Error& err) {
                res.status = ScanStatus::Failed;
                res.error = e.path + ": " + err.what();
                ::close(fd);
                return res;
            }
            const std::size_t used = cur.offset();
            std::memmove(buf.data(), buf.data() + used, have - used);
            have -= used;
        }
        ::close(fd);
        if (stop) {
            res.status = ScanStatus::Cancelled;
            return res;
        }
        res.segments_scanned = i + 1;
        if (on_segment) on_segment(res.segments_scanned, entries.size(), res.records);
    }
    return res;
}

StoreStats SegmentStore::stats() const {
    StoreStats s;
    s.records_appended = records_appended_.load();
    s.bytes_appended = bytes_appended_.load();
    s.bytes_flushed = bytes_flushed_.load();
    s.segments_flushed = segments_flushed_.load();
    s.records_rejected = records_rejected_.load();
    s.flush_failures = flush_failures_.load();
    s.healthy = healthy_.load();
    s.flush_in_progress = flushing_.load();
    std::lock_guard lock(mu_);
    s.buffers_pending = flush_queue_.size();
    s.active_fill = active_ ? active_->fill : 0;
    return s;
}

void SegmentStore::set_crash_hook(std::function<bool(const CatalogEntry&)> hook) {
    std::lock_guard lock(mu_);
    crash_hook_ = std::move(hook);
}

void SegmentStore::set_fault_hook(std::function<bool()> hook) {
    std::lock_guard lock(mu_);
    fault_hook_ = std::move(hook);
}

double calibrate_write_speed(const std::string& dir, std::size_t segment_bytes, std::size_t chunk_bytes,
                             TokenBucket* device, int rounds, bool sync) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    const std::string path = (fs::path(dir) / ".calibrate.tmp").string();
    std::vector<std::uint8_t> data(segment_bytes);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::uint8_t>(i * 131 + (i >> 12));
    double best = 0;
    for (int r = 0; r < std::max(rounds, 1); ++r) {
        const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
        if (fd < 0) throw_io("open " + path);
        const auto start = std::chrono::steady_clock::now();
        try {
            for (std::size_t off = 0; off < data.size(); off += chunk_bytes) {
                const std::size_t n = std::min(chunk_bytes, data.size() - off);
                if (device) device->acquire(n);
                write_all_fd(fd, data.data() + off, n, path);
            }
            if (sync && ::fdatasync(fd) != 0) throw_io("fdatasync " + path);
        } catch (...) {
            ::close(fd);
            ::unlink(path.c_str());
            throw;
        }
        ::close(fd);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        best = std::max(best, static_cast<double>(segment_bytes) / std::max(secs, 1e-9));
    }
    ::unlink(path.c_str());
    return best;
}

} // namespace loginson::dbnode
