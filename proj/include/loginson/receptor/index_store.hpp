#pragma once

#include "loginson/record.hpp"

#include "json.hpp"

#include <atomic>
#include <cstdio>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace loginson::receptor {

/// Lowercases and maps every byte outside [a-z0-9_-] to '_'.
/// Throws Error{InvalidName} for an empty name.
std::string sanitize_index_name(std::string_view name);

enum class FieldKind { Number, String, Timestamp };
const char* to_string(FieldKind k) noexcept;

enum class Order { Asc, Desc };

struct StoredDoc {
    std::uint64_t ts_ns = 0;
    std::string json; // one line, no newline
};

/// Outcome of indexing one line.
enum class IngestStatus { Stored, Malformed, Quarantined };

struct IndexInfo {
    std::string name;
    std::uint64_t docs = 0;
    std::map<std::string, FieldKind> mapping;
};

struct IndexStoreOptions {
    std::string data_dir;
    std::size_t recent_window = 100000;
    std::uint64_t max_file_bytes = std::uint64_t{1} << 30;
};

/// Per-index newline-JSON files plus a time-ordered in-memory window of the
/// most recent docs. ingest() is meant for a single indexing thread; list and
/// query may run concurrently with it.
class IndexStore {
public:
    explicit IndexStore(IndexStoreOptions opts);
    ~IndexStore();

    /// `stored_index` receives the target index of a stored doc.
    IngestStatus ingest(std::string_view line, std::string* stored_index = nullptr);
    /// Flushes file buffers so file scans see every stored doc.
    void flush();

    /// Idempotent. Throws Error{InvalidName}.
    std::string ensure_index(std::string_view name);

    std::vector<IndexInfo> list() const;
    /// Docs with from <= @ts <= to, ordered by @ts (ties in arrival order;
    /// Desc is the exact reverse), truncated to limit. Throws
    /// Error{UnknownIndex} / Error{InvalidInterval}.
    std::vector<StoredDoc> query(std::string_view index, const Interval& q, std::size_t limit, Order order) const;
    /// Reads the index file(s) directly; the reference the window must match.
    std::vector<StoredDoc> scan_files(const std::string& index) const;

    std::uint64_t malformed() const noexcept { return malformed_; }
    std::uint64_t quarantined() const noexcept { return quarantined_; }
    std::uint64_t stored() const noexcept { return stored_; }
    std::string index_path(const std::string& name) const;

private:
    struct Index {
        std::string name;
        std::string path;
        std::FILE* file = nullptr;
        std::uint64_t file_bytes = 0;
        std::uint64_t docs = 0;
        std::map<std::string, FieldKind> mapping;
        std::deque<StoredDoc> recent;
        bool evicted = false;
        std::uint64_t evicted_max_ts = 0;
        mutable std::shared_mutex mu;
    };

    Index& open_index(const std::string& name);
    void write_side(std::FILE* f, std::string_view line);
    void roll(Index& ix);

    IndexStoreOptions opts_;
    mutable std::shared_mutex map_mu_;
    std::map<std::string, std::unique_ptr<Index>> indexes_;
    std::FILE* dead_letter_ = nullptr;
    std::FILE* quarantine_ = nullptr;
    std::atomic<std::uint64_t> malformed_{0}, quarantined_{0}, stored_{0};
};

} // namespace loginson::receptor
