#pragma once

#include "loginson/record.hpp"

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

struct sqlite3;

namespace loginson::dbnode {

struct CatalogEntry {
    std::uint64_t segment_id = 0;
    std::string path;
    std::uint64_t min_ts_ns = 0;
    std::uint64_t max_ts_ns = 0;
    std::vector<std::uint32_t> type_set; // sorted, distinct
    std::uint64_t record_count = 0;
    std::uint64_t byte_size = 0;
    bool sealed = true;

    friend bool operator==(const CatalogEntry&, const CatalogEntry&) = default;
};

/// Segment index in SQLite. Unsigned 64-bit values are stored with the sign
/// bit flipped so SQLite's signed ordering matches unsigned ordering.
class Catalog {
public:
    /// Opens or creates the database. Throws Error{IoError}.
    explicit Catalog(const std::string& db_path);
    ~Catalog();
    Catalog(const Catalog&) = delete;
    Catalog& operator=(const Catalog&) = delete;

    /// Inserts the entry and its type set in one transaction.
    void insert(const CatalogEntry& e);
    void remove(std::uint64_t segment_id);

    /// Entries with [min_ts, max_ts] overlapping q that contain type_id (any
    /// type when type_id is 0), ordered by min_ts then segment id.
    std::vector<CatalogEntry> lookup(const Interval& q, std::uint32_t type_id) const;
    std::vector<CatalogEntry> all() const;
    std::uint64_t max_segment_id() const;
    std::size_t size() const;

private:
    std::vector<CatalogEntry> query(const std::string& sql, const Interval* q, std::uint32_t type_id) const;
    void exec(const char* sql) const;

    sqlite3* db_ = nullptr;
    mutable std::mutex mu_;
};

} // namespace loginson::dbnode
