#include "loginson/dbnode/catalog.hpp"

#include "loginson/error.hpp"

#include <sqlite3.h>

#include <map>

namespace loginson::dbnode {

namespace {

constexpr std::uint64_t kSignBit = 1ull << 63;

std::int64_t to_db(std::uint64_t v) noexcept { return static_cast<std::int64_t>(v ^ kSignBit); }
std::uint64_t from_db(std::int64_t v) noexcept { return static_cast<std::uint64_t>(v) ^ kSignBit; }

class Stmt {
public:
    Stmt(sqlite3* db, const std::string& sql) : db_(db) {
        if (sqlite3_prepare_v2(db, sql.c_str(), -1, &s_, nullptr) != SQLITE_OK) {
            throw Error(Errc::IoError, std::string("catalog: ") + sqlite3_errmsg(db));
        }
    }
    ~Stmt() { sqlite3_finalize(s_); }
    Stmt(const Stmt&) = delete;
    Stmt& operator=(const Stmt&) = delete;

    void reset() { sqlite3_reset(s_); }
    void bind(int i, std::int64_t v) { sqlite3_bind_int64(s_, i, v); }
    void bind(int i, const std::string& v) { sqlite3_bind_text(s_, i, v.c_str(), -1, SQLITE_TRANSIENT); }
    bool step() {
        const int rc = sqlite3_step(s_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        throw Error(Errc::IoError, std::string("catalog: ") + sqlite3_errmsg(db_));
    }
    std::int64_t i64(int col) const { return sqlite3_column_int64(s_, col); }
    std::string text(int col) const {
        const auto* p = sqlite3_column_text(s_, col);
        return p ? reinterpret_cast<const char*>(p) : "";
    }

private:
    sqlite3* db_;
    sqlite3_stmt* s_ = nullptr;
};

constexpr const char* kColumns = "s.id, s.path, s.min_ts, s.max_ts, s.records, s.bytes, s.sealed";

} // namespace

Catalog::Catalog(const std::string& db_path) {
    if (sqlite3_open_v2(db_path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
        const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
        sqlite3_close(db_);
        db_ = nullptr;
        throw Error(Errc::IoError, "catalog: cannot open " + db_path + ": " + msg);
    }
    exec("PRAGMA journal_mode=WAL");
    exec("PRAGMA synchronous=NORMAL");
    exec("PRAGMA foreign_keys=ON");
    exec("CREATE TABLE IF NOT EXISTS segments ("
         " id INTEGER PRIMARY KEY, path TEXT NOT NULL, min_ts INTEGER NOT NULL, max_ts INTEGER NOT NULL,"
         " records INTEGER NOT NULL, bytes INTEGER NOT NULL, sealed INTEGER NOT NULL)");
    exec("CREATE TABLE IF NOT EXISTS segment_types ("
         " segment_id INTEGER NOT NULL REFERENCES segments(id) ON DELETE CASCADE, type_id INTEGER NOT NULL,"
         " PRIMARY KEY (segment_id, type_id))");
    exec("CREATE INDEX IF NOT EXISTS segments_min_ts ON segments(min_ts)");
    exec("CREATE INDEX IF NOT EXISTS segments_max_ts ON segments(max_ts)");
    exec("CREATE INDEX IF NOT EXISTS segment_types_type ON segment_types(type_id, segment_id)");
}

Catalog::~Catalog() { sqlite3_close(db_); }

void Catalog::exec(const char* sql) const {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown error";
        sqlite3_free(err);
        throw Error(Errc::IoError, "catalog: " + msg);
    }
}

void Catalog::insert(const CatalogEntry& e) {
    std::lock_guard lock(mu_);
    exec("BEGIN IMMEDIATE");
    try {
        Stmt s(db_, "INSERT INTO segments (id, path, min_ts, max_ts, records, bytes, sealed) VALUES (?,?,?,?,?,?,?)");
        s.bind(1, static_cast<std::int64_t>(e.segment_id));
        s.bind(2, e.path);
        s.bind(3, to_db(e.min_ts_ns));
        s.bind(4, to_db(e.max_ts_ns));
        s.bind(5, static_cast<std::int64_t>(e.record_count));
        s.bind(6, static_cast<std::int64_t>(e.byte_size));
        s.bind(7, e.sealed ? 1 : 0);
        s.step();
        Stmt t(db_, "INSERT OR IGNORE INTO segment_types (segment_id, type_id) VALUES (?,?)");
        for (std::uint32_t type : e.type_set) {
            t.reset();
            t.bind(1, static_cast<std::int64_t>(e.segment_id));
            t.bind(2, static_cast<std::int64_t>(type));
            t.step();
        }
        exec("COMMIT");
    } catch (...) {
        exec("ROLLBACK");
        throw;
    }
}

void Catalog::remove(std::uint64_t segment_id) {
    std::lock_guard lock(mu_);
    Stmt s(db_, "DELETE FROM segments WHERE id = ?");
    s.bind(1, static_cast<std::int64_t>(segment_id));
    s.step();
}

std::vector<CatalogEntry> Catalog::query(const std::string& sql, const Interval* q, std::uint32_t type_id) const {
    std::lock_guard lock(mu_);
    std::vector<CatalogEntry> out;
    {
        Stmt s(db_, sql);
        int i = 1;
        if (q) {
            s.bind(i++, to_db(q->to_ts_ns));
            s.bind(i++, to_db(q->from_ts_ns));
        }
        if (type_id != 0) s.bind(i++, static_cast<std::int64_t>(type_id));
        while (s.step()) {
            CatalogEntry e;
            e.segment_id = static_cast<std::uint64_t>(s.i64(0));
            e.path = s.text(1);
            e.min_ts_ns = from_db(s.i64(2));
            e.max_ts_ns = from_db(s.i64(3));
            e.record_count = static_cast<std::uint64_t>(s.i64(4));
            e.byte_size = static_cast<std::uint64_t>(s.i64(5));
            e.sealed = s.i64(6) != 0;
            out.push_back(std::move(e));
        }
    }
    if (out.empty()) return out;
    std::map<std::uint64_t, CatalogEntry*> by_id;
    for (auto& e : out) by_id[e.segment_id] = &e;
    Stmt t(db_, "SELECT segment_id, type_id FROM segment_types WHERE segment_id BETWEEN ? AND ? ORDER BY segment_id, type_id");
    t.bind(1, static_cast<std::int64_t>(by_id.begin()->first));
    t.bind(2, static_cast<std::int64_t>(by_id.rbegin()->first));
    while (t.step()) {
        auto it = by_id.find(static_cast<std::uint64_t>(t.i64(0)));
        if (it != by_id.end()) it->second->type_set.push_back(static_cast<std::uint32_t>(t.i64(1)));
    }
    return out;
}

std::vector<CatalogEntry> Catalog::lookup(const Interval& q, std::uint32_t type_id) const {
    std::string sql = std::string("SELECT ") + kColumns + " FROM segments s WHERE s.min_ts <= ? AND s.max_ts >= ?";
    if (type_id != 0) {
        sql += " AND EXISTS (SELECT 1 FROM segment_types t WHERE t.segment_id = s.id AND t.type_id = ?)";
    }
    sql += " ORDER BY s.min_ts, s.id";
    return query(sql, &q, type_id);
}

std::vector<CatalogEntry> Catalog::all() const {
    return query(std::string("SELECT ") + kColumns + " FROM segments s ORDER BY s.min_ts, s.id", nullptr, 0);
}

std::uint64_t Catalog::max_segment_id() const {
    std::lock_guard lock(mu_);
    Stmt s(db_, "SELECT COALESCE(MAX(id), 0) FROM segments");
    s.step();
    return static_cast<std::uint64_t>(s.i64(0));
}

std::size_t Catalog::size() const {
    std::lock_guard lock(mu_);
    Stmt s(db_, "SELECT COUNT(*) FROM segments");
    s.step();
    return static_cast<std::size_t>(s.i64(0));
}

} // namespace loginson::dbnode
