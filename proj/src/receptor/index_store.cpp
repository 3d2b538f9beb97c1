#include "loginson/receptor/index_store.hpp"

#include "loginson/error.hpp"
#include "loginson/pipeline/processing.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>

namespace fs = std::filesystem;

namespace loginson::receptor {

std::string sanitize_index_name(std::string_view name) {
    if (name.empty()) throw Error(Errc::InvalidName, "empty index name");
    std::string out;
    out.reserve(name.size());
    for (unsigned char c : name) {
        if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
        const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
        out.push_back(ok ? static_cast<char>(c) : '_');
    }
    return out;
}

const char* to_string(FieldKind k) noexcept {
    switch (k) {
    case FieldKind::Number: return "number";
    case FieldKind::String: return "string";
    case FieldKind::Timestamp: return "timestamp";
    }
    return "?";
}

namespace {

std::optional<FieldKind> kind_of(const nlohmann::json& v) {
    if (v.is_number()) return FieldKind::Number;
    if (v.is_string()) {
        const auto& s = v.get_ref<const std::string&>();
        return pipeline::parse_timestamp(s) ? FieldKind::Timestamp : FieldKind::String;
    }
    return std::nullopt;
}

bool fits(FieldKind mapped, const nlohmann::json& v) {
    switch (mapped) {
    case FieldKind::Number: return v.is_number();
    case FieldKind::String: return v.is_string();
    case FieldKind::Timestamp: return v.is_string() && pipeline::parse_timestamp(v.get_ref<const std::string&>());
    }
    return false;
}

std::FILE* open_append(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "ab");
    if (!f) throw Error(Errc::IoError, "cannot open " + path);
    return f;
}

struct Parsed {
    std::uint64_t ts = 0;
    std::string index;
    nlohmann::json doc;
};

std::optional<Parsed> parse_doc(std::string_view line) {
    Parsed p;
    p.doc = nlohmann::json::parse(line, nullptr, false);
    if (p.doc.is_discarded() || !p.doc.is_object()) return std::nullopt;
    const auto ts = p.doc.find("@ts");
    const auto ix = p.doc.find("@index");
    if (ts == p.doc.end() || ix == p.doc.end() || !ts->is_string() || !ix->is_string()) return std::nullopt;
    const auto t = pipeline::parse_timestamp(ts->get_ref<const std::string&>());
    if (!t) return std::nullopt;
    p.ts = *t;
    p.index = ix->get<std::string>();
    return p;
}

void insert_recent(std::deque<StoredDoc>& recent, StoredDoc doc) {
    if (recent.empty() || doc.ts_ns >= recent.back().ts_ns) {
        recent.push_back(std::move(doc));
        return;
    }
    const auto at = std::upper_bound(recent.begin(), recent.end(), doc.ts_ns,
                                     [](std::uint64_t ts, const StoredDoc& d) { return ts < d.ts_ns; });
    recent.insert(at, std::move(doc));
}

} // namespace

IndexStore::IndexStore(IndexStoreOptions opts) : opts_(std::move(opts)) {
    fs::create_directories(fs::path(opts_.data_dir) / "indexes");
    dead_letter_ = open_append((fs::path(opts_.data_dir) / "dead_letter.ndjson").string());
    quarantine_ = open_append((fs::path(opts_.data_dir) / "quarantine.ndjson").string());
    // Reload indexes left by a previous run: mapping in file order, recent window from the tail.
    for (const auto& entry : fs::directory_iterator(fs::path(opts_.data_dir) / "indexes")) {
        const auto file = entry.path().filename().string();
        const std::string suffix = ".ndjson";
        if (file.size() <= suffix.size() || file.compare(file.size() - suffix.size(), suffix.size(), suffix) != 0) {
            continue;
        }
        const std::string name = file.substr(0, file.size() - suffix.size());
        Index& ix = open_index(name);
        for (const auto& path : {ix.path + ".1", ix.path}) {
            std::ifstream in(path);
            for (std::string line; std::getline(in, line);) {
                auto p = parse_doc(line);
                if (!p) continue;
                for (const auto& [k, v] : p->doc.items()) {
                    if (k == "@ts" || k == "@index" || ix.mapping.count(k)) continue;
                    if (const auto kind = kind_of(v)) ix.mapping.emplace(k, *kind);
                }
                ++ix.docs;
                insert_recent(ix.recent, StoredDoc{p->ts, std::move(line)});
                if (ix.recent.size() > opts_.recent_window) {
                    ix.evicted = true;
                    ix.evicted_max_ts = std::max(ix.evicted_max_ts, ix.recent.front().ts_ns);
                    ix.recent.pop_front();
                }
            }
        }
    }
}

IndexStore::~IndexStore() {
    for (auto& [_, ix] : indexes_) {
        if (ix->file) std::fclose(ix->file);
    }
    if (dead_letter_) std::fclose(dead_letter_);
    if (quarantine_) std::fclose(quarantine_);
}

std::string IndexStore::index_path(const std::string& name) const {
    return (fs::path(opts_.data_dir) / "indexes" / (name + ".ndjson")).string();
}

IndexStore::Index& IndexStore::open_index(const std::string& name) {
    {
        std::shared_lock lock(map_mu_);
        const auto it = indexes_.find(name);
        if (it != indexes_.end()) return *it->second;
    }
    std::unique_lock lock(map_mu_);
    auto& slot = indexes_[name];
    if (!slot) {
        auto ix = std::make_unique<Index>();
        ix->name = name;
        ix->path = index_path(name);
        ix->file = open_append(ix->path);
        std::error_code ec;
        ix->file_bytes = fs::file_size(ix->path, ec);
        slot = std::move(ix);
    }
    return *slot;
}

std::string IndexStore::ensure_index(std::string_view name) {
    const std::string clean = sanitize_index_name(name);
    open_index(clean);
    return clean;
}

void IndexStore::write_side(std::FILE* f, std::string_view line) {
    std::fwrite(line.data(), 1, line.size(), f);
    std::fputc('\n', f);
}

void IndexStore::roll(Index& ix) {
    std::fclose(ix.file);
    std::error_code ec;
    fs::remove(ix.path + ".1", ec);
    fs::rename(ix.path, ix.path + ".1", ec);
    ix.file = open_append(ix.path);
    ix.file_bytes = 0;
}

IngestStatus IndexStore::ingest(std::string_view line, std::string* stored_index) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    auto parsed = parse_doc(line);
    std::string name;
    if (parsed) {
        try {
            name = sanitize_index_name(parsed->index);
        } catch (const Error&) {
            parsed.reset();
        }
    }
    if (!parsed) {
        write_side(dead_letter_, line);
        malformed_.fetch_add(1, std::memory_order_relaxed);
        return IngestStatus::Malformed;
    }
    Index& ix = open_index(name);

    std::vector<std::pair<std::string, FieldKind>> fresh;
    for (const auto& [k, v] : parsed->doc.items()) {
        if (k == "@ts" || k == "@index" || v.is_null()) continue;
        const auto it = ix.mapping.find(k);
        if (it != ix.mapping.end()) {
            if (fits(it->second, v)) continue;
        } else if (const auto kind = kind_of(v)) {
            fresh.emplace_back(k, *kind);
            continue;
        }
        write_side(quarantine_, line);
        quarantined_.fetch_add(1, std::memory_order_relaxed);
        return IngestStatus::Quarantined;
    }

    std::string stored;
    if (parsed->index != name) {
        parsed->doc["@index"] = name;
        stored = parsed->doc.dump();
    } else {
        stored.assign(line);
    }
    {
        std::unique_lock lock(ix.mu);
        for (auto& [k, kind] : fresh) ix.mapping.emplace(std::move(k), kind);
        std::fwrite(stored.data(), 1, stored.size(), ix.file);
        std::fputc('\n', ix.file);
        ix.file_bytes += stored.size() + 1;
        ++ix.docs;
        insert_recent(ix.recent, StoredDoc{parsed->ts, std::move(stored)});
        if (ix.recent.size() > opts_.recent_window) {
            ix.evicted = true;
            ix.evicted_max_ts = std::max(ix.evicted_max_ts, ix.recent.front().ts_ns);
            ix.recent.pop_front();
        }
        if (ix.file_bytes >= opts_.max_file_bytes) roll(ix);
    }
    stored_.fetch_add(1, std::memory_order_relaxed);
    if (stored_index) *stored_index = name;
    return IngestStatus::Stored;
}

void IndexStore::flush() {
    std::shared_lock lock(map_mu_);
    for (auto& [_, ix] : indexes_) {
        std::unique_lock ilock(ix->mu);
        std::fflush(ix->file);
    }
    std::fflush(dead_letter_);
    std::fflush(quarantine_);
}

std::vector<IndexInfo> IndexStore::list() const {
    std::vector<IndexInfo> out;
    std::shared_lock lock(map_mu_);
    for (const auto& [name, ix] : indexes_) {
        std::shared_lock ilock(ix->mu);
        out.push_back({name, ix->docs, ix->mapping});
    }
    return out;
}

std::vector<StoredDoc> IndexStore::scan_files(const std::string& index) const {
    std::vector<StoredDoc> docs;
    const std::string path = index_path(index);
    for (const auto& p : {path + ".1", path}) {
        std::ifstream in(p);
        for (std::string line; std::getline(in, line);) {
            if (auto d = parse_doc(line)) docs.push_back({d->ts, std::move(line)});
        }
    }
    std::stable_sort(docs.begin(), docs.end(), [](const StoredDoc& a, const StoredDoc& b) { return a.ts_ns < b.ts_ns; });
    return docs;
}

std::vector<StoredDoc> IndexStore::query(std::string_view index, const Interval& q, std::size_t limit,
                                         Order order) const {
    if (q.from_ts_ns > q.to_ts_ns) throw Error(Errc::InvalidInterval, "from_ts_ns > to_ts_ns");
    const Index* ix = nullptr;
    {
        std::shared_lock lock(map_mu_);
        const auto it = indexes_.find(std::string(index));
        if (it == indexes_.end()) throw Error(Errc::UnknownIndex, "no index '" + std::string(index) + "'");
        ix = it->second.get();
    }
    std::vector<StoredDoc> hits;
    std::shared_lock lock(ix->mu);
    if (!ix->evicted || q.from_ts_ns > ix->evicted_max_ts) {
        auto it = std::lower_bound(ix->recent.begin(), ix->recent.end(), q.from_ts_ns,
                                   [](const StoredDoc& d, std::uint64_t ts) { return d.ts_ns < ts; });
        for (; it != ix->recent.end() && it->ts_ns <= q.to_ts_ns; ++it) hits.push_back(*it);
    } else {
        std::fflush(ix->file);
        for (auto& d : scan_files(ix->name)) {
            if (d.ts_ns >= q.from_ts_ns && d.ts_ns <= q.to_ts_ns) hits.push_back(std::move(d));
        }
    }
    if (order == Order::Desc) std::reverse(hits.begin(), hits.end());
    if (limit > 0 && hits.size() > limit) hits.resize(limit);
    return hits;
}

} // namespace loginson::receptor
