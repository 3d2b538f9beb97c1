#include "loginson/error.hpp"
#include "loginson/net.hpp"
#include "loginson/pipeline/processing.hpp"
#include "loginson/receptor/bulk.hpp"
#include "loginson/receptor/index_store.hpp"
#include "loginson/receptor/receptor.hpp"

#include "httplib.h"
#include "json.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

using namespace loginson;
using namespace loginson::receptor;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> n{0};
        path = fs::temp_directory_path() / ("loginson-rcpt-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string doc(const std::string& index, std::uint64_t ts, const std::string& extra = "") {
    std::string s = "{\"@ts\":\"" + pipeline::format_timestamp(ts) + "\",\"@index\":\"" + index + "\"";
    if (!extra.empty()) s += "," + extra;
    return s + "}";
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

IndexStoreOptions opts(const TempDir& d, std::size_t window = 100000) {
    IndexStoreOptions o;
    o.data_dir = d.path.string();
    o.recent_window = window;
    return o;
}

} // namespace

TEST(IndexStore, QueryByInterval) {
    TempDir d;
    IndexStore s(opts(d));
    for (std::uint64_t ts : {1, 2, 3}) ASSERT_EQ(s.ingest(doc("errors", ts)), IngestStatus::Stored);
    const auto hits = s.query("errors", {2, 3}, 0, Order::Asc);
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].ts_ns, 2u);
    EXPECT_EQ(hits[1].ts_ns, 3u);
    EXPECT_TRUE(s.query("errors", {10, 20}, 0, Order::Asc).empty());
    EXPECT_EQ(s.query("errors", {0, 9}, 2, Order::Desc).front().ts_ns, 3u);
}

TEST(IndexStore, MissingIndexGoesToDeadLetter) {
    TempDir d;
    IndexStore s(opts(d));
    const std::string bad = "{\"@ts\":\"1970-01-01T00:00:01Z\",\"count\":1}";
    EXPECT_EQ(s.ingest(bad), IngestStatus::Malformed);
    EXPECT_EQ(s.ingest("not json"), IngestStatus::Malformed);
    s.flush();
    EXPECT_EQ(s.malformed(), 2u);
    const auto dl = read_lines(d.path / "dead_letter.ndjson");
    ASSERT_EQ(dl.size(), 2u);
    EXPECT_EQ(dl[0], bad);
    EXPECT_TRUE(s.list().empty());
}

TEST(IndexStore, MappingFirstWinsAndQuarantines) {
    TempDir d;
    IndexStore s(opts(d));
    EXPECT_EQ(s.ingest(doc("m", 1, "\"count\":4")), IngestStatus::Stored);
    const std::string second = doc("m", 2, "\"count\":\"abc\"");
    EXPECT_EQ(s.ingest(second), IngestStatus::Quarantined);
    EXPECT_EQ(s.ingest(doc("m", 3, "\"when\":\"1970-01-01T00:00:05Z\",\"host\":\"a\"")), IngestStatus::Stored);
    EXPECT_EQ(s.ingest(doc("m", 4, "\"when\":\"yesterday\"")), IngestStatus::Quarantined);
    EXPECT_EQ(s.ingest(doc("m", 5, "\"flag\":true")), IngestStatus::Quarantined);
    EXPECT_EQ(s.ingest(doc("m", 6, "\"count\":null")), IngestStatus::Stored);
    s.flush();
    const auto info = s.list().at(0);
    EXPECT_EQ(info.docs, 3u);
    EXPECT_EQ(info.mapping.at("count"), FieldKind::Number);
    EXPECT_EQ(info.mapping.at("when"), FieldKind::Timestamp);
    EXPECT_EQ(info.mapping.at("host"), FieldKind::String);
    const auto q = read_lines(d.path / "quarantine.ndjson");
    ASSERT_EQ(q.size(), 3u);
    EXPECT_EQ(q[0], second);
    EXPECT_EQ(s.quarantined(), 3u);
}

TEST(IndexStore, EnsureIndexIsIdempotent) {
    TempDir d;
    IndexStore s(opts(d));
    EXPECT_EQ(s.ensure_index("apache_access"), "apache_access");
    EXPECT_EQ(s.ensure_index("apache_access"), "apache_access");
    EXPECT_EQ(s.list().size(), 1u);
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(d.path / "indexes")) ++files;
    EXPECT_EQ(files, 1u);
}

TEST(IndexStore, SanitizesNames) {
    EXPECT_EQ(sanitize_index_name("../etc/passwd"), "___etc_passwd");
    EXPECT_EQ(sanitize_index_name("Apache Access"), "apache_access");
    EXPECT_EQ(sanitize_index_name("a-b_9"), "a-b_9");
    try {
        sanitize_index_name("");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidName);
    }
    TempDir d;
    IndexStore s(opts(d));
    ASSERT_EQ(s.ingest(doc("Web/Errors", 1)), IngestStatus::Stored);
    const auto hits = s.query("web_errors", {0, 10}, 0, Order::Asc);
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(nlohmann::json::parse(hits[0].json).at("@index"), "web_errors");
}

TEST(IndexStore, Errors) {
    TempDir d;
    IndexStore s(opts(d));
    s.ensure_index("x");
    try {
        s.query("nope", {0, 1}, 0, Order::Asc);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::UnknownIndex);
    }
    try {
        s.query("x", {5, 1}, 0, Order::Asc);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidInterval);
    }
}

TEST(IndexStore, ReloadsAfterRestart) {
    TempDir d;
    {
        IndexStore s(opts(d));
        for (std::uint64_t ts = 1; ts <= 10; ++ts) s.ingest(doc("r", ts, "\"n\":1"));
    }
    IndexStore s(opts(d));
    EXPECT_EQ(s.query("r", {0, 100}, 0, Order::Asc).size(), 10u);
    EXPECT_EQ(s.list().at(0).mapping.at("n"), FieldKind::Number);
}

namespace {

using FileRows = std::vector<std::pair<std::uint64_t, std::string>>;

FileRows load_file(const fs::path& file) {
    FileRows rows;
    for (auto& line : read_lines(file)) {
        const auto j = nlohmann::json::parse(line);
        rows.emplace_back(pipeline::parse_timestamp(j.at("@ts").get<std::string>()).value(), std::move(line));
    }
    return rows;
}

std::vector<std::string> brute_force(const FileRows& rows, const Interval& q, std::size_t limit, Order order) {
    FileRows hits;
    for (const auto& r : rows) {
        if (r.first >= q.from_ts_ns && r.first <= q.to_ts_ns) hits.push_back(r);
    }
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    if (order == Order::Desc) std::reverse(hits.begin(), hits.end());
    if (limit > 0 && hits.size() > limit) hits.resize(limit);
    std::vector<std::string> out;
    for (auto& h : hits) out.push_back(std::move(h.second));
    return out;
}

void oracle_run(std::size_t window, std::uint32_t seed) {
    TempDir d;
    IndexStore s(opts(d, window));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::uint64_t> ts_dist(1'000'000'000, 1'000'000'000 + 5'000'000'000ULL);
    for (int i = 0; i < 50000; ++i) {
        // Mostly increasing timestamps with stragglers and deliberate ties.
        std::uint64_t ts = 1'000'000'000 + static_cast<std::uint64_t>(i) * 100'000;
        if (rng() % 10 == 0) ts = ts_dist(rng);
        if (rng() % 20 == 0) ts = 1'000'000'000 + (rng() % 50) * 100'000'000;
        ASSERT_EQ(s.ingest(doc("oracle", ts, "\"seq\":" + std::to_string(i))), IngestStatus::Stored);
    }
    s.flush();
    const auto rows = load_file(s.index_path("oracle"));
    for (int q = 0; q < 200; ++q) {
        std::uint64_t a = ts_dist(rng), b = ts_dist(rng);
        if (a > b) std::swap(a, b);
        if (q % 10 == 0) a = 0;
        const std::size_t limit = q % 3 == 0 ? 0 : 1 + rng() % 2000;
        const Order order = q % 2 ? Order::Desc : Order::Asc;
        const auto got = s.query("oracle", {a, b}, limit, order);
        const auto want = brute_force(rows, {a, b}, limit, order);
        ASSERT_EQ(got.size(), want.size()) << "query " << q;
        for (std::size_t i = 0; i < got.size(); ++i) ASSERT_EQ(got[i].json, want[i]) << "query " << q << " row " << i;
    }
}

} // namespace

TEST(IndexStore, RandomQueriesMatchFileScanFromWindow) { oracle_run(100000, 7); }

TEST(IndexStore, RandomQueriesMatchFileScanAfterEviction) { oracle_run(1000, 11); }

namespace {

/// Minimal bulk sink that records every POST body.
struct FakeSink {
    httplib::Server server;
    std::mutex mu;
    std::vector<std::string> bodies;
    std::thread thread;
    int port = 0;

    explicit FakeSink(int fixed_port = 0) {
        server.Post("/_bulk", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mu);
            bodies.push_back(req.body);
            res.status = 200;
        });
        port = fixed_port ? (server.bind_to_port("127.0.0.1", fixed_port) ? fixed_port : -1)
                          : server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeSink() {
        server.stop();
        thread.join();
    }
    std::vector<std::string> docs() {
        std::lock_guard lock(mu);
        std::vector<std::string> out;
        for (const auto& b : bodies) {
            std::istringstream in(b);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) out.push_back(line);
        }
        return out;
    }
};

int free_port() {
    net::TcpListener l(net::Endpoint{"127.0.0.1", 0});
    return l.port();
}

BulkOptions bulk_opts(int port) {
    BulkOptions o;
    o.url = "http://127.0.0.1:" + std::to_string(port) + "/_bulk";
    o.max_docs = 10;
    o.max_delay = std::chrono::milliseconds(50);
    o.backoff_initial = std::chrono::milliseconds(50);
    o.backoff_max = std::chrono::milliseconds(1000);
    o.request_timeout = std::chrono::milliseconds(1000);
    return o;
}

} // namespace

TEST(Bulk, BatchHeaderAndOrder) {
    BulkBatch b{"idx", {"{\"a\":1}", "{\"a\":2}"}, {}};
    EXPECT_EQ(b.body(), "{\"index\":\"idx\"}\n{\"a\":1}\n{\"a\":2}\n");
}

TEST(Bulk, SinkOkClearsBatches) {
    FakeSink sink;
    BulkForwarder f(bulk_opts(sink.port));
    for (int i = 0; i < 25; ++i) f.add("a", "{\"i\":" + std::to_string(i) + "}");
    ASSERT_TRUE(f.flush(std::chrono::seconds(5)));
    const auto st = f.stats();
    EXPECT_EQ(st.docs_sent, 25u);
    EXPECT_EQ(st.batches_sent, 3u);
    EXPECT_EQ(st.buffered_batches, 0u);
    const auto docs = sink.docs();
    ASSERT_EQ(docs.size(), 25u);
    for (int i = 0; i < 25; ++i) EXPECT_EQ(docs[i], "{\"i\":" + std::to_string(i) + "}");
}

TEST(Bulk, SinkDownThenUpDeliversInOrder) {
    const int port = free_port();
    BulkForwarder f(bulk_opts(port));
    for (int i = 0; i < 200; ++i) f.add("a", "{\"i\":" + std::to_string(i) + "}");
    std::this_thread::sleep_for(std::chrono::seconds(10));
    EXPECT_GT(f.stats().send_failures, 0u);
    EXPECT_EQ(f.stats().docs_sent, 0u);
    FakeSink sink(port);
    ASSERT_GT(sink.port, 0);
    ASSERT_TRUE(f.flush(std::chrono::seconds(10)));
    const auto docs = sink.docs();
    ASSERT_EQ(docs.size(), 200u);
    for (int i = 0; i < 200; ++i) ASSERT_EQ(docs[i], "{\"i\":" + std::to_string(i) + "}");
    EXPECT_EQ(f.stats().docs_dropped, 0u);
}

TEST(Bulk, OverflowDropsOldestWithCounter) {
    const int port = free_port();
    auto o = bulk_opts(port);
    o.max_buffered_batches = 5;
    BulkForwarder f(o);
    for (int i = 0; i < 200; ++i) f.add("a", "{\"i\":" + std::to_string(i) + "}");
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    const auto down = f.stats();
    EXPECT_EQ(down.batches_dropped, 15u);
    EXPECT_EQ(down.docs_dropped, 150u);
    FakeSink sink(port);
    ASSERT_TRUE(f.flush(std::chrono::seconds(10)));
    const auto docs = sink.docs();
    // The surviving batches hold the newest docs, apart from the batch that
    // was on the wire when the buffer overflowed.
    EXPECT_EQ(docs.size() + f.stats().docs_dropped, 200u);
    EXPECT_EQ(docs.back(), "{\"i\":199}");
}

namespace {

ReceptorConfig service_config(const TempDir& d) {
    ReceptorConfig c;
    c.bind_host = "127.0.0.1";
    c.store.data_dir = d.path.string();
    return c;
}

} // namespace

TEST(ReceptorService, TcpIngestAndHttpReads) {
    TempDir d;
    Receptor r(service_config(d));
    r.start();
    auto conn = net::TcpStream::connect(r.ingest_endpoint());
    std::string payload;
    for (std::uint64_t ts = 1; ts <= 3; ++ts) payload += doc("errors", ts, "\"count\":" + std::to_string(ts)) + "\n";
    payload += "{\"broken\n";
    conn.write_all(payload);
    const auto t0 = std::chrono::steady_clock::now();
    while (r.store().stored() < 3 && std::chrono::steady_clock::now() - t0 < std::chrono::seconds(1)) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    EXPECT_EQ(r.store().stored(), 3u);
    ASSERT_TRUE(r.sync());

    httplib::Client cli("127.0.0.1", r.http_port());
    auto res = cli.Get("/indexes/errors/docs?from_ts_ns=2&to_ts_ns=3");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
    auto j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j.at("count"), 2);
    EXPECT_EQ(j.at("docs")[0].at("count"), 2);

    res = cli.Get("/indexes/errors/docs?order=desc&limit=1");
    ASSERT_TRUE(res);
    EXPECT_EQ(nlohmann::json::parse(res->body).at("docs")[0].at("count"), 3);

    res = cli.Get("/indexes/missing/docs");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    EXPECT_EQ(nlohmann::json::parse(res->body).at("error"), "UnknownIndex");
    res = cli.Get("/indexes/errors/docs?from_ts_ns=9&to_ts_ns=1");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);

    res = cli.Get("/indexes");
    ASSERT_TRUE(res);
    j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j.at("indexes")[0].at("name"), "errors");
    EXPECT_EQ(j.at("indexes")[0].at("mapping").at("count"), "number");

    conn.close();
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    ASSERT_TRUE(r.sync());
    res = cli.Get("/stats");
    ASSERT_TRUE(res);
    j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j.at("docs_stored"), 3);
    EXPECT_EQ(j.at("malformed"), 1);
    r.stop();
}

TEST(ReceptorService, ForwardsToBulkSink) {
    TempDir d;
    FakeSink sink;
    auto c = service_config(d);
    c.bulk = bulk_opts(sink.port);
    Receptor r(c);
    r.start();
    std::vector<std::string> lines;
    for (std::uint64_t ts = 1; ts <= 30; ++ts) lines.push_back(doc("fw", ts));
    r.submit(lines);
    ASSERT_TRUE(r.sync());
    ASSERT_TRUE(r.bulk()->flush(std::chrono::seconds(5)));
    EXPECT_EQ(sink.docs(), lines);
    r.stop();
}

TEST(ReceptorService, IngestThroughputOverLoopback) {
    TempDir d;
    Receptor r(service_config(d));
    r.start();
    constexpr int kDocs = 200000;
    std::string payload;
    payload.reserve(kDocs * 110);
    for (int i = 0; i < kDocs; ++i) {
        payload += doc("load", 1'000'000'000ULL + static_cast<std::uint64_t>(i) * 1000,
                       "\"count\":" + std::to_string(i % 97) + ",\"host\":\"h" + std::to_string(i % 8) + "\"");
        payload += '\n';
    }
    const auto t0 = std::chrono::steady_clock::now();
    {
        auto conn = net::TcpStream::connect(r.ingest_endpoint());
        conn.write_all(payload);
    }
    while (r.store().stored() < static_cast<std::uint64_t>(kDocs) &&
           std::chrono::steady_clock::now() - t0 < std::chrono::seconds(30)) {
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ASSERT_EQ(r.store().stored(), static_cast<std::uint64_t>(kDocs));
    const double rate = kDocs / secs;
    RecordProperty("docs_per_s", std::to_string(rate));
    EXPECT_GE(rate, 80000.0);
    r.stop();
}
