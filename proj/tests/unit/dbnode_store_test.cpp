#include "loginson/dbnode/catalog.hpp"
#include "loginson/dbnode/store.hpp"
#include "loginson/dbnode/throttle.hpp"
#include "loginson/error.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <thread>

using namespace loginson;
using namespace loginson::dbnode;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> n{0};
        path = fs::temp_directory_path() / ("loginson-test-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

LogRecord rec(std::uint64_t ts, std::uint32_t type, std::string payload, std::uint64_t seq = 0) {
    LogRecord r;
    r.header.ingest_ts_ns = ts;
    r.header.type_id = type;
    r.header.seq_no = seq;
    r.payload = std::move(payload);
    r.header.payload_len = static_cast<std::uint32_t>(r.payload.size());
    return r;
}

StoreOptions small_store(const TempDir& d, std::size_t segment = 64 * 1024) {
    StoreOptions o;
    o.data_dir = d.str();
    o.segment_bytes = segment;
    o.buffer_pool = 3;
    o.sync_writes = false;
    o.idle_flush = std::chrono::milliseconds(60000);
    return o;
}

std::vector<std::uint8_t> read_file(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::uint64_t> scan_ts(SegmentStore& s, const Interval& q, std::uint32_t type = 0) {
    std::vector<std::uint64_t> out;
    s.scan_segments(s.lookup_segments(q, type), q, type, make_cancel_token(),
                    [&](const RecordView& v) { out.push_back(v.header.ingest_ts_ns); });
    return out;
}

} // namespace

TEST(Throttle, UnlimitedAddsNoDelay) {
    WriteThrottle t(160e6, 1.0);
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(t.acquire(1 << 20).count(), 0);
    EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(50));
    EXPECT_EQ(WriteThrottle(0, 0.5).rate(), 0); // unknown W_max
}

TEST(Throttle, OneMegabyteAtTenMegabytesPerSecond) {
    TokenBucket b(10e6, 1e6);
    const auto start = std::chrono::steady_clock::now();
    b.acquire(1'000'000);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    EXPECT_NEAR(ms, 100, 20);
}

TEST(Throttle, SixtySecondAccountingInVirtualTime) {
    VirtualClock clock;
    WriteThrottle t(80e6, 0.5, 1 << 20, clock);
    std::mt19937_64 rng(5);
    std::uint64_t granted = 0;
    while (clock.now_ns() < 60'000'000'000ull) {
        const std::uint64_t n = 1 + rng() % (2 << 20);
        t.acquire(n);
        if (clock.now_ns() <= 60'000'000'000ull) granted += n;
        if (rng() % 4 == 0) clock.advance_ns(rng() % 50'000'000);
    }
    EXPECT_LE(static_cast<double>(granted), 40e6 * 60 * 1.05);
    EXPECT_GE(static_cast<double>(granted), 40e6 * 60 * 0.9);
}

TEST(Catalog, IntervalLookupExamples) {
    TempDir d;
    Catalog c((d.path / "c.sqlite").string());
    c.insert({1, "a", 0, 10, {1}, 5, 100, true});
    c.insert({2, "b", 11, 20, {1, 2}, 5, 100, true});
    c.insert({3, "c", 21, 30, {2}, 5, 100, true});
    auto r = c.lookup({5, 15}, 0);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[0].segment_id, 1u);
    EXPECT_EQ(r[1].segment_id, 2u);
    EXPECT_EQ(r[1].type_set, (std::vector<std::uint32_t>{1, 2}));
    EXPECT_TRUE(c.lookup({100, 200}, 0).empty());
    EXPECT_EQ(c.lookup({0, 30}, 2).size(), 2u);
    EXPECT_TRUE(c.lookup({0, 9}, 2).empty());
    EXPECT_EQ(c.max_segment_id(), 3u);
    c.remove(2);
    EXPECT_EQ(c.size(), 2u);
}

TEST(Catalog, UnsignedOrderingAtTheTop) {
    TempDir d;
    Catalog c((d.path / "c.sqlite").string());
    const std::uint64_t big = UINT64_MAX - 5;
    c.insert({1, "a", big, UINT64_MAX, {1}, 1, 1, true});
    c.insert({2, "b", 1, 2, {1}, 1, 1, true});
    c.insert({3, "c", (1ull << 63) + 1, (1ull << 63) + 9, {1}, 1, 1, true});
    const auto all = c.all();
    ASSERT_EQ(all.size(), 3u);
    EXPECT_EQ(all[0].segment_id, 2u);
    EXPECT_EQ(all[1].segment_id, 3u);
    EXPECT_EQ(all[2].segment_id, 1u);
    EXPECT_EQ(all[2].max_ts_ns, UINT64_MAX);
    EXPECT_EQ(c.lookup({UINT64_MAX, UINT64_MAX}, 0).size(), 1u);
}

TEST(Catalog, BruteForcePropertyOracle) {
    TempDir d;
    Catalog c((d.path / "c.sqlite").string());
    std::mt19937_64 rng(17);
    std::vector<CatalogEntry> entries;
    for (std::uint64_t id = 1; id <= 1000; ++id) {
        CatalogEntry e;
        e.segment_id = id;
        e.path = "p" + std::to_string(id);
        e.min_ts_ns = rng() % 1'000'000;
        e.max_ts_ns = e.min_ts_ns + rng() % 20'000;
        std::set<std::uint32_t> types;
        const int nt = 1 + static_cast<int>(rng() % 3);
        for (int i = 0; i < nt; ++i) types.insert(1 + static_cast<std::uint32_t>(rng() % 5));
        e.type_set.assign(types.begin(), types.end());
        e.record_count = rng() % 1000;
        e.byte_size = rng() % 100000;
        entries.push_back(e);
        c.insert(e);
    }
    for (int q = 0; q < 100; ++q) {
        Interval iv;
        iv.from_ts_ns = rng() % 1'050'000;
        iv.to_ts_ns = iv.from_ts_ns + rng() % 50'000;
        const std::uint32_t type = static_cast<std::uint32_t>(rng() % 6);
        std::vector<CatalogEntry> want;
        for (const auto& e : entries) {
            const bool overlap = e.min_ts_ns <= iv.to_ts_ns && e.max_ts_ns >= iv.from_ts_ns;
            const bool typed = type == 0 || std::find(e.type_set.begin(), e.type_set.end(), type) != e.type_set.end();
            if (overlap && typed) want.push_back(e);
        }
        std::stable_sort(want.begin(), want.end(), [](const auto& a, const auto& b) {
            return a.min_ts_ns != b.min_ts_ns ? a.min_ts_ns < b.min_ts_ns : a.segment_id < b.segment_id;
        });
        ASSERT_EQ(c.lookup(iv, type), want) << "query " << q;
    }
}

TEST(Store, DefaultSegmentSizeIsOneGibibyte) {
    EXPECT_EQ(StoreOptions{}.segment_bytes, 1024u * 1024u * 1024u);
}

TEST(Store, AppendGrowsActiveBuffer) {
    TempDir d;
    SegmentStore s(small_store(d));
    s.append(rec(1, 1, "hello"));
    EXPECT_EQ(s.stats().active_fill, 64u + 5u);
}

TEST(Store, PendingIntervalTracksMinAndMax) {
    TempDir d;
    SegmentStore s(small_store(d));
    for (std::uint64_t ts : {5, 3, 9}) s.append(rec(ts, 1, "x"));
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(5)));
    const auto all = s.catalog().all();
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(all[0].min_ts_ns, 3u);
    EXPECT_EQ(all[0].max_ts_ns, 9u);
    EXPECT_EQ(all[0].record_count, 3u);
}

TEST(Store, ExactSegmentSizeMakesOneFile) {
    TempDir d;
    const std::size_t seg = 8u << 20;
    SegmentStore s(small_store(d, seg));
    const std::string payload(1024 - 64, 'p');
    std::vector<std::uint8_t> batch;
    for (std::size_t i = 0; i < seg / 1024; ++i) {
        RecordHeader h;
        h.ingest_ts_ns = 100 + i;
        h.type_id = 3;
        append_framed(batch, h, payload);
    }
    s.append_batch(batch);
    EXPECT_EQ(s.stats().active_fill, 0u);
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(10)));
    const auto all = s.catalog().all();
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(fs::file_size(all[0].path), seg);
    EXPECT_EQ(all[0].byte_size, seg);
    EXPECT_EQ(all[0].record_count, seg / 1024);
    EXPECT_EQ(read_file(all[0].path), batch);
}

TEST(Store, RecordsNeverSplitAcrossSegments) {
    TempDir d;
    SegmentStore s(small_store(d, 1000));
    for (int i = 0; i < 100; ++i) s.append(rec(static_cast<std::uint64_t>(i), 1, std::string(100, 'a' + i % 26)));
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(5)));
    std::uint64_t total = 0;
    for (const auto& e : s.catalog().all()) {
        const auto bytes = read_file(e.path);
        EXPECT_EQ(decode_all(bytes).size(), e.record_count);
        EXPECT_LE(bytes.size(), 1000u);
        total += e.record_count;
    }
    EXPECT_EQ(total, 100u);
}

TEST(Store, ScanIntervalExample) {
    TempDir d;
    SegmentStore s(small_store(d));
    for (std::uint64_t ts = 1; ts <= 10; ++ts) s.append(rec(ts, 1, "r" + std::to_string(ts)));
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(5)));
    EXPECT_EQ(scan_ts(s, {3, 5}), (std::vector<std::uint64_t>{3, 4, 5}));
}

TEST(Store, ScanFiltersByType) {
    TempDir d;
    SegmentStore s(small_store(d));
    for (std::uint64_t ts = 1; ts <= 10; ++ts) s.append(rec(ts, ts % 2 ? 1 : 2, "r"));
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(5)));
    EXPECT_EQ(scan_ts(s, {0, 100}, 2), (std::vector<std::uint64_t>{2, 4, 6, 8, 10}));
    EXPECT_TRUE(scan_ts(s, {0, 100}, 9).empty());
}

TEST(Store, CancelAfterFirstOfThreeSegments) {
    TempDir d;
    SegmentStore s(small_store(d));
    for (int seg = 0; seg < 3; ++seg) {
        for (int i = 0; i < 5; ++i) s.append(rec(static_cast<std::uint64_t>(seg * 10 + i), 1, "x"));
        s.seal();
    }
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(5)));
    const Interval q{0, 100};
    const auto entries = s.lookup_segments(q, 0);
    ASSERT_EQ(entries.size(), 3u);
    auto token = make_cancel_token();
    std::vector<std::uint64_t> got;
    const auto res = s.scan_segments(
        entries, q, 0, token, [&](const RecordView& v) { got.push_back(v.header.ingest_ts_ns); },
        [&](std::size_t scanned, std::size_t, std::uint64_t) {
            if (scanned == 1) token->store(true);
        });
    EXPECT_EQ(res.status, ScanStatus::Cancelled);
    EXPECT_EQ(res.segments_scanned, 1u);
    EXPECT_EQ(got, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
}

TEST(Store, FullRangeScanReturnsEverythingIngested) {
    TempDir d;
    SegmentStore s(small_store(d, 4096));
    std::mt19937_64 rng(9);
    std::multiset<std::string> sent;
    for (int i = 0; i < 2000; ++i) {
        std::string p(1 + rng() % 200, 'a');
        for (auto& ch : p) ch = static_cast<char>('a' + rng() % 26);
        sent.insert(p);
        s.append(rec(rng() % 1'000'000, 1 + static_cast<std::uint32_t>(rng() % 3), p));
    }
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(10)));
    std::multiset<std::string> got;
    const Interval all{0, UINT64_MAX};
    s.scan_segments(s.lookup_segments(all, 0), all, 0, make_cancel_token(),
                    [&](const RecordView& v) { got.insert(std::string(v.payload)); });
    EXPECT_EQ(got, sent);
}

TEST(Store, IdleFlushSealsTail) {
    TempDir d;
    auto o = small_store(d);
    o.idle_flush = std::chrono::milliseconds(150);
    SegmentStore s(o);
    s.append(rec(1, 1, "tail"));
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(3);
    while (s.catalog().size() == 0 && std::chrono::steady_clock::now() < deadline) {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    EXPECT_EQ(s.catalog().size(), 1u);
}

TEST(Store, CrashBeforeCatalogIsRecovered) {
    TempDir d;
    std::vector<std::uint8_t> expect;
    {
        SegmentStore s(small_store(d));
        s.set_crash_hook([](const CatalogEntry&) { return true; });
        for (std::uint64_t ts = 1; ts <= 10; ++ts) {
            const auto r = rec(ts, 4, "orphan " + std::to_string(ts));
            append_framed(expect, r.header, r.payload);
            s.append(r);
        }
        EXPECT_FALSE(s.flush_all(std::chrono::seconds(5)));
        EXPECT_EQ(s.catalog().size(), 0u);
    }
    SegmentStore again(small_store(d));
    const auto all = again.catalog().all();
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(all[0].record_count, 10u);
    EXPECT_EQ(all[0].min_ts_ns, 1u);
    EXPECT_EQ(all[0].max_ts_ns, 10u);
    EXPECT_EQ(all[0].type_set, (std::vector<std::uint32_t>{4}));
    EXPECT_EQ(read_file(all[0].path), expect);
    EXPECT_EQ(scan_ts(again, {3, 5}, 4), (std::vector<std::uint64_t>{3, 4, 5}));
}

TEST(Store, RecoveryTruncatesTailAndDropsTemporaries) {
    TempDir d;
    std::string path;
    {
        SegmentStore s(small_store(d));
        for (std::uint64_t ts = 1; ts <= 4; ++ts) s.append(rec(ts, 1, "abc"));
        ASSERT_TRUE(s.flush_all(std::chrono::seconds(5)));
        path = s.catalog().all()[0].path;
    }
    // Make the segment an orphan with a torn final record, plus stray files.
    {
        Catalog c((d.path / "catalog.sqlite").string());
        c.remove(1);
        c.insert({77, (d.path / "segment-77.lgs").string(), 0, 1, {1}, 1, 1, true});
    }
    {
        std::ofstream out(path, std::ios::binary | std::ios::app);
        out.write("LGS1\x01\x00", 6);
    }
    std::ofstream(d.path / "segment-5.lgs.tmp") << "junk";
    SegmentStore s(small_store(d));
    const auto all = s.catalog().all();
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(all[0].segment_id, 1u);
    EXPECT_EQ(all[0].record_count, 4u);
    EXPECT_EQ(fs::file_size(path), 4u * (64 + 3));
    EXPECT_FALSE(fs::exists(d.path / "segment-5.lgs.tmp"));
    // New segments continue after the highest id seen.
    s.append(rec(9, 1, "new"));
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(5)));
    EXPECT_EQ(s.catalog().all().back().segment_id, 78u);
}

TEST(Store, IoErrorRetriedThenSucceeds) {
    TempDir d;
    SegmentStore s(small_store(d));
    std::atomic<int> failures{2};
    s.set_fault_hook([&] { return failures.fetch_sub(1) > 0; });
    s.append(rec(1, 1, "x"));
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(10)));
    EXPECT_EQ(s.stats().flush_failures, 2u);
    EXPECT_TRUE(s.stats().healthy);
    EXPECT_EQ(s.catalog().size(), 1u);
}

TEST(Store, PersistentIoErrorMarksUnhealthy) {
    TempDir d;
    auto o = small_store(d);
    o.retry_backoff = std::chrono::milliseconds(5);
    SegmentStore s(o);
    std::atomic<bool> broken{true};
    s.set_fault_hook([&] { return broken.load(); });
    s.append(rec(1, 1, "x"));
    s.seal();
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    while (s.stats().healthy && std::chrono::steady_clock::now() < deadline) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    EXPECT_FALSE(s.stats().healthy);
    EXPECT_GE(s.stats().flush_failures, 3u);
    broken = false;
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(10)));
    EXPECT_TRUE(s.stats().healthy);
}

TEST(Store, PoolExhaustionBlocksAppends) {
    TempDir d;
    auto o = small_store(d, 64 * 1024);
    o.buffer_pool = 2;
    o.max_write_bytes_per_s = 1e6;
    o.utilization_cap = 0.5;
    o.write_chunk_bytes = 16 * 1024;
    SegmentStore s(o);
    std::vector<std::uint8_t> batch;
    for (int i = 0; i < 640; ++i) {
        RecordHeader h;
        h.ingest_ts_ns = static_cast<std::uint64_t>(i);
        append_framed(batch, h, std::string(1024 - 64, 'z'));
    }
    const auto start = std::chrono::steady_clock::now();
    s.append_batch(batch);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // Ten 64 KiB segments, two buffers, 0.5 MB/s flushing: the last appends
    // wait for roughly eight segment flushes.
    EXPECT_GT(secs, 0.8);
    ASSERT_TRUE(s.flush_all(std::chrono::seconds(10)));
    EXPECT_EQ(s.catalog().size(), 10u);
}

TEST(Store, CalibrationThroughRateLimitedDevice) {
    TempDir d;
    TokenBucket device(20e6, 1 << 20);
    const double w1 = calibrate_write_speed(d.str(), 4u << 20, 1 << 20, &device, 1, false);
    TokenBucket device2(20e6, 1 << 20);
    const double w2 = calibrate_write_speed(d.str(), 4u << 20, 1 << 20, &device2, 1, false);
    EXPECT_NEAR(w1, 20e6, 20e6 * 0.15);
    EXPECT_NEAR(w2, w1, w1 * 0.15);
    const double raw = calibrate_write_speed(d.str(), 16u << 20, 1 << 20, nullptr, 1, false);
    EXPECT_GT(raw, 100e6); // page cache target: far above any test load
}

TEST(Store, InvalidIntervalRejected) {
    TempDir d;
    SegmentStore s(small_store(d));
    try {
        s.lookup_segments({10, 5}, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidInterval);
    }
}
