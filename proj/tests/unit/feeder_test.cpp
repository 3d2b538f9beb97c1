#include "loginson/error.hpp"
#include "loginson/feeder/feeder.hpp"
#include "loginson/workbench/generator.hpp"
#include "loginson/workbench/sink.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <thread>

using namespace loginson;
using namespace loginson::feeder;
using loginson::workbench::CountingSink;
using loginson::workbench::SinkOptions;

namespace {

std::span<const std::uint8_t> bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

DatagramInfo info_from(const char* addr, std::uint16_t port, std::uint64_t ts = 1) {
    return DatagramInfo{ts, *parse_address(addr), port, 5140};
}

std::vector<LogRecord> make_records(std::size_t n) {
    std::vector<LogRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        LogRecord r;
        r.header.seq_no = i;
        r.header.ingest_ts_ns = 1000 + i;
        r.payload = "line " + std::to_string(i);
        r.header.payload_len = static_cast<std::uint32_t>(r.payload.size());
        out.push_back(std::move(r));
    }
    return out;
}

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds timeout = std::chrono::seconds(10)) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return pred();
}

} // namespace

TEST(RingQueue, SplitsDatagramIntoLines) {
    RingQueue q(4, 1024);
    EXPECT_EQ(q.ingest(bytes("a\nb\nc\n"), info_from("10.0.0.1", 514)).records, 3u);
    const auto r = q.ingest(bytes(""), info_from("10.0.0.1", 514));
    EXPECT_EQ(r.records, 0u);
    EXPECT_FALSE(r.dropped);
    EXPECT_EQ(q.ingest(bytes("x\r\n\n\ny"), info_from("10.0.0.1", 514)).records, 2u);
    ASSERT_TRUE(q.publish_partial());
    BufferSlot* s = q.claim(std::chrono::milliseconds(0));
    ASSERT_NE(s, nullptr);
    ASSERT_EQ(s->line_count(), 5u);
    EXPECT_EQ(s->line(0), "a");
    EXPECT_EQ(s->line(2), "c");
    EXPECT_EQ(s->line(3), "x");
    EXPECT_EQ(s->line(4), "y");
    q.release(s);
}

TEST(RingQueue, SlotStatesFollowLifecycle) {
    RingQueue q(3, 16);
    using S = SlotState;
    EXPECT_EQ(q.states(), (std::vector<S>{S::Filling, S::Free, S::Free}));
    q.ingest(bytes("0123456789\n"), info_from("10.0.0.1", 1));
    q.ingest(bytes("abcdefghij\n"), info_from("10.0.0.1", 1)); // does not fit: slot 0 published
    EXPECT_EQ(q.states(), (std::vector<S>{S::Ready, S::Filling, S::Free}));
    BufferSlot* s = q.claim(std::chrono::milliseconds(0));
    ASSERT_EQ(s->index, 0u);
    EXPECT_EQ(q.states(), (std::vector<S>{S::Draining, S::Filling, S::Free}));
    q.release(s);
    EXPECT_EQ(q.states(), (std::vector<S>{S::Free, S::Filling, S::Free}));
}

TEST(RingQueue, RingFullDropsWholeDatagram) {
    const std::size_t P = 4;
    RingQueue q(P, 8);
    q.set_paused(true);
    std::size_t accepted = 0;
    for (int i = 0; i < 10; ++i) {
        const auto r = q.ingest(bytes("1234567\n"), info_from("10.0.0.1", 1));
        if (!r.dropped) ++accepted;
    }
    // P-1 READY slots plus the FILLING one, then everything drops.
    EXPECT_EQ(accepted, P);
    auto st = q.states();
    EXPECT_EQ(std::count(st.begin(), st.end(), SlotState::Ready), static_cast<long>(P - 1));
    EXPECT_TRUE(q.ingest(bytes("z\n"), info_from("10.0.0.1", 1)).dropped);

    q.set_paused(false);
    std::vector<std::size_t> order;
    while (BufferSlot* s = q.claim(std::chrono::milliseconds(0))) {
        order.push_back(s->index);
        q.release(s);
    }
    EXPECT_EQ(order, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_FALSE(q.ingest(bytes("z\n"), info_from("10.0.0.1", 1)).dropped);
}

TEST(RingQueue, OversizeDatagramDropped) {
    RingQueue q(2, 8);
    EXPECT_TRUE(q.ingest(bytes("123456789\n"), info_from("10.0.0.1", 1)).dropped);
}

TEST(FrameRecords, SharedSourceAndConsecutiveSeq) {
    RingQueue q(2, 1024);
    q.ingest(bytes("first\nsecond\n"), info_from("10.0.0.1", 514, 77));
    q.publish_partial();
    BufferSlot* s = q.claim(std::chrono::milliseconds(0));
    const auto recs = frame_records(*s, TypeRegistry{});
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[0].header.source_addr, ipv4_mapped(0x0A000001));
    EXPECT_EQ(recs[1].header.source_addr, recs[0].header.source_addr);
    EXPECT_EQ(recs[0].header.source_port, 514);
    EXPECT_EQ(recs[0].header.source_id, source_hash(ipv4_mapped(0x0A000001), 514));
    EXPECT_EQ(recs[1].header.seq_no, recs[0].header.seq_no + 1);
    EXPECT_EQ(recs[0].header.ingest_ts_ns, 77u);
    EXPECT_EQ(recs[0].header.type_id, kUnclassified);
    EXPECT_EQ(recs[1].payload, "second");
    EXPECT_EQ(recs[1].header.payload_len, 6u);
    q.release(s);
}

TEST(FrameRecords, ClassifiesByListenerPort) {
    RingQueue q(2, 1024);
    TypeRegistry reg({TypeRule{PortMatch{5140}, 7, "syslog"}});
    q.ingest(bytes("x\n"), info_from("10.0.0.1", 514));
    q.publish_partial();
    BufferSlot* s = q.claim(std::chrono::milliseconds(0));
    EXPECT_EQ(frame_records(*s, reg)[0].header.type_id, 7u);
    q.release(s);
}

TEST(Distributor, TenRecordsThreeNodes) {
    CountingSink a, b, c;
    Distributor d({a.endpoint(), b.endpoint(), c.endpoint()});
    d.start();
    const auto counts = d.dispatch(make_records(10));
    EXPECT_EQ(counts, (std::vector<std::size_t>{4, 3, 3}));
    ASSERT_TRUE(d.wait_idle(std::chrono::seconds(5)));
    EXPECT_EQ(a.records(), 4u);
    EXPECT_EQ(b.records(), 3u);
    EXPECT_EQ(c.records(), 3u);
    d.stop();
}

TEST(Distributor, SingleNodeGetsEverything) {
    SinkOptions o;
    o.keep_records = true;
    CountingSink a(o);
    Distributor d({a.endpoint()});
    d.start();
    const auto recs = make_records(250);
    d.dispatch(recs);
    ASSERT_TRUE(d.wait_idle(std::chrono::seconds(5)));
    EXPECT_EQ(a.received(), recs);
    d.stop();
}

TEST(Distributor, FairnessProperty) {
    std::mt19937_64 rng(3);
    for (int round = 0; round < 6; ++round) {
        const std::size_t k = 1 + rng() % 4;
        std::vector<std::unique_ptr<CountingSink>> sinks;
        std::vector<net::Endpoint> eps;
        for (std::size_t i = 0; i < k; ++i) {
            sinks.push_back(std::make_unique<CountingSink>());
            eps.push_back(sinks.back()->endpoint());
        }
        Distributor d(eps);
        d.start();
        std::size_t total = 0;
        const int batches = 1 + static_cast<int>(rng() % 20);
        for (int b = 0; b < batches; ++b) {
            const std::size_t n = rng() % 300;
            d.dispatch(make_records(n));
            total += n;
        }
        ASSERT_TRUE(d.wait_idle(std::chrono::seconds(5)));
        std::uint64_t lo = UINT64_MAX, hi = 0, sum = 0;
        for (auto& s : sinks) {
            lo = std::min(lo, s->records());
            hi = std::max(hi, s->records());
            sum += s->records();
        }
        EXPECT_EQ(sum, total);
        EXPECT_LE(hi - lo, 1u) << "k=" << k << " total=" << total;
        d.stop();
    }
}

// The dying node reads but never acknowledges, so every record it was given is
// still owed and must reach the survivors.
TEST(Distributor, NodeDeathRedispatchesToSurvivors) {
    SinkOptions keep;
    keep.keep_records = true;
    SinkOptions silent = keep;
    silent.ack = false;
    CountingSink a(keep), b(silent), c(keep);
    DistributorOptions opts;
    opts.reconnect_backoff = std::chrono::milliseconds(5000);
    Distributor d({a.endpoint(), b.endpoint(), c.endpoint()}, opts);
    d.start();
    const auto recs = make_records(900);
    for (std::size_t off = 0; off < 900; off += 100) {
        d.dispatch(std::span<const LogRecord>(recs).subspan(off, 100));
        if (off == 300) {
            ASSERT_TRUE(eventually([&] { return b.records() > 0; }));
            b.kill();
            ASSERT_TRUE(eventually([&] { return d.live_count() == 2; }));
        }
    }
    ASSERT_TRUE(d.wait_idle(std::chrono::seconds(10)));
    std::multiset<std::uint64_t> seqs;
    for (const auto& r : a.received()) seqs.insert(r.header.seq_no);
    for (const auto& r : c.received()) seqs.insert(r.header.seq_no);
    ASSERT_EQ(seqs.size(), 900u);
    std::uint64_t want = 0;
    for (auto s : seqs) EXPECT_EQ(s, want++);
    EXPECT_GT(d.records_redispatched(), 0u);
    EXPECT_EQ(d.records_lost(), 0u);
    d.stop(std::chrono::milliseconds(0));
}

TEST(Distributor, AckingNodeKilledLosesNothing) {
    SinkOptions keep;
    keep.keep_records = true;
    CountingSink a(keep), b(keep), c(keep);
    Distributor d({a.endpoint(), b.endpoint(), c.endpoint()});
    d.start();
    const auto recs = make_records(900);
    for (std::size_t off = 0; off < 900; off += 100) {
        d.dispatch(std::span<const LogRecord>(recs).subspan(off, 100));
        if (off == 400) b.kill();
    }
    ASSERT_TRUE(d.wait_idle(std::chrono::seconds(10)));
    std::set<std::uint64_t> seqs;
    for (auto* s : {&a, &b, &c}) {
        for (const auto& r : s->received()) seqs.insert(r.header.seq_no);
    }
    EXPECT_EQ(seqs.size(), 900u);
    d.stop(std::chrono::milliseconds(0));
}

TEST(Feeder, InProcessConservationAndOrder) {
    SinkOptions keep;
    keep.keep_records = true;
    CountingSink a(keep), b(keep);
    FeederConfig cfg;
    cfg.nodes = {a.endpoint(), b.endpoint()};
    cfg.ring_slots = 4;
    cfg.slot_bytes = 4096;
    cfg.header_workers = 3;
    Feeder f(cfg);
    f.start();
    std::mt19937_64 rng(11);
    std::vector<std::string> sent;
    const auto src = *parse_address("192.168.1.9");
    std::size_t dropped = 0;
    for (int d = 0; d < 2000; ++d) {
        std::string dgram;
        const int lines = 1 + static_cast<int>(rng() % 5);
        std::vector<std::string> these;
        for (int i = 0; i < lines; ++i) {
            these.push_back("dgram " + std::to_string(d) + " line " + std::to_string(i));
            dgram += these.back() + "\n";
        }
        const auto r = f.ingest_datagram(bytes(dgram), 5140, src, 999);
        if (r.dropped) {
            ++dropped;
            std::this_thread::sleep_for(std::chrono::milliseconds(1));
            continue;
        }
        sent.insert(sent.end(), these.begin(), these.end());
    }
    ASSERT_TRUE(f.flush(std::chrono::seconds(10)));
    f.stop();

    std::vector<LogRecord> all = a.received();
    const auto rb = b.received();
    EXPECT_LE(std::max(a.records(), b.records()) - std::min(a.records(), b.records()), 1u);
    all.insert(all.end(), rb.begin(), rb.end());
    ASSERT_EQ(all.size(), sent.size());
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.header.seq_no < y.header.seq_no; });
    for (std::size_t i = 0; i < all.size(); ++i) {
        ASSERT_EQ(all[i].header.seq_no, i);
        ASSERT_EQ(all[i].payload, sent[i]);
        ASSERT_EQ(all[i].header.source_port, 999);
    }
    EXPECT_EQ(f.counters().datagrams_dropped.load(), dropped);
}

TEST(Feeder, UdpEndToEndManifest) {
    SinkOptions o;
    o.track_manifest = true;
    CountingSink a(o), b(o);
    FeederConfig cfg;
    cfg.bind_host = "127.0.0.1";
    cfg.listen_ports = {0};
    cfg.nodes = {a.endpoint(), b.endpoint()};
    cfg.header_workers = 2;
    Feeder f(cfg);
    f.start();
    workbench::LoadProfile p;
    p.count = 20000;
    p.rate = 200000;
    p.seed = 5;
    const auto res = workbench::generate_load(p, net::Endpoint{"127.0.0.1", f.udp_ports()[0]});
    ASSERT_TRUE(eventually([&] { return f.counters().records_in.load() >= res.lines; }, std::chrono::seconds(5)))
        << "received " << f.counters().records_in.load();
    ASSERT_TRUE(f.flush(std::chrono::seconds(10)));
    f.stop();
    workbench::Manifest got = a.manifest();
    got.merge(b.manifest());
    EXPECT_EQ(got, res.manifest);
    EXPECT_EQ(f.counters().datagrams_dropped.load(), 0u);
    EXPECT_LE(std::max(a.records(), b.records()) - std::min(a.records(), b.records()), 1u);
}

TEST(FeederStats, IdleWindowsAreZero) {
    CountingSink a;
    FeederConfig cfg;
    cfg.nodes = {a.endpoint()};
    Feeder f(cfg);
    f.start();
    std::this_thread::sleep_for(std::chrono::milliseconds(350));
    const auto w = f.stats_snapshot();
    f.stop();
    ASSERT_GE(w.size(), 3u);
    for (const auto& x : w) {
        EXPECT_EQ(x.records_in, 0u);
        EXPECT_EQ(x.records_out, 0u);
        EXPECT_EQ(x.datagrams_dropped, 0u);
    }
}

TEST(FeederStats, ControlledReplaySumsAndConservation) {
    CountingSink a, b, c;
    FeederConfig cfg;
    cfg.nodes = {a.endpoint(), b.endpoint(), c.endpoint()};
    cfg.header_workers = 2;
    cfg.slot_bytes = 64 * 1024;
    Feeder f(cfg);
    f.start();
    const auto src = *parse_address("10.1.1.1");
    // 50,000 records over about one second: 100 datagrams of 50 lines every 10 ms.
    std::string dgram;
    for (int i = 0; i < 50; ++i) dgram += "replayed log line number " + std::to_string(i) + "\n";
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 1000; ++i) {
        ASSERT_FALSE(f.ingest_datagram(bytes(dgram), 5140, src, 1).dropped);
        if (i % 10 == 9) std::this_thread::sleep_until(start + std::chrono::milliseconds(i + 1));
        if (i % 100 == 99) f.ring().publish_partial();
    }
    ASSERT_TRUE(f.flush(std::chrono::seconds(10)));
    std::this_thread::sleep_for(std::chrono::milliseconds(250));
    const auto windows = f.stats_snapshot();
    f.stop();
    std::uint64_t in = 0, out = 0, per_node = 0;
    for (const auto& w : windows) {
        in += w.records_in;
        out += w.records_out;
        for (auto n : w.per_node_sent) per_node += n;
    }
    EXPECT_EQ(in, 50000u);
    EXPECT_EQ(out, 50000u);
    EXPECT_EQ(per_node, out);
}

TEST(FeederConfig, FromJson) {
    const auto j = nlohmann::json::parse(R"({"listen_ports":[5140,5141],"nodes":["127.0.0.1:9001","10.0.0.2:9002"],
        "type_rules":[{"port":5140,"type_id":1,"name":"apache"}],"ring_slots":8,"slot_bytes":1048576,
        "header_workers":3,"stats_csv_path":"/tmp/x.csv"})");
    const FeederConfig c = FeederConfig::from_json(j);
    EXPECT_EQ(c.listen_ports, (std::vector<std::uint16_t>{5140, 5141}));
    ASSERT_EQ(c.nodes.size(), 2u);
    EXPECT_EQ(c.nodes[1].port, 9002);
    EXPECT_EQ(c.ring_slots, 8u);
    EXPECT_EQ(c.header_workers, 3u);
    EXPECT_EQ(c.registry.classify(5140, "x"), 1u);
    EXPECT_THROW(FeederConfig::from_json(nlohmann::json::parse(R"({"nodes":[],"header_workers":0})")), Error);
}
