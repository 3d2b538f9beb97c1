#include "loginson/workbench/bench.hpp"

#include "loginson/feeder/feeder.hpp"
#include "loginson/workbench/generator.hpp"
#include "loginson/workbench/sink.hpp"

#include <atomic>
#include <memory>
#include <thread>

namespace loginson::workbench {

BenchResult run_feeder_bench(const BenchOptions& opts) {
    std::vector<std::unique_ptr<CountingSink>> sinks;
    SinkOptions sink_opts;
    for (std::size_t i = 0; i < opts.nodes; ++i) sinks.push_back(std::make_unique<CountingSink>(sink_opts));

    feeder::FeederConfig cfg;
    cfg.bind_host = "127.0.0.1";
    if (opts.udp) cfg.listen_ports = {0};
    for (const auto& s : sinks) cfg.nodes.push_back(s->endpoint());
    cfg.header_workers = opts.header_workers;
    cfg.ring_slots = opts.ring_slots;
    cfg.slot_bytes = opts.slot_bytes;
    feeder::Feeder feeder(cfg);
    feeder.start();

    LoadProfile profile = opts.profile;
    profile.count = 0;
    profile.duration_s = opts.duration_s;
    BenchResult res;
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t start_ns = now_ns();
    if (opts.udp) {
        GenerateOptions gopts;
        gopts.max_datagram_bytes = opts.max_datagram_bytes;
        res.lines_sent = generate_load(profile, net::Endpoint{"127.0.0.1", feeder.udp_ports().at(0)}, gopts).lines;
    } else {
        LineGenerator gen(profile);
        const Ipv6Bytes src{};
        std::string line, dgram;
        const auto deadline = t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                       std::chrono::duration<double>(opts.duration_s));
        std::uint64_t lines_in_dgram = 0;
        while (true) {
            if ((res.lines_sent & 0xFF) == 0 && std::chrono::steady_clock::now() >= deadline) break;
            gen.next_into(line);
            if (!dgram.empty() && dgram.size() + line.size() + 1 > opts.max_datagram_bytes) {
                const auto data = std::span(reinterpret_cast<const std::uint8_t*>(dgram.data()), dgram.size());
                while (feeder.ingest_datagram(data, 0, src, 0).dropped) std::this_thread::yield();
                res.lines_sent += lines_in_dgram;
                dgram.clear();
                lines_in_dgram = 0;
            }
            dgram += line;
            dgram.push_back('\n');
            ++lines_in_dgram;
        }
    }
    res.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::uint64_t end_ns = now_ns();
    feeder.flush(std::chrono::seconds(10));
    feeder.stop();
    for (const auto& s : sinks) res.records_stored += s->records();
    res.datagrams_dropped = feeder.counters().datagrams_dropped.load();

    // Whole 100 ms buckets after the warm-up and before generation stopped.
    const auto first = start_ns + static_cast<std::uint64_t>(opts.warmup_s * 1e9);
    for (const auto& s : sinks) {
        const auto w = s->arrival_windows(first, end_ns);
        if (res.windows.empty()) {
            res.windows = w;
            continue;
        }
        for (std::size_t i = 0; i < w.size() && i < res.windows.size(); ++i) {
            res.windows[i].records += w[i].records;
            res.windows[i].bytes += w[i].bytes;
        }
    }
    res.summary = opts.csv_path.empty() ? summarize(res.windows) : write_throughput_csv(opts.csv_path, res.windows);
    return res;
}

} // namespace loginson::workbench
