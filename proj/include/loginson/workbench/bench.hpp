#pragma once

#include "loginson/workbench/metrics.hpp"
#include "loginson/workbench/profile.hpp"

#include <string>
#include <vector>

namespace loginson::workbench {

struct BenchOptions {
    std::size_t header_workers = 4;
    std::size_t nodes = 2;
    /// Fixed 291-byte lines unless overridden; rate 0 means as fast as possible.
    LoadProfile profile = [] {
        LoadProfile p;
        p.mode = LoadProfile::Mode::Fixed;
        p.fixed_size = 291;
        return p;
    }();
    double duration_s = 30;
    /// Windows recorded before this point are excluded from the summary.
    double warmup_s = 1.0;
    /// true: datagrams go through a loopback UDP socket; false: they are
    /// handed to the feeder in-process and a full ring applies backpressure.
    bool udp = true;
    std::size_t max_datagram_bytes = 1400;
    std::size_t ring_slots = 16;
    std::size_t slot_bytes = 4u << 20;
    std::string csv_path;
};

struct BenchResult {
    std::vector<MetricsWindow> windows; // steady-state windows only
    SeriesSummary summary;              // records per 100 ms window
    std::uint64_t lines_sent = 0;
    std::uint64_t records_stored = 0;
    std::uint64_t datagrams_dropped = 0;
    double elapsed_s = 0;

    double records_per_s() const noexcept { return summary.mean * 10.0; }
};

/// Feeder plus `nodes` acknowledging sinks on loopback, driven by the load
/// generator; throughput is what the sinks receive per 100 ms.
BenchResult run_feeder_bench(const BenchOptions& opts);

} // namespace loginson::workbench
