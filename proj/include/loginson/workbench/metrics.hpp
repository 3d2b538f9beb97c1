#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace loginson::workbench {

struct MetricsWindow {
    std::uint64_t window_start_ns = 0;
    std::uint64_t records = 0;
    std::uint64_t bytes = 0;
};

struct SeriesSummary {
    std::size_t windows = 0;
    double mean = 0;
    double median = 0;
    double stddev = 0; // sample standard deviation
    double cv() const noexcept { return mean > 0 ? stddev / mean : 0; }
};

SeriesSummary summarize(const std::vector<MetricsWindow>& windows);

/// Writes `window_start_ns,records,bytes` rows, then a `# mean,median,stddev`
/// summary row. Returns the summary.
SeriesSummary write_throughput_csv(const std::string& path, const std::vector<MetricsWindow>& windows);

/// Polls cumulative (records, bytes) counters every `width_ms` and keeps the
/// deltas. Used when a component only exposes running totals.
class ThroughputRecorder {
public:
    using Probe = std::function<std::pair<std::uint64_t, std::uint64_t>()>;

    explicit ThroughputRecorder(Probe probe, unsigned width_ms = 100);
    ~ThroughputRecorder();

    void start();
    void stop();
    std::vector<MetricsWindow> windows() const;

private:
    struct Impl;
    Impl* impl_;
};

} // namespace loginson::workbench
