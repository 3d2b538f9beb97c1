#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace loginson::feeder {

/// Monotone counters updated with relaxed atomic increments.
struct FeederCounters {
    std::atomic<std::uint64_t> records_in{0};
    std::atomic<std::uint64_t> bytes_in{0};
    std::atomic<std::uint64_t> records_out{0};
    std::atomic<std::uint64_t> datagrams_in{0};
    std::atomic<std::uint64_t> datagrams_dropped{0};
};

/// Deltas over one 100 ms window.
struct StatsWindow {
    std::uint64_t window_start_ns = 0;
    std::uint64_t records_in = 0;
    std::uint64_t records_out = 0;
    std::uint64_t bytes_in = 0;
    std::uint64_t datagrams_dropped = 0;
    std::vector<std::uint64_t> per_node_sent;
};

/// Samples counters every `width` and keeps completed windows. Windows are
/// aligned to the sampler's start; each carries deltas only.
class StatsSampler {
public:
    using PerNodeFn = std::function<std::vector<std::uint64_t>()>;

    StatsSampler(const FeederCounters& counters, PerNodeFn per_node, std::string csv_path = {},
                 std::chrono::milliseconds width = std::chrono::milliseconds(100));
    ~StatsSampler();

    void start();
    void stop();

    std::vector<StatsWindow> windows() const;
    /// Windows whose start is at or after since_ns.
    std::vector<StatsWindow> windows_since(std::uint64_t since_ns) const;

private:
    void run();
    void take_sample(std::uint64_t window_start_ns);

    const FeederCounters& counters_;
    PerNodeFn per_node_;
    std::string csv_path_;
    std::chrono::milliseconds width_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    bool stop_ = false;
    std::vector<StatsWindow> windows_;
    std::thread thread_;

    std::uint64_t last_in_ = 0, last_out_ = 0, last_bytes_ = 0, last_drop_ = 0;
    std::vector<std::uint64_t> last_nodes_;
};

} // namespace loginson::feeder
