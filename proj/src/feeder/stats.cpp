#include "loginson/feeder/stats.hpp"

#include "loginson/record.hpp"

#include <fstream>

namespace loginson::feeder {

StatsSampler::StatsSampler(const FeederCounters& counters, PerNodeFn per_node, std::string csv_path,
                           std::chrono::milliseconds width)
    : counters_(counters), per_node_(std::move(per_node)), csv_path_(std::move(csv_path)), width_(width) {}

StatsSampler::~StatsSampler() { stop(); }

void StatsSampler::start() {
    last_in_ = counters_.records_in.load();
    last_out_ = counters_.records_out.load();
    last_bytes_ = counters_.bytes_in.load();
    last_drop_ = counters_.datagrams_dropped.load();
    last_nodes_ = per_node_ ? per_node_() : std::vector<std::uint64_t>{};
    if (!csv_path_.empty()) {
        std::ofstream csv(csv_path_, std::ios::trunc);
        csv << "window_start_ns,records_in,records_out,bytes_in,datagrams_dropped";
        for (std::size_t i = 0; i < last_nodes_.size(); ++i) csv << ",node" << i << "_sent";
        csv << "\n";
    }
    thread_ = std::thread([this] { run(); });
}

void StatsSampler::stop() {
    {
        std::lock_guard lock(mu_);
        stop_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
}

void StatsSampler::run() {
    using clock = std::chrono::steady_clock;
    auto next = clock::now() + width_;
    std::uint64_t window_start = now_ns();
    std::unique_lock lock(mu_);
    while (!stop_) {
        if (cv_.wait_until(lock, next, [this] { return stop_; })) break;
        lock.unlock();
        take_sample(window_start);
        lock.lock();
        window_start += static_cast<std::uint64_t>(std::chrono::nanoseconds(width_).count());
        next += width_;
    }
}

void StatsSampler::take_sample(std::uint64_t window_start_ns) {
    StatsWindow w;
    w.window_start_ns = window_start_ns;
    const auto in = counters_.records_in.load(std::memory_order_relaxed);
    const auto out = counters_.records_out.load(std::memory_order_relaxed);
    const auto bytes = counters_.bytes_in.load(std::memory_order_relaxed);
    const auto drop = counters_.datagrams_dropped.load(std::memory_order_relaxed);
    w.records_in = in - last_in_;
    w.records_out = out - last_out_;
    w.bytes_in = bytes - last_bytes_;
    w.datagrams_dropped = drop - last_drop_;
    last_in_ = in;
    last_out_ = out;
    last_bytes_ = bytes;
    last_drop_ = drop;
    if (per_node_) {
        const auto nodes = per_node_();
        w.per_node_sent.resize(nodes.size());
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            w.per_node_sent[i] = nodes[i] - (i < last_nodes_.size() ? last_nodes_[i] : 0);
        }
        last_nodes_ = nodes;
    }
    if (!csv_path_.empty()) {
        std::ofstream csv(csv_path_, std::ios::app);
        csv << w.window_start_ns << ',' << w.records_in << ',' << w.records_out << ',' << w.bytes_in << ','
            << w.datagrams_dropped;
        for (auto v : w.per_node_sent) csv << ',' << v;
        csv << "\n";
    }
    std::lock_guard lock(mu_);
    windows_.push_back(std::move(w));
}

std::vector<StatsWindow> StatsSampler::windows() const {
    std::lock_guard lock(mu_);
    return windows_;
}

std::vector<StatsWindow> StatsSampler::windows_since(std::uint64_t since_ns) const {
    std::lock_guard lock(mu_);
    std::vector<StatsWindow> out;
    for (const auto& w : windows_) {
        if (w.window_start_ns >= since_ns) out.push_back(w);
    }
    return out;
}

} // namespace loginson::feeder
