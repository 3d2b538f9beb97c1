#include "loginson/workbench/metrics.hpp"

#include "loginson/error.hpp"
#include "loginson/record.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <thread>

namespace loginson::workbench {

SeriesSummary summarize(const std::vector<MetricsWindow>& windows) {
    SeriesSummary s;
    s.windows = windows.size();
    if (windows.empty()) return s;
    std::vector<double> v;
    v.reserve(windows.size());
    for (const auto& w : windows) v.push_back(static_cast<double>(w.records));
    double total = 0;
    for (double x : v) total += x;
    s.mean = total / static_cast<double>(v.size());
    double sq = 0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.stddev = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    s.median = n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
    return s;
}

SeriesSummary write_throughput_csv(const std::string& path, const std::vector<MetricsWindow>& windows) {
    std::ofstream out(path);
    if (!out) throw Error(Errc::IoError, "cannot write " + path);
    out << "window_start_ns,records,bytes\n";
    for (const auto& w : windows) out << w.window_start_ns << ',' << w.records << ',' << w.bytes << '\n';
    const SeriesSummary s = summarize(windows);
    out << "# mean,median,stddev\n# " << s.mean << ',' << s.median << ',' << s.stddev << '\n';
    return s;
}

struct ThroughputRecorder::Impl {
    Probe probe;
    unsigned width_ms;
    std::mutex mu;
    std::condition_variable cv;
    bool stop = false;
    std::vector<MetricsWindow> windows;
    std::thread thread;
};

ThroughputRecorder::ThroughputRecorder(Probe probe, unsigned width_ms) : impl_(new Impl) {
    impl_->probe = std::move(probe);
    impl_->width_ms = width_ms;
}

ThroughputRecorder::~ThroughputRecorder() {
    stop();
    delete impl_;
}

void ThroughputRecorder::start() {
    impl_->thread = std::thread([im = impl_] {
        using clock = std::chrono::steady_clock;
        const auto width = std::chrono::milliseconds(im->width_ms);
        auto [rec0, bytes0] = im->probe();
        auto next = clock::now() + width;
        std::uint64_t start_ns = now_ns();
        std::unique_lock lock(im->mu);
        while (!im->cv.wait_until(lock, next, [&] { return im->stop; })) {
            lock.unlock();
            const auto [rec, bytes] = im->probe();
            lock.lock();
            im->windows.push_back({start_ns, rec - rec0, bytes - bytes0});
            rec0 = rec;
            bytes0 = bytes;
            start_ns += static_cast<std::uint64_t>(im->width_ms) * 1'000'000ull;
            next += width;
        }
    });
}

void ThroughputRecorder::stop() {
    {
        std::lock_guard lock(impl_->mu);
        impl_->stop = true;
    }
    impl_->cv.notify_all();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::vector<MetricsWindow> ThroughputRecorder::windows() const {
    std::lock_guard lock(impl_->mu);
    return impl_->windows;
}

} // namespace loginson::workbench
