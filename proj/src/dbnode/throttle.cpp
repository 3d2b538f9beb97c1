#include "loginson/dbnode/throttle.hpp"

#include <algorithm>
#include <thread>

namespace loginson::dbnode {

std::uint64_t SteadyClock::now_ns() {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
            .count());
}

void SteadyClock::sleep_until_ns(std::uint64_t t) {
    std::this_thread::sleep_until(std::chrono::steady_clock::time_point(std::chrono::nanoseconds(t)));
}

SteadyClock& SteadyClock::instance() {
    static SteadyClock c;
    return c;
}

std::uint64_t VirtualClock::now_ns() {
    std::lock_guard lock(mu_);
    return now_;
}

void VirtualClock::sleep_until_ns(std::uint64_t t) {
    std::lock_guard lock(mu_);
    now_ = std::max(now_, t);
}

void VirtualClock::advance_ns(std::uint64_t d) {
    std::lock_guard lock(mu_);
    now_ += d;
}

TokenBucket::TokenBucket(double rate_bytes_per_s, double burst_bytes, Clock& clock)
    : rate_(rate_bytes_per_s), burst_(std::max(burst_bytes, 0.0)), clock_(clock), last_ns_(clock.now_ns()) {}

std::chrono::nanoseconds TokenBucket::acquire(std::uint64_t n) {
    if (unlimited()) {
        std::lock_guard lock(mu_);
        granted_ += n;
        return std::chrono::nanoseconds(0);
    }
    std::uint64_t wake = 0;
    std::uint64_t start = 0;
    {
        std::lock_guard lock(mu_);
        start = clock_.now_ns();
        if (start > last_ns_) {
            balance_ = std::min(burst_, balance_ + static_cast<double>(start - last_ns_) * rate_ / 1e9);
            last_ns_ = start;
        }
        balance_ -= static_cast<double>(n);
        granted_ += n;
        if (balance_ < 0) wake = last_ns_ + static_cast<std::uint64_t>(-balance_ / rate_ * 1e9);
    }
    if (wake > start) {
        clock_.sleep_until_ns(wake);
        return std::chrono::nanoseconds(wake - start);
    }
    return std::chrono::nanoseconds(0);
}

std::uint64_t TokenBucket::granted_bytes() const {
    std::lock_guard lock(mu_);
    return granted_;
}

namespace {

double throttle_rate(double w_max, double cap) {
    if (w_max <= 0 || cap >= 1.0) return 0;
    return w_max * cap;
}

} // namespace

WriteThrottle::WriteThrottle(double max_bytes_per_s, double utilization_cap, double burst_bytes, Clock& clock)
    : w_max_(max_bytes_per_s), cap_(utilization_cap), bucket_(throttle_rate(max_bytes_per_s, utilization_cap), burst_bytes, clock) {}

} // namespace loginson::dbnode
