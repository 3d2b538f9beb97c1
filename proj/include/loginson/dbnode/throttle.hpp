#pragma once

#include <chrono>
#include <cstdint>
#include <mutex>

namespace loginson::dbnode {

/// Time source for rate limiters; tests substitute a virtual clock.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::uint64_t now_ns() = 0;
    virtual void sleep_until_ns(std::uint64_t t) = 0;
};

class SteadyClock final : public Clock {
public:
    std::uint64_t now_ns() override;
    void sleep_until_ns(std::uint64_t t) override;
    static SteadyClock& instance();
};

/// Sleeping advances time instantly.
class VirtualClock final : public Clock {
public:
    std::uint64_t now_ns() override;
    void sleep_until_ns(std::uint64_t t) override;
    void advance_ns(std::uint64_t d);

private:
    std::mutex mu_;
    std::uint64_t now_ = 0;
};

/// Token bucket in debt form: a request always succeeds immediately against
/// the balance, and the caller sleeps until the balance is no longer negative.
/// The bucket starts empty and holds at most `burst_bytes`.
class TokenBucket {
public:
    /// rate_bytes_per_s <= 0 means unlimited.
    TokenBucket(double rate_bytes_per_s, double burst_bytes, Clock& clock = SteadyClock::instance());

    /// Blocks until n bytes are granted. Returns the time spent waiting.
    std::chrono::nanoseconds acquire(std::uint64_t n);

    double rate() const noexcept { return rate_; }
    bool unlimited() const noexcept { return rate_ <= 0; }
    std::uint64_t granted_bytes() const;

private:
    double rate_;
    double burst_;
    Clock& clock_;
    mutable std::mutex mu_;
    double balance_ = 0;
    std::uint64_t last_ns_;
    std::uint64_t granted_ = 0;
};

/// Flush-side limiter: U x W_max bytes/s. U >= 1 (or an unknown W_max)
/// disables limiting entirely.
class WriteThrottle {
public:
    WriteThrottle(double max_bytes_per_s, double utilization_cap, double burst_bytes = 1 << 20,
                  Clock& clock = SteadyClock::instance());

    std::chrono::nanoseconds acquire(std::uint64_t n) { return bucket_.acquire(n); }
    double max_bytes_per_s() const noexcept { return w_max_; }
    double utilization_cap() const noexcept { return cap_; }
    double rate() const noexcept { return bucket_.rate(); }
    std::uint64_t granted_bytes() const { return bucket_.granted_bytes(); }

private:
    double w_max_;
    double cap_;
    TokenBucket bucket_;
};

} // namespace loginson::dbnode
