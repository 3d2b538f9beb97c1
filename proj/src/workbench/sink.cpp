#include "loginson/workbench/sink.hpp"

#include <sys/socket.h>

#include <cstring>

namespace loginson::workbench {

namespace {
constexpr std::uint64_t kBucketNs = 100'000'000;
}

CountingSink::CountingSink(SinkOptions opts, std::uint16_t port)
    : opts_(opts), listener_(net::Endpoint{"127.0.0.1", port}), port_(listener_.port()) {
    acceptor_ = std::thread([this] { accept_loop(); });
}

CountingSink::~CountingSink() {
    kill();
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(mu_);
        threads.swap(conn_threads_);
    }
    for (auto& t : threads) t.join();
}

void CountingSink::kill() {
    stop_.store(true);
    std::lock_guard lock(mu_);
    for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
}

void CountingSink::accept_loop() {
    while (!stop_.load()) {
        auto s = listener_.accept(std::chrono::milliseconds(50));
        if (!s) continue;
        if (stop_.load()) break;
        connections_.fetch_add(1);
        std::lock_guard lock(mu_);
        open_fds_.push_back(s->fd());
        conn_threads_.emplace_back([this, st = std::move(*s)]() mutable { serve(std::move(st)); });
    }
    listener_.close();
}

void CountingSink::serve(net::TcpStream stream) {
    stream.set_recv_buffer(4 << 20);
    std::vector<std::uint8_t> buf(1 << 20);
    std::size_t have = 0;
    std::uint64_t conn_records = 0;
    try {
        while (!stop_.load()) {
            if (have == buf.size()) buf.resize(buf.size() * 2);
            const std::size_t n = stream.read_some(std::span<std::uint8_t>(buf.data() + have, buf.size() - have));
            if (n == 0) break;
            have += n;
            FrameCursor cur(std::span<const std::uint8_t>(buf.data(), have));
            std::uint64_t got = 0;
            std::uint64_t got_bytes = 0;
            std::unique_lock lock(mu_, std::defer_lock);
            if (opts_.keep_records || opts_.track_manifest) lock.lock();
            while (auto rv = cur.next()) {
                ++got;
                got_bytes += rv->frame.size();
                if (opts_.keep_records) kept_.push_back(LogRecord{rv->header, std::string(rv->payload)});
                if (opts_.track_manifest) manifest_.add(rv->payload);
            }
            if (lock.owns_lock()) lock.unlock();
            const std::size_t used = cur.offset();
            std::memmove(buf.data(), buf.data() + used, have - used);
            have -= used;
            if (got == 0) continue;
            if (stop_.load()) break;
            conn_records += got;
            records_.fetch_add(got);
            bytes_.fetch_add(got_bytes);
            {
                std::lock_guard block(bucket_mu_);
                auto& b = buckets_[now_ns() / kBucketNs];
                b.first += got;
                b.second += got_bytes;
            }
            if (opts_.ack) {
                std::uint8_t ack[8];
                for (int i = 0; i < 8; ++i) ack[i] = static_cast<std::uint8_t>(conn_records >> (8 * i));
                stream.write_all(std::span<const std::uint8_t>(ack, 8));
            }
        }
    } catch (const std::exception&) {
    }
    std::lock_guard lock(mu_);
    std::erase(open_fds_, stream.fd());
    stream.close();
}

std::vector<LogRecord> CountingSink::received() const {
    std::lock_guard lock(mu_);
    return kept_;
}

std::vector<MetricsWindow> CountingSink::arrival_windows(std::uint64_t from_ns, std::uint64_t to_ns) const {
    std::vector<MetricsWindow> out;
    std::lock_guard lock(bucket_mu_);
    for (std::uint64_t b = from_ns / kBucketNs; (b + 1) * kBucketNs <= to_ns; ++b) {
        if (b * kBucketNs < from_ns) continue;
        const auto it = buckets_.find(b);
        out.push_back({b * kBucketNs, it == buckets_.end() ? 0 : it->second.first,
                       it == buckets_.end() ? 0 : it->second.second});
    }
    return out;
}

Manifest CountingSink::manifest() const {
    std::lock_guard lock(mu_);
    return manifest_;
}

} // namespace loginson::workbench
