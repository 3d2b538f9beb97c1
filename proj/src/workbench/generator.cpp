#include "loginson/workbench/generator.hpp"

#include "loginson/error.hpp"

#include <chrono>
#include <thread>
#include <vector>

namespace loginson::workbench {

GenerateResult generate_load(const LoadProfile& profile, const net::Endpoint& target, GenerateOptions opts) {
    profile.validate();
    if (profile.count == 0 && profile.duration_s <= 0) {
        throw Error(Errc::InvalidModel, "load profile needs a count or a duration");
    }
    using clock = std::chrono::steady_clock;
    net::UdpSocket sock = net::UdpSocket::sender();
    LineGenerator gen(profile);
    GenerateResult res;

    std::string line;
    // Datagrams are laid out back to back in `batch`; `ends` marks where each stops.
    std::string batch;
    std::vector<std::size_t> ends;
    std::vector<std::uint64_t> lines_per;
    std::vector<std::span<const std::uint8_t>> views;
    std::size_t dgram_start = 0;
    std::uint64_t dgram_lines = 0;

    const auto start = clock::now();
    const auto deadline = profile.duration_s > 0
                              ? start + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(profile.duration_s))
                              : clock::time_point::max();
    const double ns_per_line = profile.rate > 0 ? 1e9 / profile.rate : 0;
    // Slow paced runs send one line per datagram and one datagram per call.
    const bool line_by_line = ns_per_line > 0 && profile.rate < 10000;
    const std::size_t batch_datagrams = (ns_per_line == 0 || profile.rate >= 100000) ? 32 : 1;
    batch.reserve(batch_datagrams * (opts.max_datagram_bytes + 8192));

    auto close_datagram = [&] {
        if (batch.size() == dgram_start) return;
        ends.push_back(batch.size());
        lines_per.push_back(dgram_lines);
        dgram_start = batch.size();
        dgram_lines = 0;
    };
    auto send = [&] {
        close_datagram();
        if (ends.empty()) return;
        views.clear();
        std::size_t from = 0;
        for (auto end : ends) {
            views.emplace_back(reinterpret_cast<const std::uint8_t*>(batch.data()) + from, end - from);
            from = end;
        }
        std::size_t done = 0;
        while (done < views.size()) {
            const std::size_t n = sock.send_batch(target, std::span(views).subspan(done));
            if (n == 0) {
                ++res.send_retries;
                std::this_thread::yield();
                continue;
            }
            for (std::size_t i = done; i < done + n; ++i) {
                ++res.datagrams;
                res.bytes += views[i].size();
                res.lines += lines_per[i];
            }
            done += n;
        }
        batch.clear();
        ends.clear();
        lines_per.clear();
        dgram_start = 0;
        if (ns_per_line > 0) {
            const auto due = start + std::chrono::nanoseconds(static_cast<std::int64_t>(ns_per_line * static_cast<double>(res.lines)));
            const auto now = clock::now();
            if (due > now) std::this_thread::sleep_for(due - now);
        }
    };

    for (std::uint64_t produced = 0;; ++produced) {
        if (profile.count > 0 && produced >= profile.count) break;
        if ((produced & 0xFF) == 0) {
            if (opts.stop && opts.stop->load(std::memory_order_relaxed)) break;
            if (clock::now() >= deadline) break;
        }
        gen.next_into(line);
        res.manifest.add(line);
        if (batch.size() > dgram_start && batch.size() - dgram_start + line.size() + 1 > opts.max_datagram_bytes) {
            close_datagram();
            if (ends.size() >= batch_datagrams) send();
        }
        batch += line;
        batch.push_back('\n');
        ++dgram_lines;
        if (line_by_line) send();
    }
    send();
    res.elapsed_s = std::chrono::duration<double>(clock::now() - start).count();
    return res;
}

} // namespace loginson::workbench
