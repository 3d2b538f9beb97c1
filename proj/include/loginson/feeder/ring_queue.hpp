#pragma once

#include "loginson/record.hpp"
#include "loginson/type_registry.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace loginson::feeder {

enum class SlotState { Free, Filling, Ready, Draining };

const char* to_string(SlotState s) noexcept;

/// Receipt metadata shared by every line of one datagram.
struct DatagramInfo {
    std::uint64_t ingest_ts_ns = 0;
    Ipv6Bytes source_addr{};
    std::uint16_t source_port = 0;
    std::uint16_t listener_port = 0;
};

struct LineRef {
    std::uint32_t offset = 0;
    std::uint32_t length = 0;
    std::uint32_t datagram = 0;
};

/// One fixed-capacity buffer of the ring. Lines are stored back to back
/// without their newline terminators.
struct BufferSlot {
    SlotState state = SlotState::Free;
    std::vector<std::uint8_t> bytes;
    std::size_t fill_len = 0;
    std::vector<LineRef> lines;
    std::vector<DatagramInfo> datagrams;
    std::size_t index = 0;
    /// First seq_no of this slot's lines, assigned when a worker claims it.
    std::uint64_t seq_base = 0;

    std::size_t capacity() const noexcept { return bytes.size(); }
    std::size_t line_count() const noexcept { return lines.size(); }
    std::string_view line(std::size_t i) const noexcept {
        return {reinterpret_cast<const char*>(bytes.data()) + lines[i].offset, lines[i].length};
    }
    const DatagramInfo& info(std::size_t i) const noexcept { return datagrams[lines[i].datagram]; }
    void clear() noexcept {
        fill_len = 0;
        lines.clear();
        datagrams.clear();
    }
};

struct IngestResult {
    std::size_t records = 0;
    bool dropped = false; // RingFull or oversize datagram
};

/// Circular queue of P buffers shared by one receiver and N header workers.
/// The receiver owns the single FILLING slot without locking; the mutex is
/// taken only on slot state transitions.
class RingQueue {
public:
    RingQueue(std::size_t slots, std::size_t slot_bytes);

    /// Receiver side. Splits on '\n', strips a trailing '\r', skips empty
    /// lines. When the datagram does not fit the FILLING slot, that slot is
    /// published and the next slot in circular order must be FREE, otherwise
    /// the whole datagram is dropped (RingFull).
    IngestResult ingest(std::span<const std::uint8_t> datagram, const DatagramInfo& info);

    /// Publishes a non-empty FILLING slot if the next slot is free. Receiver
    /// thread only.
    bool publish_partial();

    /// Worker side: blocks until a READY slot is available (FIFO order) or the
    /// queue is closed. Assigns the slot's seq_no block from the shared counter.
    BufferSlot* claim(std::optional<std::chrono::milliseconds> timeout = std::nullopt);
    void release(BufferSlot* slot);

    void close();
    void set_paused(bool paused);

    /// Waits until every slot is FREE except the FILLING one (and it is empty).
    bool wait_drained(std::chrono::milliseconds timeout);

    std::size_t slot_count() const noexcept { return slots_.size(); }
    std::size_t slot_bytes() const noexcept { return slot_bytes_; }
    std::vector<SlotState> states() const;
    std::uint64_t next_seq() const;

private:
    bool advance_locked();

    std::vector<BufferSlot> slots_;
    std::size_t slot_bytes_;
    std::size_t filling_ = 0;
    std::atomic<std::size_t> filling_lines_{0};
    std::deque<std::size_t> ready_fifo_;
    std::uint64_t next_seq_ = 0;
    bool closed_ = false;
    bool paused_ = false;
    mutable std::mutex mu_;
    std::condition_variable ready_cv_;
    std::condition_variable free_cv_;
};

/// Visits each line of a claimed slot as (header, payload). seq_no runs from
/// slot.seq_base; type comes from the registry and the datagram's listener port.
template <typename Fn>
void for_each_framed(const BufferSlot& slot, const TypeRegistry& registry, Fn&& fn) {
    RecordHeader h;
    std::uint32_t current = UINT32_MAX;
    for (std::size_t i = 0; i < slot.lines.size(); ++i) {
        const LineRef& ref = slot.lines[i];
        if (ref.datagram != current) {
            current = ref.datagram;
            const DatagramInfo& d = slot.datagrams[current];
            h.ingest_ts_ns = d.ingest_ts_ns;
            h.source_addr = d.source_addr;
            h.source_port = d.source_port;
            h.source_id = source_hash(d.source_addr, d.source_port);
        }
        const std::string_view payload = slot.line(i);
        h.seq_no = slot.seq_base + i;
        h.payload_len = ref.length;
        h.type_id = registry.classify(slot.datagrams[current].listener_port, payload);
        fn(static_cast<const RecordHeader&>(h), payload);
    }
}

/// Materialized form of for_each_framed; marks nothing, copies payloads.
std::vector<LogRecord> frame_records(const BufferSlot& slot, const TypeRegistry& registry);

} // namespace loginson::feeder
