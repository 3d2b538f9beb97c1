#include "loginson/feeder/ring_queue.hpp"

#include "loginson/error.hpp"

#include <cstring>

namespace loginson::feeder {

const char* to_string(SlotState s) noexcept {
    switch (s) {
    case SlotState::Free: return "FREE";
    case SlotState::Filling: return "FILLING";
    case SlotState::Ready: return "READY";
    case SlotState::Draining: return "DRAINING";
    }
    return "?";
}

RingQueue::RingQueue(std::size_t slots, std::size_t slot_bytes) : slots_(slots), slot_bytes_(slot_bytes) {
    if (slots < 2) throw Error(Errc::InvalidConfig, "ring needs at least 2 slots");
    if (slot_bytes == 0 || slot_bytes > UINT32_MAX) throw Error(Errc::InvalidConfig, "bad slot size");
    for (std::size_t i = 0; i < slots; ++i) {
        slots_[i].bytes.resize(slot_bytes);
        slots_[i].index = i;
    }
    slots_[0].state = SlotState::Filling;
}

bool RingQueue::advance_locked() {
    const std::size_t next = (filling_ + 1) % slots_.size();
    if (slots_[next].state != SlotState::Free) return false;
    BufferSlot& cur = slots_[filling_];
    cur.state = SlotState::Ready;
    ready_fifo_.push_back(filling_);
    filling_ = next;
    slots_[next].clear();
    slots_[next].state = SlotState::Filling;
    filling_lines_.store(0, std::memory_order_release);
    ready_cv_.notify_one();
    free_cv_.notify_all();
    return true;
}

IngestResult RingQueue::ingest(std::span<const std::uint8_t> datagram, const DatagramInfo& info) {
    IngestResult result;
    if (datagram.empty()) return result;

    // Payload bytes needed: every byte except the delimiters is kept, so the
    // datagram size is an upper bound.
    if (datagram.size() > slot_bytes_) {
        result.dropped = true;
        return result;
    }
    BufferSlot* slot = &slots_[filling_];
    if (slot->capacity() - slot->fill_len < datagram.size()) {
        std::lock_guard lock(mu_);
        if (slot->fill_len == 0 || !advance_locked()) {
            result.dropped = true;
            return result;
        }
        slot = &slots_[filling_];
    }

    const auto dgram_index = static_cast<std::uint32_t>(slot->datagrams.size());
    const char* p = reinterpret_cast<const char*>(datagram.data());
    const char* end = p + datagram.size();
    while (p < end) {
        const char* nl = static_cast<const char*>(std::memchr(p, '\n', static_cast<std::size_t>(end - p)));
        const char* line_end = nl ? nl : end;
        std::size_t len = static_cast<std::size_t>(line_end - p);
        if (len > 0 && p[len - 1] == '\r') --len;
        if (len > 0) {
            std::memcpy(slot->bytes.data() + slot->fill_len, p, len);
            slot->lines.push_back(LineRef{static_cast<std::uint32_t>(slot->fill_len),
                                          static_cast<std::uint32_t>(len), dgram_index});
            slot->fill_len += len;
            ++result.records;
        }
        p = nl ? nl + 1 : end;
    }
    if (result.records > 0) {
        slot->datagrams.push_back(info);
        filling_lines_.store(slot->lines.size(), std::memory_order_release);
    }
    return result;
}

bool RingQueue::publish_partial() {
    std::lock_guard lock(mu_);
    if (filling_lines_.load(std::memory_order_acquire) == 0) return false;
    return advance_locked();
}

BufferSlot* RingQueue::claim(std::optional<std::chrono::milliseconds> timeout) {
    std::unique_lock lock(mu_);
    auto ready = [this] { return closed_ || (!paused_ && !ready_fifo_.empty()); };
    if (timeout) {
        if (!ready_cv_.wait_for(lock, *timeout, ready)) return nullptr;
    } else {
        ready_cv_.wait(lock, ready);
    }
    if (paused_ || ready_fifo_.empty()) return nullptr;
    BufferSlot* slot = &slots_[ready_fifo_.front()];
    ready_fifo_.pop_front();
    slot->state = SlotState::Draining;
    slot->seq_base = next_seq_;
    next_seq_ += slot->lines.size();
    return slot;
}

void RingQueue::release(BufferSlot* slot) {
    std::lock_guard lock(mu_);
    slot->state = SlotState::Free;
    free_cv_.notify_all();
}

void RingQueue::close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    ready_cv_.notify_all();
    free_cv_.notify_all();
}

void RingQueue::set_paused(bool paused) {
    std::lock_guard lock(mu_);
    paused_ = paused;
    ready_cv_.notify_all();
}

bool RingQueue::wait_drained(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    return free_cv_.wait_for(lock, timeout, [this] {
        for (std::size_t i = 0; i < slots_.size(); ++i) {
            if (i == filling_) {
                if (filling_lines_.load(std::memory_order_acquire) != 0) return false;
            } else if (slots_[i].state != SlotState::Free) {
                return false;
            }
        }
        return true;
    });
}

std::vector<SlotState> RingQueue::states() const {
    std::lock_guard lock(mu_);
    std::vector<SlotState> out;
    for (const auto& s : slots_) out.push_back(s.state);
    return out;
}

std::uint64_t RingQueue::next_seq() const {
    std::lock_guard lock(mu_);
    return next_seq_;
}

std::vector<LogRecord> frame_records(const BufferSlot& slot, const TypeRegistry& registry) {
    std::vector<LogRecord> out;
    out.reserve(slot.line_count());
    for_each_framed(slot, registry, [&out](const RecordHeader& h, std::string_view payload) {
        out.push_back(LogRecord{h, std::string(payload)});
    });
    return out;
}

} // namespace loginson::feeder
