#include "loginson/record.hpp"

#include "loginson/error.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <chrono>
#include <cstring>

namespace loginson {

namespace {

template <typename T>
void put_le(std::uint8_t* p, T v) noexcept {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        p[i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
}

template <typename T>
T get_le(const std::uint8_t* p) noexcept {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(p[i]) << (8 * i);
    }
    return v;
}

constexpr std::size_t kOffVersion = 4;
constexpr std::size_t kOffFlags = 6;
constexpr std::size_t kOffTs = 8;
constexpr std::size_t kOffType = 16;
constexpr std::size_t kOffSource = 20;
constexpr std::size_t kOffLen = 24;
constexpr std::size_t kOffSeq = 28;
constexpr std::size_t kOffAddr = 36;
constexpr std::size_t kOffPort = 52;
constexpr std::size_t kOffReserved = 54;

} // namespace

void encode_header(const RecordHeader& h, std::span<std::uint8_t, kHeaderSize> out) noexcept {
    std::uint8_t* p = out.data();
    std::memcpy(p, kHeaderMagic.data(), kHeaderMagic.size());
    put_le(p + kOffVersion, h.version);
    put_le(p + kOffFlags, h.flags);
    put_le(p + kOffTs, h.ingest_ts_ns);
    put_le(p + kOffType, h.type_id);
    put_le(p + kOffSource, h.source_id);
    put_le(p + kOffLen, h.payload_len);
    put_le(p + kOffSeq, h.seq_no);
    std::memcpy(p + kOffAddr, h.source_addr.data(), h.source_addr.size());
    put_le(p + kOffPort, h.source_port);
    std::memset(p + kOffReserved, 0, kHeaderSize - kOffReserved);
}

HeaderBytes encode_header(const RecordHeader& h) noexcept {
    HeaderBytes out;
    encode_header(h, std::span<std::uint8_t, kHeaderSize>(out));
    return out;
}

RecordHeader decode_header(std::span<const std::uint8_t, kHeaderSize> bytes) {
    const std::uint8_t* p = bytes.data();
    if (std::memcmp(p, kHeaderMagic.data(), kHeaderMagic.size()) != 0) {
        throw Error(Errc::BadMagic, "record header magic mismatch");
    }
    RecordHeader h;
    h.version = get_le<std::uint16_t>(p + kOffVersion);
    if (h.version != kHeaderVersion) {
        throw Error(Errc::UnsupportedVersion, "header version " + std::to_string(h.version));
    }
    for (std::size_t i = kOffReserved; i < kHeaderSize; ++i) {
        if (p[i] != 0) {
            throw Error(Errc::NonzeroReserved, "reserved byte " + std::to_string(i) + " set");
        }
    }
    h.flags = get_le<std::uint16_t>(p + kOffFlags);
    h.ingest_ts_ns = get_le<std::uint64_t>(p + kOffTs);
    h.type_id = get_le<std::uint32_t>(p + kOffType);
    h.source_id = get_le<std::uint32_t>(p + kOffSource);
    h.payload_len = get_le<std::uint32_t>(p + kOffLen);
    h.seq_no = get_le<std::uint64_t>(p + kOffSeq);
    std::memcpy(h.source_addr.data(), p + kOffAddr, h.source_addr.size());
    h.source_port = get_le<std::uint16_t>(p + kOffPort);
    return h;
}

std::uint32_t peek_payload_len(std::span<const std::uint8_t, kHeaderSize> bytes) noexcept {
    return get_le<std::uint32_t>(bytes.data() + kOffLen);
}

std::uint64_t peek_ingest_ts(std::span<const std::uint8_t, kHeaderSize> bytes) noexcept {
    return get_le<std::uint64_t>(bytes.data() + kOffTs);
}

std::uint32_t peek_type_id(std::span<const std::uint8_t, kHeaderSize> bytes) noexcept {
    return get_le<std::uint32_t>(bytes.data() + kOffType);
}

void append_framed(std::vector<std::uint8_t>& out, RecordHeader header, std::string_view payload) {
    header.payload_len = static_cast<std::uint32_t>(payload.size());
    const std::size_t at = out.size();
    out.resize(at + kHeaderSize + payload.size());
    encode_header(header, std::span<std::uint8_t, kHeaderSize>(out.data() + at, kHeaderSize));
    std::memcpy(out.data() + at + kHeaderSize, payload.data(), payload.size());
}

std::vector<std::uint8_t> frame(const LogRecord& rec) {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize + rec.payload.size());
    append_framed(out, rec.header, rec.payload);
    return out;
}

std::optional<RecordView> FrameCursor::next() {
    if (remainder() < kHeaderSize) {
        return std::nullopt;
    }
    const std::uint8_t* p = buffer_.data() + offset_;
    std::span<const std::uint8_t, kHeaderSize> hdr(p, kHeaderSize);
    const std::uint32_t len = peek_payload_len(hdr);
    if (remainder() - kHeaderSize < len) {
        return std::nullopt;
    }
    RecordView view{decode_header(hdr),
                    std::string_view(reinterpret_cast<const char*>(p + kHeaderSize), len),
                    std::span<const std::uint8_t>(p, kHeaderSize + len)};
    offset_ += kHeaderSize + len;
    return view;
}

std::vector<LogRecord> decode_all(std::span<const std::uint8_t> buffer) {
    std::vector<LogRecord> out;
    FrameCursor cursor(buffer);
    while (auto rec = cursor.next()) {
        out.push_back(LogRecord{rec->header, std::string(rec->payload)});
    }
    if (cursor.remainder() != 0) {
        throw Error(Errc::Truncated, std::to_string(cursor.remainder()) + " trailing bytes");
    }
    return out;
}

Ipv6Bytes ipv4_mapped(std::uint32_t ipv4_host_order) noexcept {
    Ipv6Bytes a{};
    a[10] = 0xff;
    a[11] = 0xff;
    a[12] = static_cast<std::uint8_t>(ipv4_host_order >> 24);
    a[13] = static_cast<std::uint8_t>(ipv4_host_order >> 16);
    a[14] = static_cast<std::uint8_t>(ipv4_host_order >> 8);
    a[15] = static_cast<std::uint8_t>(ipv4_host_order);
    return a;
}

std::optional<Ipv6Bytes> parse_address(const std::string& text) {
    in_addr v4{};
    if (inet_pton(AF_INET, text.c_str(), &v4) == 1) {
        return ipv4_mapped(ntohl(v4.s_addr));
    }
    in6_addr v6{};
    if (inet_pton(AF_INET6, text.c_str(), &v6) == 1) {
        Ipv6Bytes a;
        std::memcpy(a.data(), &v6, a.size());
        return a;
    }
    return std::nullopt;
}

std::string format_address(const Ipv6Bytes& addr) {
    char buf[INET6_ADDRSTRLEN] = {};
    const bool mapped = std::all_of(addr.begin(), addr.begin() + 10, [](auto b) { return b == 0; }) &&
                        addr[10] == 0xff && addr[11] == 0xff;
    if (mapped) {
        inet_ntop(AF_INET, addr.data() + 12, buf, sizeof buf);
    } else {
        inet_ntop(AF_INET6, addr.data(), buf, sizeof buf);
    }
    return buf;
}

std::uint32_t source_hash(const Ipv6Bytes& addr, std::uint16_t port) noexcept {
    std::uint32_t h = 2166136261u;
    auto mix = [&h](std::uint8_t b) {
        h ^= b;
        h *= 16777619u;
    };
    for (auto b : addr) mix(b);
    mix(static_cast<std::uint8_t>(port));
    mix(static_cast<std::uint8_t>(port >> 8));
    return h;
}

std::uint64_t now_ns() noexcept {
    return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                          std::chrono::system_clock::now().time_since_epoch())
                                          .count());
}

} // namespace loginson
