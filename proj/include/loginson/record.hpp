#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace loginson {

inline constexpr std::size_t kHeaderSize = 64;
inline constexpr std::uint16_t kHeaderVersion = 1;
inline constexpr std::array<std::uint8_t, 4> kHeaderMagic = {0x4C, 0x47, 0x53, 0x31}; // "LGS1"

inline constexpr std::uint16_t kFlagReplayed = 0x0001;

using Ipv6Bytes = std::array<std::uint8_t, 16>;
using HeaderBytes = std::array<std::uint8_t, kHeaderSize>;

/// Fixed 64-byte record header. Layout (all integers little-endian):
///
///   off  size  field
///     0     4  magic "LGS1"
///     4     2  version
///     6     2  flags (bit 0 = replayed from storage)
///     8     8  ingest_ts_ns
///    16     4  type_id
///    20     4  source_id
///    24     4  payload_len
///    28     8  seq_no
///    36    16  source_addr (IPv6; IPv4 as ::ffff:a.b.c.d)
///    52     2  source_port
///    54    10  reserved, zero
struct RecordHeader {
    std::uint16_t version = kHeaderVersion;
    std::uint16_t flags = 0;
    std::uint64_t ingest_ts_ns = 0;
    std::uint32_t type_id = 0;
    std::uint32_t source_id = 0;
    std::uint32_t payload_len = 0;
    std::uint64_t seq_no = 0;
    Ipv6Bytes source_addr{};
    std::uint16_t source_port = 0;

    friend bool operator==(const RecordHeader&, const RecordHeader&) = default;
};

void encode_header(const RecordHeader& h, std::span<std::uint8_t, kHeaderSize> out) noexcept;
HeaderBytes encode_header(const RecordHeader& h) noexcept;

/// Throws Error{BadMagic | UnsupportedVersion | NonzeroReserved}.
RecordHeader decode_header(std::span<const std::uint8_t, kHeaderSize> bytes);

/// Reads the payload_len field without validating the rest of the header.
std::uint32_t peek_payload_len(std::span<const std::uint8_t, kHeaderSize> bytes) noexcept;
std::uint64_t peek_ingest_ts(std::span<const std::uint8_t, kHeaderSize> bytes) noexcept;
std::uint32_t peek_type_id(std::span<const std::uint8_t, kHeaderSize> bytes) noexcept;

struct LogRecord {
    RecordHeader header;
    std::string payload;

    friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

/// Appends header + payload to out. header.payload_len is overwritten with the
/// payload size so the frame is always consistent.
void append_framed(std::vector<std::uint8_t>& out, RecordHeader header, std::string_view payload);
std::vector<std::uint8_t> frame(const LogRecord& rec);

/// Zero-copy view of one framed record inside a larger buffer.
struct RecordView {
    RecordHeader header;
    std::string_view payload;
    std::span<const std::uint8_t> frame; // header + payload bytes
};

/// Splits a buffer of back-to-back framed records. Iteration stops at the
/// first incomplete frame; remainder() reports how many bytes were left.
class FrameCursor {
public:
    explicit FrameCursor(std::span<const std::uint8_t> buffer) : buffer_(buffer) {}

    /// Returns the next complete record, or nullopt when fewer bytes than a
    /// full frame remain. Throws on a corrupt header.
    std::optional<RecordView> next();

    std::size_t offset() const noexcept { return offset_; }
    std::size_t remainder() const noexcept { return buffer_.size() - offset_; }

private:
    std::span<const std::uint8_t> buffer_;
    std::size_t offset_ = 0;
};

std::vector<LogRecord> decode_all(std::span<const std::uint8_t> buffer);

/// Closed time interval in nanoseconds since the Unix epoch.
struct Interval {
    std::uint64_t from_ts_ns = 0;
    std::uint64_t to_ts_ns = 0;

    bool valid() const noexcept { return from_ts_ns <= to_ts_ns; }
    bool contains(std::uint64_t ts) const noexcept { return from_ts_ns <= ts && ts <= to_ts_ns; }
    bool overlaps(std::uint64_t lo, std::uint64_t hi) const noexcept {
        return lo <= to_ts_ns && from_ts_ns <= hi;
    }
};

Ipv6Bytes ipv4_mapped(std::uint32_t ipv4_host_order) noexcept;
/// Parses dotted IPv4 or textual IPv6; returns nullopt on failure.
std::optional<Ipv6Bytes> parse_address(const std::string& text);
std::string format_address(const Ipv6Bytes& addr);

/// Stable 32-bit FNV-1a over the 16 address bytes and the little-endian port.
std::uint32_t source_hash(const Ipv6Bytes& addr, std::uint16_t port) noexcept;

std::uint64_t now_ns() noexcept;

} // namespace loginson
