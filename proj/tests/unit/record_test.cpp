#include "loginson/error.hpp"
#include "loginson/record.hpp"
#include "loginson/type_registry.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace loginson;

namespace {

RecordHeader random_header(std::mt19937_64& rng) {
    RecordHeader h;
    h.flags = static_cast<std::uint16_t>(rng() & 1);
    h.ingest_ts_ns = rng();
    h.type_id = static_cast<std::uint32_t>(rng());
    h.source_id = static_cast<std::uint32_t>(rng());
    h.payload_len = static_cast<std::uint32_t>(rng());
    h.seq_no = rng();
    for (auto& b : h.source_addr) b = static_cast<std::uint8_t>(rng());
    h.source_port = static_cast<std::uint16_t>(rng());
    return h;
}

std::span<const std::uint8_t, kHeaderSize> as_span(const HeaderBytes& b) {
    return std::span<const std::uint8_t, kHeaderSize>(b);
}

} // namespace

TEST(RecordHeader, ZeroCaseIsMagicVersionThenZeros) {
    const auto bytes = encode_header(RecordHeader{});
    ASSERT_EQ(bytes.size(), 64u);
    EXPECT_EQ(bytes[0], 'L');
    EXPECT_EQ(bytes[1], 'G');
    EXPECT_EQ(bytes[2], 'S');
    EXPECT_EQ(bytes[3], '1');
    EXPECT_EQ(bytes[4], 0x01);
    EXPECT_EQ(bytes[5], 0x00);
    for (std::size_t i = 6; i < 64; ++i) EXPECT_EQ(bytes[i], 0) << i;
}

// Frozen from tests/oracles/header_golden.py.
TEST(RecordHeader, GoldenVectorSmall) {
    const HeaderBytes expected = {
        0x4c, 0x47, 0x53, 0x31, 0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
        0x02, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x03, 0x00, 0x00, 0x00, 0x04, 0x00, 0x00, 0x00,
        0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
        0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00};
    RecordHeader h;
    h.ingest_ts_ns = 1;
    h.type_id = 2;
    h.payload_len = 3;
    h.seq_no = 4;
    EXPECT_EQ(encode_header(h), expected);
}

TEST(RecordHeader, GoldenVectorAllFields) {
    const HeaderBytes expected = {
        0x4c, 0x47, 0x53, 0x31, 0x01, 0x00, 0x01, 0x00, 0x08, 0x07, 0x06, 0x05, 0x04, 0x03, 0x02, 0x01,
        0x07, 0x00, 0x00, 0x00, 0xef, 0xbe, 0xad, 0xde, 0x23, 0x01, 0x00, 0x00, 0x88, 0x77, 0x66, 0x55,
        0x44, 0x33, 0x22, 0x11, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xff, 0xff,
        0x0a, 0x00, 0x00, 0x01, 0x02, 0x02, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00};
    RecordHeader h;
    h.flags = kFlagReplayed;
    h.ingest_ts_ns = 0x0102030405060708ull;
    h.type_id = 7;
    h.source_id = 0xdeadbeef;
    h.payload_len = 291;
    h.seq_no = 0x1122334455667788ull;
    h.source_addr = *parse_address("10.0.0.1");
    h.source_port = 514;
    EXPECT_EQ(encode_header(h), expected);
    EXPECT_EQ(decode_header(as_span(expected)), h);
}

TEST(RecordHeader, RoundTripProperty) {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 10000; ++i) {
        const RecordHeader h = random_header(rng);
        const auto bytes = encode_header(h);
        ASSERT_EQ(decode_header(as_span(bytes)), h);
        for (std::size_t r = 54; r < 64; ++r) ASSERT_EQ(bytes[r], 0);
    }
}

TEST(RecordHeader, DecodeErrors) {
    RecordHeader h;
    auto bytes = encode_header(h);

    auto bad_magic = bytes;
    std::fill_n(bad_magic.begin(), 4, 'X');
    try {
        decode_header(as_span(bad_magic));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::BadMagic);
    }

    h.version = 9;
    const auto v9 = encode_header(h);
    try {
        decode_header(as_span(v9));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::UnsupportedVersion);
    }

    auto reserved = bytes;
    reserved[60] = 1;
    try {
        decode_header(as_span(reserved));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::NonzeroReserved);
    }
}

TEST(Framing, ConcatenationResplitsByPayloadLen) {
    std::mt19937_64 rng(7);
    for (int round = 0; round < 50; ++round) {
        std::vector<LogRecord> recs;
        std::vector<std::uint8_t> stream;
        const int n = static_cast<int>(rng() % 40);
        for (int i = 0; i < n; ++i) {
            LogRecord r;
            r.header = random_header(rng);
            r.payload.resize(rng() % 300);
            for (auto& c : r.payload) {
                c = static_cast<char>(rng() % 256);
                if (c == '\n') c = ' ';
            }
            r.header.payload_len = static_cast<std::uint32_t>(r.payload.size());
            append_framed(stream, r.header, r.payload);
            recs.push_back(std::move(r));
        }
        ASSERT_EQ(decode_all(stream), recs);
    }
}

TEST(Framing, CursorStopsAtPartialFrame) {
    std::vector<std::uint8_t> stream;
    append_framed(stream, RecordHeader{}, "hello");
    append_framed(stream, RecordHeader{}, "world");
    stream.pop_back();
    FrameCursor cursor(stream);
    auto first = cursor.next();
    ASSERT_TRUE(first);
    EXPECT_EQ(first->payload, "hello");
    EXPECT_EQ(first->header.payload_len, 5u);
    EXPECT_FALSE(cursor.next());
    EXPECT_EQ(cursor.remainder(), kHeaderSize + 4);
    EXPECT_THROW(decode_all(stream), Error);
}

TEST(Address, Ipv4MappedAndHash) {
    const auto a = parse_address("10.0.0.1");
    ASSERT_TRUE(a);
    EXPECT_EQ(format_address(*a), "10.0.0.1");
    EXPECT_EQ((*a)[10], 0xff);
    EXPECT_EQ(source_hash(*a, 514), source_hash(*a, 514));
    EXPECT_NE(source_hash(*a, 514), source_hash(*a, 515));
    EXPECT_FALSE(parse_address("not-an-ip"));
}

TEST(TypeRegistry, PortLookup) {
    TypeRegistry reg({TypeRule{PortMatch{5140}, 7, "syslog"}});
    EXPECT_EQ(classify_type(reg, 5140, "anything"), 7u);
    EXPECT_EQ(classify_type(reg, 5141, "anything"), 0u);
}

TEST(TypeRegistry, FirstMatchingRuleWins) {
    TypeRegistry reg({TypeRule{PrefixMatch{"apache:"}, 1, "apache"}, TypeRule{PortMatch{5141}, 2, "other"}});
    EXPECT_EQ(classify_type(reg, 5141, "apache:GET /"), 1u);
    EXPECT_EQ(classify_type(reg, 5141, "nginx:GET /"), 2u);
}

TEST(TypeRegistry, NoRulesIsUnclassified) {
    TypeRegistry reg;
    EXPECT_EQ(classify_type(reg, 1, "x"), kUnclassified);
}

TEST(TypeRegistry, RejectsDuplicatesAndReservedId) {
    EXPECT_THROW(TypeRegistry({TypeRule{PortMatch{1}, 0, "a"}}), Error);
    EXPECT_THROW(TypeRegistry({TypeRule{PortMatch{1}, 1, "a"}, TypeRule{PortMatch{2}, 1, "b"}}), Error);
    EXPECT_THROW(TypeRegistry({TypeRule{PortMatch{1}, 1, "a"}, TypeRule{PortMatch{2}, 2, "a"}}), Error);
}

TEST(TypeRegistry, FromJson) {
    const auto reg = TypeRegistry::from_json(nlohmann::json::parse(
        R"([{"prefix":"apache:","type_id":1,"name":"apache_access"},{"port":5140,"type_id":7,"name":"syslog"}])"));
    EXPECT_EQ(reg.id_of("apache_access"), 1u);
    EXPECT_EQ(reg.name_of(7), "syslog");
    EXPECT_EQ(reg.classify(5140, "x"), 7u);
    EXPECT_FALSE(reg.id_of("nope"));
}
