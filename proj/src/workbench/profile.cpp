#include "loginson/workbench/profile.hpp"

#include "loginson/error.hpp"
#include "loginson/workbench/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>

namespace loginson::workbench {

std::vector<QuantilePoint> default_quantiles() {
    return {{0.0, 33}, {0.5, 117}, {0.99, 291}, {1.0, 4176}};
}

void LoadProfile::validate() const {
    if (mode == Mode::Fixed) {
        if (fixed_size < kMinLineSize) {
            throw Error(Errc::InvalidModel, "fixed size must be at least " + std::to_string(kMinLineSize));
        }
    } else {
        if (quantiles.size() < 2) throw Error(Errc::InvalidModel, "empirical profile needs at least 2 quantile points");
        if (quantiles.front().first != 0.0 || quantiles.back().first != 1.0) {
            throw Error(Errc::InvalidModel, "quantile points must start at p=0 and end at p=1");
        }
        for (std::size_t i = 0; i < quantiles.size(); ++i) {
            if (quantiles[i].second < static_cast<double>(kMinLineSize)) {
                throw Error(Errc::InvalidModel, "quantile sizes must be at least " + std::to_string(kMinLineSize));
            }
            if (i > 0 && (quantiles[i].first <= quantiles[i - 1].first || quantiles[i].second < quantiles[i - 1].second)) {
                throw Error(Errc::InvalidModel, "quantile points must increase");
            }
        }
    }
    if (rate < 0) throw Error(Errc::InvalidModel, "rate must be >= 0");
}

LoadProfile LoadProfile::from_json(const nlohmann::json& j) {
    LoadProfile p;
    const std::string mode = j.value("mode", std::string("empirical"));
    if (mode == "fixed") {
        p.mode = Mode::Fixed;
    } else if (mode != "empirical") {
        throw Error(Errc::InvalidConfig, "unknown profile mode '" + mode + "'");
    }
    p.fixed_size = j.value("size", p.fixed_size);
    if (j.contains("quantiles")) {
        p.quantiles.clear();
        for (const auto& q : j.at("quantiles")) p.quantiles.emplace_back(q.at(0).get<double>(), q.at(1).get<double>());
    }
    p.rate = j.value("rate", p.rate);
    p.count = j.value("count", p.count);
    p.duration_s = j.value("duration_s", p.duration_s);
    p.seed = j.value("seed", p.seed);
    p.validate();
    return p;
}

std::size_t sample_log_size(const LoadProfile& profile, std::mt19937_64& rng) {
    if (profile.mode == LoadProfile::Mode::Fixed) return profile.fixed_size;
    const auto& q = profile.quantiles;
    // 53 random bits -> [0, 1)
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    auto it = std::upper_bound(q.begin(), q.end(), u, [](double v, const QuantilePoint& p) { return v < p.first; });
    if (it == q.end()) return static_cast<std::size_t>(std::llround(q.back().second));
    const QuantilePoint& hi = *it;
    const QuantilePoint& lo = *(it - 1);
    const double t = (u - lo.first) / (hi.first - lo.first);
    return static_cast<std::size_t>(std::llround(lo.second + t * (hi.second - lo.second)));
}

namespace {

constexpr char kHex[] = "0123456789abcdef";
constexpr const char* kMethods[] = {"GET", "GET", "GET", "POST", "PUT", "HEAD"};
constexpr const char* kStatus[] = {"200", "200", "200", "200", "304", "404", "500"};
constexpr char kPathChars[] = "abcdefghijklmnopqrstuvwxyz0123456789/-_.";

void put_hex(char* out, std::uint64_t v, int digits) noexcept {
    for (int i = digits - 1; i >= 0; --i) {
        out[i] = kHex[v & 0xF];
        v >>= 4;
    }
}

std::uint32_t checksum(std::string_view body, std::string_view seq_hex) noexcept {
    return static_cast<std::uint32_t>(hash_bytes(body, hash_bytes(seq_hex, 0x13198a2e03707344ull)));
}

/// Random path characters drawn once; each line copies from a random offset.
std::string_view path_pool() {
    static const std::string pool = [] {
        std::mt19937_64 rng(0x5eed);
        std::string p(1 << 16, ' ');
        for (auto& c : p) c = kPathChars[rng() % (sizeof(kPathChars) - 1)];
        return p;
    }();
    return pool;
}

char* put_dec(char* out, std::uint64_t v) noexcept { return std::to_chars(out, out + 20, v).ptr; }

char* put_str(char* out, std::string_view s) noexcept {
    std::memcpy(out, s.data(), s.size());
    return out + s.size();
}

} // namespace

void make_line(std::string& out, std::uint64_t seq, std::size_t size, std::mt19937_64& rng) {
    size = std::max(size, kMinLineSize);
    const std::size_t body_len = size - kTokenSize;
    out.clear();
    out.reserve(size);

    const std::uint64_t r = rng();
    char head_buf[96];
    char* h = head_buf;
    h = put_dec(h, 10 + (r & 0x7F));
    *h++ = '.';
    h = put_dec(h, (r >> 8) & 0xFF);
    *h++ = '.';
    h = put_dec(h, (r >> 16) & 0xFF);
    *h++ = '.';
    h = put_dec(h, (r >> 24) & 0xFF);
    h = put_str(h, " - - [07/Mar/2015:16:");
    h = put_dec(h, 10 + (r >> 32) % 50);
    h = put_str(h, ":0");
    h = put_dec(h, (r >> 40) % 10);
    h = put_str(h, " -0800] \"");
    h = put_str(h, kMethods[(r >> 44) % 6]);
    h = put_str(h, " /");
    const std::string_view head(head_buf, static_cast<std::size_t>(h - head_buf));
    char tail_buf[48];
    char* t = put_str(tail_buf, " HTTP/1.1\" ");
    t = put_str(t, kStatus[(r >> 48) % 7]);
    *t++ = ' ';
    t = put_dec(t, 100 + (r >> 51) % 20000);
    const std::string_view tail(tail_buf, static_cast<std::size_t>(t - tail_buf));

    if (head.size() + tail.size() <= body_len) {
        out += head;
        std::size_t path = body_len - head.size() - tail.size();
        const std::size_t start = out.size();
        out.resize(start + path);
        const std::string_view pool = path_pool();
        std::uint64_t bits = rng();
        char* dst = out.data() + start;
        while (path > 0) {
            const std::size_t n = std::min<std::size_t>(path, 64);
            std::memcpy(dst, pool.data() + bits % (pool.size() - 64), n);
            dst += n;
            path -= n;
            bits = bits * 0x9e3779b97f4a7c15ull + 1;
        }
        out += tail;
    } else {
        out.append(head, 0, std::min(head.size(), body_len));
        if (out.size() < body_len) out.append(tail, 0, body_len - out.size());
    }

    char token[kTokenSize];
    token[0] = ' ';
    token[1] = '#';
    put_hex(token + 2, seq, 16);
    token[18] = ':';
    put_hex(token + 19, checksum(out, std::string_view(token + 2, 16)), 8);
    out.append(token, kTokenSize);
}

LineGenerator::LineGenerator(LoadProfile profile)
    : profile_(std::move(profile)), size_rng_(profile_.seed), body_rng_(profile_.seed ^ 0x9E3779B97F4A7C15ull) {
    profile_.validate();
}

std::string LineGenerator::next() {
    std::string s;
    next_into(s);
    return s;
}

void LineGenerator::next_into(std::string& out) {
    make_line(out, seq_++, sample_log_size(profile_, size_rng_), body_rng_);
}

std::optional<LineToken> parse_token(std::string_view line) {
    if (line.size() < kTokenSize) return std::nullopt;
    const std::string_view tok = line.substr(line.size() - kTokenSize);
    if (tok[0] != ' ' || tok[1] != '#' || tok[18] != ':') return std::nullopt;
    LineToken t;
    std::uint32_t ck = 0;
    auto r1 = std::from_chars(tok.data() + 2, tok.data() + 18, t.seq, 16);
    auto r2 = std::from_chars(tok.data() + 19, tok.data() + 27, ck, 16);
    if (r1.ec != std::errc() || r1.ptr != tok.data() + 18 || r2.ec != std::errc() || r2.ptr != tok.data() + 27) {
        return std::nullopt;
    }
    t.checksum_ok = checksum(line.substr(0, line.size() - kTokenSize), tok.substr(2, 16)) == ck;
    return t;
}

} // namespace loginson::workbench
