#include "loginson/pipeline/processing.hpp"

#include <charconv>
#include <cmath>
#include <cstring>

namespace loginson::pipeline {

std::optional<std::string_view> Fields::get(std::string_view name) const {
    if (!names) return std::nullopt;
    for (std::size_t i = 0; i < names->size() && i < values.size(); ++i) {
        if ((*names)[i] == name) return values[i];
    }
    return std::nullopt;
}

Fields parse_line(const ParseStage& spec, std::string_view payload) {
    Fields f;
    f.names = &spec.field_names;
    f.values.reserve(spec.field_names.size());
    const auto is_delim = [&](char c) { return spec.delimiters.find(c) != std::string::npos; };
    std::size_t pos = 0;
    const std::size_t n = payload.size();
    if (spec.collapse) {
        while (f.values.size() < spec.field_names.size()) {
            while (pos < n && is_delim(payload[pos])) ++pos;
            if (pos >= n) break;
            const std::size_t start = pos;
            while (pos < n && !is_delim(payload[pos])) ++pos;
            f.values.push_back(payload.substr(start, pos - start));
        }
    } else if (n > 0) {
        while (f.values.size() < spec.field_names.size()) {
            std::size_t end = pos;
            while (end < n && !is_delim(payload[end])) ++end;
            f.values.push_back(payload.substr(pos, end - pos));
            if (end >= n) break;
            pos = end + 1;
        }
    }
    // Missing trailing fields bind to empty.
    f.values.resize(spec.field_names.size());
    return f;
}

std::optional<double> parse_number(std::string_view text) {
    if (text.empty()) return std::nullopt;
    const char c0 = text.front();
    if (!(c0 == '-' || c0 == '.' || (c0 >= '0' && c0 <= '9'))) return std::nullopt;
    if (c0 == '-' && (text.size() == 1 || !(text[1] == '.' || (text[1] >= '0' && text[1] <= '9')))) {
        return std::nullopt;
    }
    double v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
    return v;
}

namespace {

bool compare(const Compare& c, const Fields& fields) {
    const auto value = fields.get(c.field);
    if (!value) return false;
    if (const auto lit = parse_number(c.literal)) {
        const auto num = parse_number(*value);
        if (!num) return false;
        switch (c.op) {
        case CompareOp::Eq: return *num == *lit;
        case CompareOp::Ne: return *num != *lit;
        case CompareOp::Lt: return *num < *lit;
        case CompareOp::Gt: return *num > *lit;
        }
        return false;
    }
    const int cmp = value->compare(c.literal);
    switch (c.op) {
    case CompareOp::Eq: return cmp == 0;
    case CompareOp::Ne: return cmp != 0;
    case CompareOp::Lt: return cmp < 0;
    case CompareOp::Gt: return cmp > 0;
    }
    return false;
}

} // namespace

bool apply_filter(const Predicate& predicate, const Fields& fields) {
    return std::visit(
        [&](const auto& node) -> bool {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, Compare>) {
                return compare(node, fields);
            } else if constexpr (std::is_same_v<T, AllOf>) {
                for (const auto& t : node.terms) {
                    if (!apply_filter(t, fields)) return false;
                }
                return true;
            } else {
                for (const auto& t : node.terms) {
                    if (apply_filter(t, fields)) return true;
                }
                return false;
            }
        },
        predicate.node);
}

namespace {

// Howard Hinnant's days_from_civil / civil_from_days.
struct Civil {
    std::int64_t y;
    unsigned m;
    unsigned d;
};

Civil civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return {y + (m <= 2), m, d};
}

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void put_digits(char* out, std::uint64_t v, int width) {
    for (int i = width - 1; i >= 0; --i) {
        out[i] = static_cast<char>('0' + v % 10);
        v /= 10;
    }
}

} // namespace

std::string format_timestamp(std::uint64_t ts_ns) {
    const std::uint64_t secs = ts_ns / 1'000'000'000ull;
    const std::uint64_t frac = ts_ns % 1'000'000'000ull;
    const auto days = static_cast<std::int64_t>(secs / 86400);
    const std::uint64_t sod = secs % 86400;
    const Civil c = civil_from_days(days);
    // YYYY-MM-DDTHH:MM:SS.nnnnnnnnnZ
    std::string out(30, '0');
    char* p = out.data();
    put_digits(p, static_cast<std::uint64_t>(c.y), 4);
    p[4] = '-';
    put_digits(p + 5, c.m, 2);
    p[7] = '-';
    put_digits(p + 8, c.d, 2);
    p[10] = 'T';
    put_digits(p + 11, sod / 3600, 2);
    p[13] = ':';
    put_digits(p + 14, (sod / 60) % 60, 2);
    p[16] = ':';
    put_digits(p + 17, sod % 60, 2);
    p[19] = '.';
    put_digits(p + 20, frac, 9);
    p[29] = 'Z';
    return out;
}

std::optional<std::uint64_t> parse_timestamp(std::string_view t) {
    auto num = [&](std::size_t at, std::size_t len) -> std::optional<unsigned> {
        if (at + len > t.size()) return std::nullopt;
        unsigned v = 0;
        for (std::size_t i = at; i < at + len; ++i) {
            if (t[i] < '0' || t[i] > '9') return std::nullopt;
            v = v * 10 + static_cast<unsigned>(t[i] - '0');
        }
        return v;
    };
    if (t.size() < 20 || t[4] != '-' || t[7] != '-' || t[10] != 'T' || t[13] != ':' || t[16] != ':' ||
        t.back() != 'Z') {
        return std::nullopt;
    }
    const auto y = num(0, 4), mo = num(5, 2), d = num(8, 2), h = num(11, 2), mi = num(14, 2), s = num(17, 2);
    if (!y || !mo || !d || !h || !mi || !s || *mo < 1 || *mo > 12 || *d < 1 || *d > 31 || *h > 23 || *mi > 59 ||
        *s > 60) {
        return std::nullopt;
    }
    std::uint64_t frac = 0;
    const std::size_t body_end = t.size() - 1;
    if (body_end > 19) {
        if (t[19] != '.') return std::nullopt;
        const std::size_t digits = body_end - 20;
        if (digits == 0 || digits > 9) return std::nullopt;
        const auto f = num(20, digits);
        if (!f) return std::nullopt;
        frac = *f;
        for (std::size_t i = digits; i < 9; ++i) frac *= 10;
    }
    const std::int64_t days = days_from_civil(*y, *mo, *d);
    if (days < 0) return std::nullopt;
    const std::uint64_t secs = static_cast<std::uint64_t>(days) * 86400 + *h * 3600ull + *mi * 60ull + *s;
    return secs * 1'000'000'000ull + frac;
}

void append_json_string(std::string& out, std::string_view s) {
    static constexpr char kHex[] = "0123456789abcdef";
    out.push_back('"');
    const auto* p = reinterpret_cast<const unsigned char*>(s.data());
    const std::size_t n = s.size();
    std::size_t i = 0;
    while (i < n) {
        const unsigned char c = p[i];
        if (c >= 0x20 && c != '"' && c != '\\' && c < 0x80) {
            // Copy the longest run of plain ASCII in one go.
            std::size_t j = i + 1;
            while (j < n && p[j] >= 0x20 && p[j] != '"' && p[j] != '\\' && p[j] < 0x80) ++j;
            out.append(s.data() + i, j - i);
            i = j;
            continue;
        }
        if (c < 0x80) {
            switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\b': out += "\\b"; break;
            case '\f': out += "\\f"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                out += "\\u00";
                out.push_back(kHex[c >> 4]);
                out.push_back(kHex[c & 0xf]);
            }
            ++i;
            continue;
        }
        // Validate one UTF-8 sequence; invalid bytes become U+FFFD.
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        }
        bool ok = len > 0 && i + len <= n;
        for (std::size_t k = 1; ok && k < len; ++k) {
            if ((p[i + k] & 0xC0) != 0x80) ok = false;
            cp = (cp << 6) | (p[i + k] & 0x3F);
        }
        if (ok) {
            ok = (len == 2 && cp >= 0x80) || (len == 3 && cp >= 0x800 && (cp < 0xD800 || cp > 0xDFFF)) ||
                 (len == 4 && cp >= 0x10000 && cp <= 0x10FFFF);
        }
        if (ok) {
            out.append(s.data() + i, len);
            i += len;
        } else {
            out += "\\ufffd";
            ++i;
        }
    }
    out.push_back('"');
}

void append_json_number(std::string& out, double v) {
    if (!std::isfinite(v)) {
        out += "null";
        return;
    }
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

namespace {

void append_envelope(std::string& out, std::string_view index, std::uint64_t ts_ns) {
    out += "{\"@ts\":\"";
    out += format_timestamp(ts_ns);
    out += "\",\"@index\":";
    append_json_string(out, index);
}

} // namespace

std::string serialize_record(const SummaryRecord& rec) {
    std::string out;
    out.reserve(64 + rec.fields.size() * 24);
    append_envelope(out, rec.index_name, rec.ts_ns);
    for (const auto& [name, value] : rec.fields) {
        out.push_back(',');
        append_json_string(out, name);
        out.push_back(':');
        if (const auto* s = std::get_if<std::string>(&value)) {
            append_json_string(out, *s);
        } else {
            append_json_number(out, std::get<double>(value));
        }
    }
    out.push_back('}');
    return out;
}

std::string serialize_fields(std::string_view index, std::uint64_t ts_ns, const Fields& fields) {
    std::string out;
    out.reserve(64 + fields.values.size() * 24);
    append_envelope(out, index, ts_ns);
    if (fields.names) {
        for (std::size_t i = 0; i < fields.names->size() && i < fields.values.size(); ++i) {
            const std::string& name = (*fields.names)[i];
            if (name.empty()) continue;
            out.push_back(',');
            append_json_string(out, name);
            out.push_back(':');
            append_json_string(out, fields.values[i]);
        }
    }
    out.push_back('}');
    return out;
}

WindowState::WindowState(const WindowStage& spec, std::string index_name)
    : spec_(spec), index_(std::move(index_name)), width_ns_(spec.width_s * 1'000'000'000ull) {}

WindowState::UpdateResult WindowState::update(const Fields& fields, std::uint64_t ts_ns) {
    UpdateResult r;
    const std::uint64_t start = ts_ns - ts_ns % width_ns_;
    if (start < closed_before_ || (open_start_ && start < *open_start_)) {
        ++late_;
        r.late = true;
        return r;
    }
    if (open_start_ && start > *open_start_) r.emitted = close_open();
    open_start_ = start;

    std::string group;
    if (spec_.group_by) group = std::string(fields.get(*spec_.group_by).value_or(""));
    Accumulator& acc = groups_[group];
    if (acc.sums.empty()) {
        acc.sums.assign(spec_.aggregates.size(), 0.0);
        acc.numeric.assign(spec_.aggregates.size(), 0);
    }
    ++acc.count;
    for (std::size_t i = 0; i < spec_.aggregates.size(); ++i) {
        const Aggregate& a = spec_.aggregates[i];
        if (a.kind == AggregateKind::Count) continue;
        const auto raw = fields.get(a.field);
        if (!raw) continue;
        if (const auto v = parse_number(*raw)) {
            acc.sums[i] += *v;
            ++acc.numeric[i];
        }
    }
    return r;
}

std::vector<SummaryRecord> WindowState::close_open() {
    std::vector<SummaryRecord> out;
    if (!open_start_) return out;
    const std::uint64_t end = *open_start_ + width_ns_;
    for (const auto& [group, acc] : groups_) {
        SummaryRecord rec;
        rec.index_name = index_;
        rec.ts_ns = end;
        if (spec_.group_by) rec.fields.emplace_back(*spec_.group_by, group);
        GroupHistory& hist = history_[group];
        hist.means.resize(spec_.aggregates.size());
        for (std::size_t i = 0; i < spec_.aggregates.size(); ++i) {
            const Aggregate& a = spec_.aggregates[i];
            switch (a.kind) {
            case AggregateKind::Count:
                rec.fields.emplace_back(a.output, static_cast<double>(acc.count));
                break;
            case AggregateKind::Sum:
                rec.fields.emplace_back(a.output, acc.sums[i]);
                break;
            case AggregateKind::Mean:
                if (acc.numeric[i] > 0) {
                    rec.fields.emplace_back(a.output, acc.sums[i] / static_cast<double>(acc.numeric[i]));
                }
                break;
            case AggregateKind::MovingAverage:
                if (acc.numeric[i] > 0) {
                    auto& ring = hist.means[i];
                    ring.push_back(acc.sums[i] / static_cast<double>(acc.numeric[i]));
                    while (ring.size() > a.k) ring.pop_front();
                    double total = 0;
                    for (double m : ring) total += m;
                    rec.fields.emplace_back(a.output, total / static_cast<double>(ring.size()));
                }
                break;
            }
        }
        out.push_back(std::move(rec));
    }
    groups_.clear();
    closed_before_ = end;
    open_start_.reset();
    return out;
}

std::vector<SummaryRecord> WindowState::emit() { return close_open(); }

std::vector<SummaryRecord> WindowState::advance_to(std::uint64_t now_ns) {
    if (open_start_ && now_ns >= *open_start_ + width_ns_) return close_open();
    return {};
}

} // namespace loginson::pipeline
