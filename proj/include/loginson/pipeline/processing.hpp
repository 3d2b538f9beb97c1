#pragma once

#include "loginson/pipeline/spec.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace loginson::pipeline {

/// Parsed fields: positional values bound to the Parse stage's names.
/// Values view into the payload they were parsed from.
struct Fields {
    const std::vector<std::string>* names = nullptr;
    std::vector<std::string_view> values;

    std::optional<std::string_view> get(std::string_view name) const;
};

Fields parse_line(const ParseStage& spec, std::string_view payload);

/// Strict decimal/float parse of the whole string (surrounding blanks
/// rejected). Used for numeric comparison and aggregation.
std::optional<double> parse_number(std::string_view text);

/// When the literal is numeric, the field must be numeric too and is compared
/// numerically; a non-numeric field then makes the comparison false whatever
/// the operator. Otherwise both sides compare as byte strings.
bool apply_filter(const Predicate& predicate, const Fields& fields);

using Value = std::variant<std::string, double>;

struct SummaryRecord {
    std::string index_name;
    std::uint64_t ts_ns = 0;
    std::vector<std::pair<std::string, Value>> fields;
};

/// ISO-8601 UTC with nanoseconds, e.g. 1970-01-01T00:00:00.000000000Z.
std::string format_timestamp(std::uint64_t ts_ns);
/// Inverse of format_timestamp; also accepts fewer fractional digits or none.
std::optional<std::uint64_t> parse_timestamp(std::string_view text);

/// One JSON object per line (no trailing newline) with "@ts" and "@index"
/// first, then the fields in order.
std::string serialize_record(const SummaryRecord& rec);
std::string serialize_fields(std::string_view index, std::uint64_t ts_ns, const Fields& fields);
void append_json_string(std::string& out, std::string_view s);
void append_json_number(std::string& out, double v);

/// Tumbling, epoch-aligned windows of width_s seconds. One window is open at
/// a time; a record whose window starts later closes it. Records belonging to
/// an already closed window are dropped and counted as late.
class WindowState {
public:
    WindowState(const WindowStage& spec, std::string index_name);

    struct UpdateResult {
        std::vector<SummaryRecord> emitted;
        bool late = false;
    };

    UpdateResult update(const Fields& fields, std::uint64_t ts_ns);
    /// Force-closes the open window (shutdown, end of replay, idle timer).
    std::vector<SummaryRecord> emit();
    /// Closes the open window if now_ns is past its end.
    std::vector<SummaryRecord> advance_to(std::uint64_t now_ns);

    std::uint64_t late_records() const noexcept { return late_; }
    std::optional<std::uint64_t> open_window_start() const noexcept { return open_start_; }
    std::uint64_t width_ns() const noexcept { return width_ns_; }

private:
    struct Accumulator {
        std::uint64_t count = 0;
        std::vector<double> sums;    // per aggregate field slot
        std::vector<std::uint64_t> numeric; // values that parsed, per slot
    };
    struct GroupHistory {
        std::vector<std::deque<double>> means; // per moving-average aggregate
    };

    std::vector<SummaryRecord> close_open();

    WindowStage spec_;
    std::string index_;
    std::uint64_t width_ns_;
    std::optional<std::uint64_t> open_start_;
    std::uint64_t closed_before_ = 0; // records with window start below this are late
    std::map<std::string, Accumulator> groups_;
    std::map<std::string, GroupHistory> history_;
    std::uint64_t late_ = 0;
};

} // namespace loginson::pipeline
