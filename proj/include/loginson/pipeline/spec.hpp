#pragma once

#include "json.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace loginson::pipeline {

struct ParseStage {
    /// Any of these characters separates fields.
    std::string delimiters = " ";
    /// Runs of delimiters count as one separator (awk's default field splitting).
    bool collapse = true;
    /// Positional names; an empty name discards that position.
    std::vector<std::string> field_names;
};

enum class CompareOp { Eq, Ne, Lt, Gt };

struct Predicate;
struct Compare {
    std::string field;
    CompareOp op = CompareOp::Eq;
    std::string literal;
};
struct AllOf {
    std::vector<Predicate> terms;
};
struct AnyOf {
    std::vector<Predicate> terms;
};
struct Predicate {
    std::variant<Compare, AllOf, AnyOf> node;
};

struct FilterStage {
    Predicate predicate;
};

enum class AggregateKind { Count, Sum, Mean, MovingAverage };

struct Aggregate {
    AggregateKind kind = AggregateKind::Count;
    std::string field;      // unused for Count
    std::size_t k = 1;      // MovingAverage only
    std::string output;     // output field name
};

struct WindowStage {
    std::uint64_t width_s = 60;
    std::vector<Aggregate> aggregates;
    std::optional<std::string> group_by;
};

struct SerializeStage {};

struct ExternalStage {
    std::string command;
};

using Stage = std::variant<ParseStage, FilterStage, WindowStage, SerializeStage, ExternalStage>;

/// Per-type stream-processing program.
///
/// Rules checked by validate(): at most one Window; the last stage is
/// Serialize or External; Serialize may only be followed by External; every
/// field referenced by Filter or Window is produced by an earlier Parse.
struct PipelineSpec {
    std::string type_name;
    std::uint32_t type_id = 0;
    std::string index_name;
    std::vector<Stage> stages;

    void validate() const;
    const ParseStage* parse_stage() const;
    const WindowStage* window_stage() const;

    /// {"type": "...", "index": "...", "stages": [{"parse": {...}}, {"filter": {...}},
    ///  {"window": {...}}, {"serialize": {}}, {"external": {"command": "..."}}]}
    static PipelineSpec from_json(const nlohmann::json& j);
};

/// Reads {"pipelines": [spec, ...]}; type ids are resolved later by the node.
std::vector<PipelineSpec> load_pipeline_specs(const nlohmann::json& doc);

Predicate predicate_from_json(const nlohmann::json& j);

} // namespace loginson::pipeline
