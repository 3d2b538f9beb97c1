#include "loginson/pipeline/spec.hpp"

#include "loginson/error.hpp"

#include <set>

namespace loginson::pipeline {

namespace {

CompareOp op_from_string(const std::string& s) {
    if (s == "==" || s == "=") return CompareOp::Eq;
    if (s == "!=" || s == "<>") return CompareOp::Ne;
    if (s == "<") return CompareOp::Lt;
    if (s == ">") return CompareOp::Gt;
    throw Error(Errc::InvalidConfig, "unknown comparison operator '" + s + "'");
}

void collect_fields(const Predicate& p, std::vector<std::string>& out) {
    std::visit(
        [&](const auto& node) {
            using T = std::decay_t<decltype(node)>;
            if constexpr (std::is_same_v<T, Compare>) {
                out.push_back(node.field);
            } else {
                for (const auto& t : node.terms) collect_fields(t, out);
            }
        },
        p.node);
}

Aggregate aggregate_from_json(const nlohmann::json& j) {
    Aggregate a;
    const std::string op = j.at("op").get<std::string>();
    if (op == "count") {
        a.kind = AggregateKind::Count;
        a.output = "count";
    } else {
        a.field = j.at("field").get<std::string>();
        if (op == "sum") {
            a.kind = AggregateKind::Sum;
            a.output = "sum_" + a.field;
        } else if (op == "mean") {
            a.kind = AggregateKind::Mean;
            a.output = "mean_" + a.field;
        } else if (op == "moving_average") {
            a.kind = AggregateKind::MovingAverage;
            a.k = j.at("k").get<std::size_t>();
            if (a.k == 0) throw Error(Errc::InvalidConfig, "moving_average k must be >= 1");
            a.output = "moving_average_" + a.field;
        } else {
            throw Error(Errc::InvalidConfig, "unknown aggregate '" + op + "'");
        }
    }
    a.output = j.value("as", a.output);
    return a;
}

} // namespace

Predicate predicate_from_json(const nlohmann::json& j) {
    if (j.contains("and")) {
        AllOf all;
        for (const auto& t : j.at("and")) all.terms.push_back(predicate_from_json(t));
        return Predicate{std::move(all)};
    }
    if (j.contains("or")) {
        AnyOf any;
        for (const auto& t : j.at("or")) any.terms.push_back(predicate_from_json(t));
        return Predicate{std::move(any)};
    }
    Compare c;
    c.field = j.at("field").get<std::string>();
    c.op = op_from_string(j.at("op").get<std::string>());
    const auto& v = j.at("value");
    c.literal = v.is_string() ? v.get<std::string>() : v.dump();
    return Predicate{std::move(c)};
}

const ParseStage* PipelineSpec::parse_stage() const {
    for (const auto& s : stages) {
        if (const auto* p = std::get_if<ParseStage>(&s)) return p;
    }
    return nullptr;
}

const WindowStage* PipelineSpec::window_stage() const {
    for (const auto& s : stages) {
        if (const auto* w = std::get_if<WindowStage>(&s)) return w;
    }
    return nullptr;
}

void PipelineSpec::validate() const {
    const std::string who = "pipeline '" + type_name + "': ";
    if (index_name.empty()) throw Error(Errc::InvalidConfig, who + "index name required");
    if (stages.empty()) throw Error(Errc::InvalidConfig, who + "no stages");
    std::set<std::string> defined;
    int windows = 0;
    bool serialized = false;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const Stage& s = stages[i];
        const bool last = i + 1 == stages.size();
        if (windows > 0 && (std::holds_alternative<ParseStage>(s) || std::holds_alternative<FilterStage>(s))) {
            throw Error(Errc::InvalidConfig, who + "parse and filter must come before the window");
        }
        if (serialized && !std::holds_alternative<ExternalStage>(s)) {
            throw Error(Errc::InvalidConfig, who + "only an external stage may follow serialize");
        }
        if (const auto* p = std::get_if<ParseStage>(&s)) {
            if (p->delimiters.empty()) throw Error(Errc::InvalidConfig, who + "parse needs delimiters");
            for (const auto& n : p->field_names) {
                if (!n.empty()) defined.insert(n);
            }
        } else if (const auto* f = std::get_if<FilterStage>(&s)) {
            std::vector<std::string> refs;
            collect_fields(f->predicate, refs);
            for (const auto& r : refs) {
                if (!defined.count(r)) throw Error(Errc::InvalidConfig, who + "filter uses undefined field '" + r + "'");
            }
        } else if (const auto* w = std::get_if<WindowStage>(&s)) {
            if (++windows > 1) throw Error(Errc::InvalidConfig, who + "at most one window stage");
            if (w->width_s == 0) throw Error(Errc::InvalidConfig, who + "window width must be positive");
            if (w->aggregates.empty()) throw Error(Errc::InvalidConfig, who + "window needs aggregates");
            for (const auto& a : w->aggregates) {
                if (a.kind != AggregateKind::Count && !defined.count(a.field)) {
                    throw Error(Errc::InvalidConfig, who + "aggregate uses undefined field '" + a.field + "'");
                }
            }
            if (w->group_by && !defined.count(*w->group_by)) {
                throw Error(Errc::InvalidConfig, who + "group_by uses undefined field '" + *w->group_by + "'");
            }
        } else if (std::holds_alternative<SerializeStage>(s)) {
            serialized = true;
        } else if (const auto* e = std::get_if<ExternalStage>(&s)) {
            if (e->command.empty()) throw Error(Errc::InvalidConfig, who + "external stage needs a command");
            if (!last) throw Error(Errc::InvalidConfig, who + "external stage must be last");
        }
        if (last && !std::holds_alternative<SerializeStage>(s) && !std::holds_alternative<ExternalStage>(s)) {
            throw Error(Errc::InvalidConfig, who + "last stage must be serialize or external");
        }
    }
}

PipelineSpec PipelineSpec::from_json(const nlohmann::json& j) {
    PipelineSpec spec;
    spec.type_name = j.at("type").get<std::string>();
    spec.index_name = j.value("index", spec.type_name);
    for (const auto& sj : j.at("stages")) {
        if (sj.contains("parse")) {
            const auto& p = sj.at("parse");
            ParseStage ps;
            ps.delimiters = p.value("delimiters", ps.delimiters);
            ps.collapse = p.value("collapse", ps.collapse);
            ps.field_names = p.at("fields").get<std::vector<std::string>>();
            spec.stages.emplace_back(std::move(ps));
        } else if (sj.contains("filter")) {
            spec.stages.emplace_back(FilterStage{predicate_from_json(sj.at("filter"))});
        } else if (sj.contains("window")) {
            const auto& w = sj.at("window");
            WindowStage ws;
            ws.width_s = w.at("width_s").get<std::uint64_t>();
            for (const auto& a : w.at("aggregates")) ws.aggregates.push_back(aggregate_from_json(a));
            if (w.contains("group_by")) ws.group_by = w.at("group_by").get<std::string>();
            spec.stages.emplace_back(std::move(ws));
        } else if (sj.contains("serialize")) {
            spec.stages.emplace_back(SerializeStage{});
        } else if (sj.contains("external")) {
            spec.stages.emplace_back(ExternalStage{sj.at("external").at("command").get<std::string>()});
        } else {
            throw Error(Errc::InvalidConfig, "unknown stage " + sj.dump());
        }
    }
    spec.validate();
    return spec;
}

std::vector<PipelineSpec> load_pipeline_specs(const nlohmann::json& doc) {
    std::vector<PipelineSpec> out;
    std::set<std::string> seen;
    for (const auto& j : doc.value("pipelines", nlohmann::json::array())) {
        out.push_back(PipelineSpec::from_json(j));
        if (!seen.insert(out.back().type_name).second) {
            throw Error(Errc::InvalidConfig, "duplicate pipeline for type '" + out.back().type_name + "'");
        }
    }
    return out;
}

} // namespace loginson::pipeline
