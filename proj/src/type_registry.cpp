#include "loginson/type_registry.hpp"

#include "loginson/error.hpp"

#include <algorithm>
#include <set>

namespace loginson {

TypeRegistry::TypeRegistry(std::vector<TypeRule> rules) : rules_(std::move(rules)) {
    std::set<std::uint32_t> ids;
    std::set<std::string> names;
    for (const auto& r : rules_) {
        if (r.type_id == kUnclassified) {
            throw Error(Errc::InvalidConfig, "type_id 0 is reserved for unclassified records");
        }
        if (r.type_name.empty() || r.type_name == "unclassified" || r.type_name == "*") {
            throw Error(Errc::InvalidConfig, "invalid type name '" + r.type_name + "'");
        }
        if (!ids.insert(r.type_id).second) {
            throw Error(Errc::InvalidConfig, "duplicate type_id " + std::to_string(r.type_id));
        }
        if (!names.insert(r.type_name).second) {
            throw Error(Errc::InvalidConfig, "duplicate type name '" + r.type_name + "'");
        }
    }
}

std::uint32_t TypeRegistry::classify(std::uint16_t listener_port, std::string_view payload) const noexcept {
    for (const auto& r : rules_) {
        if (const auto* pm = std::get_if<PortMatch>(&r.match)) {
            if (pm->port == listener_port) return r.type_id;
        } else if (payload.starts_with(std::get<PrefixMatch>(r.match).prefix)) {
            return r.type_id;
        }
    }
    return kUnclassified;
}

std::optional<std::uint32_t> TypeRegistry::id_of(std::string_view name) const {
    if (name == "unclassified") return kUnclassified;
    for (const auto& r : rules_) {
        if (r.type_name == name) return r.type_id;
    }
    return std::nullopt;
}

std::optional<std::string> TypeRegistry::name_of(std::uint32_t type_id) const {
    if (type_id == kUnclassified) return std::string("unclassified");
    for (const auto& r : rules_) {
        if (r.type_id == type_id) return r.type_name;
    }
    return std::nullopt;
}

TypeRegistry TypeRegistry::from_json(const nlohmann::json& rules) {
    std::vector<TypeRule> out;
    if (rules.is_null()) return TypeRegistry{};
    if (!rules.is_array()) {
        throw Error(Errc::InvalidConfig, "type_rules must be an array");
    }
    for (const auto& j : rules) {
        TypeRule r;
        r.type_id = j.at("type_id").get<std::uint32_t>();
        r.type_name = j.at("name").get<std::string>();
        if (j.contains("port")) {
            r.match = PortMatch{j.at("port").get<std::uint16_t>()};
        } else if (j.contains("prefix")) {
            r.match = PrefixMatch{j.at("prefix").get<std::string>()};
        } else {
            throw Error(Errc::InvalidConfig, "type rule '" + r.type_name + "' needs port or prefix");
        }
        out.push_back(std::move(r));
    }
    return TypeRegistry(std::move(out));
}

} // namespace loginson
