#pragma once

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace loginson {

inline constexpr std::uint32_t kUnclassified = 0;

struct PortMatch {
    std::uint16_t port = 0;
};

struct PrefixMatch {
    std::string prefix;
};

struct TypeRule {
    std::variant<PortMatch, PrefixMatch> match;
    std::uint32_t type_id = 0;
    std::string type_name;
};

/// Ordered list of classification rules; the first matching rule wins and
/// unmatched records get type 0 ("unclassified"). Immutable once built.
class TypeRegistry {
public:
    TypeRegistry() = default;
    /// Throws Error{InvalidConfig} on duplicate ids/names or use of id 0.
    explicit TypeRegistry(std::vector<TypeRule> rules);

    std::uint32_t classify(std::uint16_t listener_port, std::string_view payload) const noexcept;

    std::optional<std::uint32_t> id_of(std::string_view name) const;
    std::optional<std::string> name_of(std::uint32_t type_id) const;

    const std::vector<TypeRule>& rules() const noexcept { return rules_; }

    /// Reads `[{"port": 5140, "type_id": 7, "name": "syslog"},
    ///         {"prefix": "apache:", "type_id": 1, "name": "apache"}]`.
    static TypeRegistry from_json(const nlohmann::json& rules);

private:
    std::vector<TypeRule> rules_;
};

inline std::uint32_t classify_type(const TypeRegistry& registry, std::uint16_t listener_port,
                                   std::string_view payload) noexcept {
    return registry.classify(listener_port, payload);
}

} // namespace loginson
