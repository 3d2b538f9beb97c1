#pragma once

#include "json.hpp"

#include <string>

namespace loginson {

/// Parses a JSON config file. Throws Error{InvalidConfig}.
nlohmann::json load_json_file(const std::string& path);

} // namespace loginson
