#include "loginson/config.hpp"

#include "loginson/error.hpp"

#include <fstream>

namespace loginson {

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::InvalidConfig, "cannot open " + path);
    try {
        return nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidConfig, path + ": " + e.what());
    }
}

} // namespace loginson
