#include "loginson/workbench/manifest.hpp"

#include <cstdio>

namespace loginson::workbench {

std::uint64_t line_hash(std::string_view line) noexcept {
    return hash_bytes(line, 0x243f6a8885a308d3ull);
}

std::string Manifest::to_string() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%llu:%016llx:%016llx", static_cast<unsigned long long>(count),
                  static_cast<unsigned long long>(sum), static_cast<unsigned long long>(xor_));
    return buf;
}

} // namespace loginson::workbench
