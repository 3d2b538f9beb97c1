#pragma once

#include <cstdint>

namespace loginson::workbench {

struct CapacityModel {
    double records_per_s = 0;  // R
    double payload_bytes = 0;  // S
    double header_bytes = 64;  // H
    double drive_bytes_per_s = 0; // W_max
    double utilization_cap = 0.5; // U
};

/// ceil(R*(S+H) / (U*W_max)). Throws Error{InvalidModel}.
std::uint64_t plan_capacity(const CapacityModel& m);

} // namespace loginson::workbench
