#include "loginson/workbench/capacity.hpp"

#include "loginson/error.hpp"

#include <cmath>

namespace loginson::workbench {

std::uint64_t plan_capacity(const CapacityModel& m) {
    if (!(m.records_per_s > 0) || !(m.payload_bytes > 0) || !(m.header_bytes >= 0) || !(m.drive_bytes_per_s > 0) ||
        !(m.utilization_cap > 0) || m.utilization_cap > 1) {
        throw Error(Errc::InvalidModel, "capacity model needs R, S, W_max > 0, H >= 0 and U in (0, 1]");
    }
    const double need = m.records_per_s * (m.payload_bytes + m.header_bytes);
    const double per_drive = m.utilization_cap * m.drive_bytes_per_s;
    const double q = need / per_drive;
    // Snap ratios that are integral up to rounding noise, e.g. U = 0.1.
    const double nearest = std::round(q);
    if (nearest >= 1 && std::abs(q - nearest) <= 1e-12 * nearest) return static_cast<std::uint64_t>(nearest);
    return static_cast<std::uint64_t>(std::ceil(q));
}

} // namespace loginson::workbench
