#pragma once

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace loginson::workbench {

/// (cumulative probability, line length in bytes)
using QuantilePoint = std::pair<double, double>;

/// Size anchors for the default profile: shortest and longest lines seen,
/// the median and the 99th percentile.
std::vector<QuantilePoint> default_quantiles();

struct LoadProfile {
    enum class Mode { Fixed, Empirical };

    Mode mode = Mode::Empirical;
    std::size_t fixed_size = 291;
    std::vector<QuantilePoint> quantiles = default_quantiles();
    /// Lines per second; 0 means as fast as possible.
    double rate = 0;
    std::uint64_t count = 0;
    double duration_s = 0;
    std::uint64_t seed = 1;

    /// Throws Error{InvalidModel} when the quantile list is unusable.
    void validate() const;

    /// Keys: mode ("fixed"|"empirical"), size, quantiles [[p, size], ...],
    /// rate, count, duration_s, seed.
    static LoadProfile from_json(const nlohmann::json& j);
};

/// Inverse-CDF draw with linear interpolation between quantile points.
std::size_t sample_log_size(const LoadProfile& profile, std::mt19937_64& rng);

/// Token appended to every generated line: " #" + 16 hex seq + ":" + 8 hex checksum.
inline constexpr std::size_t kTokenSize = 27;
inline constexpr std::size_t kMinLineSize = kTokenSize;

/// Deterministic Apache-style lines of an exact length carrying a sequence
/// number and a checksum of the rest of the line.
class LineGenerator {
public:
    explicit LineGenerator(LoadProfile profile);

    /// Next line (no newline). Length is exactly the sampled size.
    std::string next();
    /// Writes the next line into out (replacing its contents).
    void next_into(std::string& out);
    std::uint64_t produced() const noexcept { return seq_; }

private:
    LoadProfile profile_;
    std::mt19937_64 size_rng_;
    std::mt19937_64 body_rng_;
    std::uint64_t seq_ = 0;
};

/// Builds one line of exactly `size` bytes for sequence number seq.
void make_line(std::string& out, std::uint64_t seq, std::size_t size, std::mt19937_64& rng);

struct LineToken {
    std::uint64_t seq = 0;
    bool checksum_ok = false;
};
/// Parses the trailing token; nullopt when the line carries none.
std::optional<LineToken> parse_token(std::string_view line);

} // namespace loginson::workbench
