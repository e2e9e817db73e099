#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace icshunt {

/// IPv4 address in host byte order.
struct Ipv4Address {
    std::uint32_t value = 0;

    static std::optional<Ipv4Address> parse(std::string_view text);
    std::string to_string() const;

    auto operator<=>(const Ipv4Address&) const = default;
};

/// Wall-clock instant with microsecond resolution (capture files carry
/// seconds + microseconds; nanosecond captures are truncated).
struct Timestamp {
    std::int64_t micros = 0;

    static Timestamp from_parts(std::int64_t seconds, std::int64_t microseconds) {
        return Timestamp{seconds * 1'000'000 + microseconds};
    }
    static Timestamp from_seconds(double seconds) {
        return Timestamp{static_cast<std::int64_t>(seconds * 1e6 + (seconds >= 0 ? 0.5 : -0.5))};
    }

    std::int64_t seconds() const { return micros >= 0 ? micros / 1'000'000 : -((-micros + 999'999) / 1'000'000); }
    std::int64_t subsec_micros() const { return micros - seconds() * 1'000'000; }
    double as_seconds() const { return static_cast<double>(micros) / 1e6; }

    /// ISO-8601 UTC rendering, e.g. 2021-01-01T00:00:00.250000Z.
    std::string to_iso8601() const;

    auto operator<=>(const Timestamp&) const = default;
};

}  // namespace icshunt
