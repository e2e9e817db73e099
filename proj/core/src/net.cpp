#include "icshunt/net.hpp"
#include "icshunt/error.hpp"

#include <charconv>
#include <cstdio>
#include <ctime>

namespace icshunt {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::parse: return "parse";
    case ErrorCode::structural: return "structural";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::insufficient_classes: return "insufficient_classes";
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::validation: return "validation";
    case ErrorCode::truncation: return "truncation";
    case ErrorCode::not_modbus: return "not_modbus";
    case ErrorCode::length: return "length";
    case ErrorCode::encoding: return "encoding";
    case ErrorCode::unsupported_format: return "unsupported_format";
    case ErrorCode::partial_read: return "partial_read";
    case ErrorCode::io: return "io";
    case ErrorCode::integrity: return "integrity";
    case ErrorCode::empty_observation: return "empty_observation";
    case ErrorCode::evaluation: return "evaluation";
    case ErrorCode::durable_write: return "durable_write";
    case ErrorCode::startup: return "startup";
    }
    return "unknown";
}

std::optional<Ipv4Address> Ipv4Address::parse(std::string_view text) {
    std::uint32_t value = 0;
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int octet = 0; octet < 4; ++octet) {
        if (octet > 0) {
            if (p == end || *p != '.') return std::nullopt;
            ++p;
        }
        unsigned part = 0;
        auto [next, ec] = std::from_chars(p, end, part);
        if (ec != std::errc{} || next == p || next - p > 3 || part > 255) return std::nullopt;
        value = (value << 8) | part;
        p = next;
    }
    if (p != end) return std::nullopt;
    return Ipv4Address{value};
}

std::string Ipv4Address::to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", (value >> 24) & 0xFFu, (value >> 16) & 0xFFu,
                  (value >> 8) & 0xFFu, value & 0xFFu);
    return buf;
}

std::string Timestamp::to_iso8601() const {
    std::time_t secs = static_cast<std::time_t>(seconds());
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06lldZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<long long>(subsec_micros()));
    return buf;
}

}  // namespace icshunt
