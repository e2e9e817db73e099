#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace icshunt::detail {

// FNV-1a; used for stable, content-derived identifiers.
class Fnv1a {
public:
    Fnv1a& add(std::string_view bytes) {
        for (unsigned char c : bytes) {
            hash_ ^= c;
            hash_ *= 0x100000001b3ULL;
        }
        hash_ ^= 0xFF;  // field separator
        hash_ *= 0x100000001b3ULL;
        return *this;
    }
    Fnv1a& add(std::uint64_t value) { return add(std::to_string(value)); }
    Fnv1a& add(std::int64_t value) { return add(std::to_string(value)); }

    std::uint64_t value() const noexcept { return hash_; }
    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_));
        return buf;
    }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace icshunt::detail
