#pragma once

#include "icshunt/error.hpp"
#include "icshunt/modbus_codec.hpp"
#include "icshunt/net.hpp"

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace icshunt {

inline const std::set<std::uint16_t> default_modbus_ports{502, 5300};

struct PacketRecord {
    Timestamp timestamp;
    Ipv4Address src_ip;
    Ipv4Address dst_ip;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    std::vector<std::uint8_t> tcp_payload;

    bool operator==(const PacketRecord&) const = default;
};

enum class SourceKind { file, live };

struct CaptureSource {
    SourceKind kind = SourceKind::file;
    std::string locator;  // file path or interface name
    std::set<std::uint16_t> port_filter = default_modbus_ports;
};

struct CaptureStats {
    std::size_t packets_read = 0;
    std::size_t yielded = 0;
    std::size_t skipped_ipv6 = 0;
    std::size_t skipped_non_ip = 0;
    std::size_t skipped_non_tcp = 0;
    std::size_t skipped_port = 0;
    std::size_t skipped_empty = 0;
    std::size_t skipped_malformed = 0;
};

/// Raised when a capture ends in the middle of a packet record. The records
/// decoded before the damaged one are kept.
class PartialReadError : public Error {
public:
    PartialReadError(const std::string& message, std::vector<PacketRecord> records)
        : Error(ErrorCode::partial_read, message), records_(std::move(records)) {}
    const std::vector<PacketRecord>& records() const noexcept { return records_; }

private:
    std::vector<PacketRecord> records_;
};

/// Parses an in-memory classic capture (Ethernet link type; both byte orders,
/// microsecond and nanosecond variants) and returns the TCP packets with a
/// non-empty payload whose source or destination port is in `port_filter`.
std::vector<PacketRecord> parse_capture(std::span<const std::uint8_t> bytes, const std::set<std::uint16_t>& port_filter,
                                        CaptureStats* stats = nullptr);

/// Throws Error{unsupported_format} on a bad magic number and
/// PartialReadError on a truncated packet record. Live sources are not
/// supported by this build and raise unsupported_format.
std::vector<PacketRecord> read_capture(const CaptureSource& source, CaptureStats* stats = nullptr);

/// Request when the destination port is a Modbus server port, response when
/// the source port is, unknown otherwise.
modbus::Direction infer_direction(const PacketRecord& record, const std::set<std::uint16_t>& server_ports);

/// Decodes the Modbus frames carried by one record. Never throws: payloads
/// that are not Modbus yield an empty list and a debug diagnostic.
std::vector<modbus::Frame> extract_modbus(const PacketRecord& record,
                                          const std::set<std::uint16_t>& server_ports = default_modbus_ports);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace icshunt
