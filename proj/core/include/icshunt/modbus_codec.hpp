#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace icshunt::modbus {

enum class Direction { request, response, unknown };

struct MbapHeader {
    std::uint16_t transaction_id = 0;
    std::uint16_t protocol_id = 0;
    std::uint16_t length = 0;  // unit id + PDU byte count
    std::uint8_t unit_id = 0;
    bool operator==(const MbapHeader&) const = default;
};

inline constexpr std::size_t mbap_size = 7;
inline constexpr std::uint16_t coil_on = 0xFF00;
inline constexpr std::uint16_t coil_off = 0x0000;
inline constexpr std::uint8_t mei_read_device_id = 0x0E;

struct ReadCoils {
    std::uint16_t start = 0;
    std::uint16_t quantity = 0;
    bool operator==(const ReadCoils&) const = default;
};
struct ReadHoldingRegisters {
    std::uint16_t start = 0;
    std::uint16_t quantity = 0;
    bool operator==(const ReadHoldingRegisters&) const = default;
};
struct WriteSingleCoil {
    std::uint16_t address = 0;
    std::uint16_t value = coil_off;  // coil_on or coil_off
    bool operator==(const WriteSingleCoil&) const = default;
};
struct WriteSingleRegister {
    std::uint16_t address = 0;
    std::uint16_t value = 0;
    bool operator==(const WriteSingleRegister&) const = default;
};
struct ReportServerId {
    bool operator==(const ReportServerId&) const = default;
};
struct ReadDeviceIdentification {
    std::uint8_t mei = mei_read_device_id;
    std::uint8_t read_code = 1;
    std::uint8_t object_id = 0;
    bool operator==(const ReadDeviceIdentification&) const = default;
};
struct ExceptionResponse {
    std::uint8_t original_code = 0;
    std::uint8_t exception_code = 0;
    bool operator==(const ExceptionResponse&) const = default;
};
/// Any PDU whose body does not match a structured layout; bytes after the
/// function code are kept verbatim so the frame re-encodes byte-exactly.
struct RawPdu {
    std::vector<std::uint8_t> body;
    bool operator==(const RawPdu&) const = default;
};

using PduBody = std::variant<ReadCoils, ReadHoldingRegisters, WriteSingleCoil, WriteSingleRegister, ReportServerId,
                             ReadDeviceIdentification, ExceptionResponse, RawPdu>;

struct Pdu {
    std::uint8_t function_code = 0;
    PduBody body = RawPdu{};
    bool operator==(const Pdu&) const = default;
};

struct Frame {
    MbapHeader header;
    Pdu pdu;
    Direction direction = Direction::unknown;
    bool operator==(const Frame&) const = default;
};

enum class PduKind { read, write, identification, exception, other };

const char* to_string(PduKind kind) noexcept;
const char* to_string(Direction direction) noexcept;

/// Decodes exactly one frame; `bytes` must hold the whole frame and nothing
/// else. Throws Error{truncation | not_modbus | length}.
Frame decode_frame(std::span<const std::uint8_t> bytes, Direction direction_hint = Direction::unknown);

/// Decodes back-to-back frames from one TCP payload. Throws on the first
/// malformed frame.
std::vector<Frame> decode_frames(std::span<const std::uint8_t> payload,
                                 Direction direction_hint = Direction::unknown);

/// The header length field is recomputed from the PDU. Throws Error{encoding}
/// when the frame violates a PDU invariant.
std::vector<std::uint8_t> encode_frame(const Frame& frame);

/// Frame with header.length filled in from the PDU.
Frame make_frame(std::uint16_t transaction_id, std::uint8_t unit_id, Pdu pdu,
                 Direction direction = Direction::request);

PduKind classify_pdu(const Frame& frame) noexcept;

}  // namespace icshunt::modbus
