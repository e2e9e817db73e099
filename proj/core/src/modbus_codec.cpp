#include "icshunt/modbus_codec.hpp"
#include "icshunt/error.hpp"

#include <optional>
#include <string>

namespace icshunt::modbus {

const char* to_string(PduKind kind) noexcept {
    switch (kind) {
    case PduKind::read: return "read";
    case PduKind::write: return "write";
    case PduKind::identification: return "identification";
    case PduKind::exception: return "exception";
    case PduKind::other: return "other";
    }
    return "other";
}

const char* to_string(Direction direction) noexcept {
    switch (direction) {
    case Direction::request: return "request";
    case Direction::response: return "response";
    case Direction::unknown: return "unknown";
    }
    return "unknown";
}

namespace {

std::uint16_t be16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

// Structured interpretation of a PDU body, or nullopt when it has to stay raw.
// Responses to reads and identification requests carry different layouts and
// are kept raw.
std::optional<PduBody> structured(std::uint8_t fc, std::span<const std::uint8_t> body, Direction direction) {
    const bool maybe_request = direction != Direction::response;
    if (fc & 0x80) {
        if (body.size() == 1) return ExceptionResponse{static_cast<std::uint8_t>(fc & 0x7F), body[0]};
        return std::nullopt;
    }
    switch (fc) {
    case 0x01:
        if (maybe_request && body.size() == 4) return ReadCoils{be16(body, 0), be16(body, 2)};
        break;
    case 0x03:
        if (maybe_request && body.size() == 4) return ReadHoldingRegisters{be16(body, 0), be16(body, 2)};
        break;
    case 0x05:
        if (body.size() == 4) {
            const auto value = be16(body, 2);
            if (value == coil_on || value == coil_off) return WriteSingleCoil{be16(body, 0), value};
        }
        break;
    case 0x06:
        if (body.size() == 4) return WriteSingleRegister{be16(body, 0), be16(body, 2)};
        break;
    case 0x11:
        if (maybe_request && body.empty()) return ReportServerId{};
        break;
    case 0x2B:
        if (maybe_request && body.size() == 3 && body[0] == mei_read_device_id)
            return ReadDeviceIdentification{body[0], body[1], body[2]};
        break;
    default:
        break;
    }
    return std::nullopt;
}

struct BodyEncoder {
    std::uint8_t fc;
    std::vector<std::uint8_t>& out;

    void expect(std::uint8_t code, const char* what) const {
        if (fc != code)
            throw Error(ErrorCode::encoding, std::string(what) + " requires function code " + std::to_string(code) +
                                                 ", frame has " + std::to_string(fc));
    }

    void operator()(const ReadCoils& p) const {
        expect(0x01, "ReadCoils");
        put16(out, p.start);
        put16(out, p.quantity);
    }
    void operator()(const ReadHoldingRegisters& p) const {
        expect(0x03, "ReadHoldingRegisters");
        put16(out, p.start);
        put16(out, p.quantity);
    }
    void operator()(const WriteSingleCoil& p) const {
        expect(0x05, "WriteSingleCoil");
        if (p.value != coil_on && p.value != coil_off)
            throw Error(ErrorCode::encoding, "WriteSingleCoil value must be 0x0000 or 0xFF00");
        put16(out, p.address);
        put16(out, p.value);
    }
    void operator()(const WriteSingleRegister& p) const {
        expect(0x06, "WriteSingleRegister");
        put16(out, p.address);
        put16(out, p.value);
    }
    void operator()(const ReportServerId&) const { expect(0x11, "ReportServerId"); }
    void operator()(const ReadDeviceIdentification& p) const {
        expect(0x2B, "ReadDeviceIdentification");
        if (p.mei != mei_read_device_id) throw Error(ErrorCode::encoding, "ReadDeviceIdentification requires MEI 0x0E");
        out.insert(out.end(), {p.mei, p.read_code, p.object_id});
    }
    void operator()(const ExceptionResponse& p) const {
        if (p.original_code & 0x80) throw Error(ErrorCode::encoding, "exception original code has the high bit set");
        expect(static_cast<std::uint8_t>(p.original_code | 0x80), "ExceptionResponse");
        out.push_back(p.exception_code);
    }
    void operator()(const RawPdu& p) const { out.insert(out.end(), p.body.begin(), p.body.end()); }
};

}  // namespace

Frame decode_frame(std::span<const std::uint8_t> bytes, Direction direction_hint) {
    if (bytes.size() < mbap_size + 1)
        throw Error(ErrorCode::truncation, "modbus frame needs at least 8 bytes, got " + std::to_string(bytes.size()));
    Frame frame;
    frame.header = {be16(bytes, 0), be16(bytes, 2), be16(bytes, 4), bytes[6]};
    frame.direction = direction_hint;
    if (frame.header.protocol_id != 0)
        throw Error(ErrorCode::not_modbus, "protocol id " + std::to_string(frame.header.protocol_id) + " is not modbus");
    if (frame.header.length < 2 || frame.header.length != bytes.size() - 6)
        throw Error(ErrorCode::length, "declared length " + std::to_string(frame.header.length) + " does not match " +
                                           std::to_string(bytes.size() - 6) + " available bytes");
    frame.pdu.function_code = bytes[mbap_size];
    const auto body = bytes.subspan(mbap_size + 1);
    if (auto parsed = structured(frame.pdu.function_code, body, direction_hint))
        frame.pdu.body = std::move(*parsed);
    else
        frame.pdu.body = RawPdu{{body.begin(), body.end()}};
    return frame;
}

std::vector<Frame> decode_frames(std::span<const std::uint8_t> payload, Direction direction_hint) {
    std::vector<Frame> frames;
    std::size_t offset = 0;
    while (offset < payload.size()) {
        const auto rest = payload.subspan(offset);
        if (rest.size() < mbap_size + 1)
            throw Error(ErrorCode::truncation, "trailing " + std::to_string(rest.size()) + " bytes after frame " +
                                                   std::to_string(frames.size()));
        const std::size_t frame_size = 6 + be16(rest, 4);
        if (frame_size > rest.size())
            throw Error(ErrorCode::length, "declared length runs past the payload end");
        frames.push_back(decode_frame(rest.first(frame_size), direction_hint));
        offset += frame_size;
    }
    return frames;
}

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
    if (frame.header.protocol_id != 0) throw Error(ErrorCode::encoding, "protocol id must be 0");
    std::vector<std::uint8_t> body;
    std::visit(BodyEncoder{frame.pdu.function_code, body}, frame.pdu.body);
    const bool raw = std::holds_alternative<RawPdu>(frame.pdu.body);
    const auto canonical = structured(frame.pdu.function_code, body, frame.direction);
    if (raw && canonical)
        throw Error(ErrorCode::encoding, "raw PDU body has a structured layout; use the typed variant");
    if (!raw && (!canonical || *canonical != frame.pdu.body))
        throw Error(ErrorCode::encoding, std::string("typed PDU is not valid for a ") + to_string(frame.direction));
    if (body.size() + 2 > 0xFFFF) throw Error(ErrorCode::encoding, "PDU too large");

    std::vector<std::uint8_t> out;
    out.reserve(mbap_size + 1 + body.size());
    put16(out, frame.header.transaction_id);
    put16(out, frame.header.protocol_id);
    put16(out, static_cast<std::uint16_t>(body.size() + 2));
    out.push_back(frame.header.unit_id);
    out.push_back(frame.pdu.function_code);
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

Frame make_frame(std::uint16_t transaction_id, std::uint8_t unit_id, Pdu pdu, Direction direction) {
    Frame frame{{transaction_id, 0, 0, unit_id}, std::move(pdu), direction};
    frame.header.length = static_cast<std::uint16_t>(encode_frame(frame).size() - 6);
    return frame;
}

PduKind classify_pdu(const Frame& frame) noexcept {
    const auto fc = frame.pdu.function_code;
    if (fc & 0x80) return PduKind::exception;
    switch (fc) {
    case 0x01:
    case 0x03: return PduKind::read;
    case 0x05:
    case 0x06: return PduKind::write;
    case 0x11: return PduKind::identification;
    case 0x2B: {
        if (std::holds_alternative<ReadDeviceIdentification>(frame.pdu.body)) return PduKind::identification;
        if (const auto* raw = std::get_if<RawPdu>(&frame.pdu.body))
            if (!raw->body.empty() && raw->body[0] == mei_read_device_id) return PduKind::identification;
        return PduKind::other;
    }
    default: return PduKind::other;
    }
}

}  // namespace icshunt::modbus
