#include "icshunt/capture_ingest.hpp"
#include "icshunt/error.hpp"

#include <fstream>
#include <iterator>

#include <spdlog/spdlog.h>

namespace icshunt {

namespace {

constexpr std::uint32_t magic_micro = 0xA1B2C3D4;
constexpr std::uint32_t magic_nano = 0xA1B23C4D;
constexpr std::uint32_t linktype_ethernet = 1;
constexpr std::size_t global_header_size = 24;
constexpr std::size_t record_header_size = 16;

std::uint32_t load32(const std::uint8_t* p, bool swap) {
    const std::uint32_t le = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
                             (std::uint32_t(p[3]) << 24);
    return swap ? __builtin_bswap32(le) : le;
}

std::uint16_t net16(const std::uint8_t* p) { return static_cast<std::uint16_t>((p[0] << 8) | p[1]); }
std::uint32_t net32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

enum class Skip { none, non_ip, ipv6, non_tcp, malformed };

// Strips Ethernet (with optional 802.1Q tags), IPv4 and TCP headers.
Skip dissect(std::span<const std::uint8_t> frame, PacketRecord& out) {
    if (frame.size() < 14) return Skip::malformed;
    std::size_t offset = 12;
    std::uint16_t ether_type = net16(&frame[offset]);
    offset += 2;
    while (ether_type == 0x8100 || ether_type == 0x88A8) {
        if (frame.size() < offset + 4) return Skip::malformed;
        ether_type = net16(&frame[offset + 2]);
        offset += 4;
    }
    if (ether_type == 0x86DD) return Skip::ipv6;
    if (ether_type != 0x0800) return Skip::non_ip;

    const auto ip = frame.subspan(offset);
    if (ip.size() < 20 || (ip[0] >> 4) != 4) return Skip::malformed;
    const std::size_t ihl = std::size_t(ip[0] & 0x0F) * 4;
    const std::size_t total = net16(&ip[2]);
    if (ihl < 20 || total < ihl || total > ip.size()) return Skip::malformed;
    if (ip[9] != 6) return Skip::non_tcp;
    if ((net16(&ip[6]) & 0x1FFF) != 0) return Skip::non_tcp;  // non-first fragment
    out.src_ip = Ipv4Address{net32(&ip[12])};
    out.dst_ip = Ipv4Address{net32(&ip[16])};

    // The IP total length bounds the segment; Ethernet padding is ignored.
    const auto tcp = ip.subspan(ihl, total - ihl);
    if (tcp.size() < 20) return Skip::malformed;
    const std::size_t data_offset = std::size_t(tcp[12] >> 4) * 4;
    if (data_offset < 20 || data_offset > tcp.size()) return Skip::malformed;
    out.src_port = net16(&tcp[0]);
    out.dst_port = net16(&tcp[2]);
    const auto payload = tcp.subspan(data_offset);
    out.tcp_payload.assign(payload.begin(), payload.end());
    return Skip::none;
}

}  // namespace

std::vector<PacketRecord> parse_capture(std::span<const std::uint8_t> bytes, const std::set<std::uint16_t>& port_filter,
                                        CaptureStats* stats) {
    if (port_filter.empty()) throw Error(ErrorCode::validation, "capture port filter is empty");
    CaptureStats local;
    CaptureStats& s = stats ? *stats : local;
    s = {};
    if (bytes.size() < global_header_size)
        throw Error(ErrorCode::unsupported_format, "capture is shorter than the 24-byte file header");
    const std::uint32_t magic_le = load32(bytes.data(), false);
    bool swap = false;
    bool nanos = false;
    if (magic_le == magic_micro || magic_le == magic_nano) {
        nanos = magic_le == magic_nano;
    } else if (__builtin_bswap32(magic_le) == magic_micro || __builtin_bswap32(magic_le) == magic_nano) {
        swap = true;
        nanos = __builtin_bswap32(magic_le) == magic_nano;
    } else {
        throw Error(ErrorCode::unsupported_format, "unrecognised capture magic number");
    }
    const std::uint32_t linktype = load32(bytes.data() + 20, swap) & 0x0FFFFFFF;
    if (linktype != linktype_ethernet)
        throw Error(ErrorCode::unsupported_format, "link type " + std::to_string(linktype) + " is not Ethernet");

    std::vector<PacketRecord> records;
    std::size_t offset = global_header_size;
    while (offset < bytes.size()) {
        if (bytes.size() - offset < record_header_size)
            throw PartialReadError("capture truncated inside packet header " + std::to_string(s.packets_read + 1),
                                   std::move(records));
        const auto* header = bytes.data() + offset;
        const std::uint32_t secs = load32(header, swap);
        const std::uint32_t frac = load32(header + 4, swap);
        const std::uint32_t incl_len = load32(header + 8, swap);
        offset += record_header_size;
        if (bytes.size() - offset < incl_len)
            throw PartialReadError("capture truncated inside packet " + std::to_string(s.packets_read + 1),
                                   std::move(records));
        const auto frame = bytes.subspan(offset, incl_len);
        offset += incl_len;
        ++s.packets_read;

        PacketRecord record;
        record.timestamp = Timestamp::from_parts(secs, nanos ? frac / 1000 : frac);
        switch (dissect(frame, record)) {
        case Skip::none: break;
        case Skip::non_ip: ++s.skipped_non_ip; continue;
        case Skip::ipv6: ++s.skipped_ipv6; continue;
        case Skip::non_tcp: ++s.skipped_non_tcp; continue;
        case Skip::malformed: ++s.skipped_malformed; continue;
        }
        if (!port_filter.count(record.src_port) && !port_filter.count(record.dst_port)) {
            ++s.skipped_port;
            continue;
        }
        if (record.tcp_payload.empty()) {
            ++s.skipped_empty;
            continue;
        }
        records.push_back(std::move(record));
        ++s.yielded;
    }
    if (s.skipped_ipv6) spdlog::debug("capture: skipped {} IPv6 packets", s.skipped_ipv6);
    return records;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<PacketRecord> read_capture(const CaptureSource& source, CaptureStats* stats) {
    if (source.kind == SourceKind::live)
        throw Error(ErrorCode::unsupported_format, "live capture from " + source.locator + " is not supported");
    const auto bytes = read_file_bytes(source.locator);
    return parse_capture(bytes, source.port_filter, stats);
}

modbus::Direction infer_direction(const PacketRecord& record, const std::set<std::uint16_t>& server_ports) {
    if (server_ports.count(record.dst_port)) return modbus::Direction::request;
    if (server_ports.count(record.src_port)) return modbus::Direction::response;
    return modbus::Direction::unknown;
}

std::vector<modbus::Frame> extract_modbus(const PacketRecord& record, const std::set<std::uint16_t>& server_ports) {
    try {
        return modbus::decode_frames(record.tcp_payload, infer_direction(record, server_ports));
    } catch (const Error& e) {
        spdlog::debug("{}:{} -> {}:{} payload is not modbus: {}", record.src_ip.to_string(), record.src_port,
                      record.dst_ip.to_string(), record.dst_port, e.what());
        return {};
    }
}

}  // namespace icshunt
