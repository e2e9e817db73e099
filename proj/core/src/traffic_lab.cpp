#include "icshunt/traffic_lab.hpp"
#include "icshunt/error.hpp"
#include "icshunt/modbus_codec.hpp"
#include "random.hpp"

#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace icshunt {

std::string_view to_string(AttackStep step) noexcept {
    switch (step) {
    case AttackStep::scan: return "scan";
    case AttackStep::device_identification: return "device_identification";
    case AttackStep::uid_enumeration: return "uid_enumeration";
    case AttackStep::state_modification: return "state_modification";
    }
    return "scan";
}

std::optional<AttackStep> parse_attack_step(std::string_view text) noexcept {
    for (auto step : {AttackStep::scan, AttackStep::device_identification, AttackStep::uid_enumeration,
                      AttackStep::state_modification})
        if (to_string(step) == text) return step;
    return std::nullopt;
}

std::string_view attack_type_for(AttackStep step) noexcept {
    switch (step) {
    case AttackStep::scan: return "Network Scan";
    case AttackStep::device_identification: return "Device Identification";
    case AttackStep::uid_enumeration: return "UID Enumeration";
    case AttackStep::state_modification: return "Unauthorized Write";
    }
    return "";
}

namespace {

using namespace modbus;

std::vector<std::string> techniques_for(AttackStep step) {
    switch (step) {
    case AttackStep::scan: return {"T0841"};
    case AttackStep::device_identification: return {"T0888"};
    case AttackStep::uid_enumeration: return {"T0846"};
    case AttackStep::state_modification: return {"T0836", "T0855"};
    }
    return {};
}

Pdu raw(std::uint8_t fc, std::vector<std::uint8_t> body = {}) { return Pdu{fc, RawPdu{std::move(body)}}; }

Pdu exception(std::uint8_t fc, std::uint8_t code) {
    return Pdu{static_cast<std::uint8_t>(fc | 0x80), ExceptionResponse{fc, code}};
}

std::vector<std::uint8_t> ascii(std::string_view s) { return {s.begin(), s.end()}; }

class Builder {
public:
    explicit Builder(const ScenarioSpec& spec) : spec_(spec), rng_(spec.seed), clock_(spec.start) {
        attacker_port_ = static_cast<std::uint16_t>(49152 + detail::below(rng_, 16000));
        poller_port_ = static_cast<std::uint16_t>(49152 + detail::below(rng_, 16000));
        transaction_ = static_cast<std::uint16_t>(detail::below(rng_, 0x8000));
    }

    // One request and its response on the attacker's (or poller's) connection.
    void exchange(Ipv4Address client, std::uint16_t client_port, std::uint8_t unit, Pdu request, Pdu response) {
        const auto tid = transaction_++;
        emit(client, client_port, spec_.victim_ip, spec_.victim_port,
             encode_frame(make_frame(tid, unit, std::move(request), Direction::request)));
        emit(spec_.victim_ip, spec_.victim_port, client, client_port,
             encode_frame(make_frame(tid, unit, std::move(response), Direction::response)));
    }

    void attack(std::uint8_t unit, Pdu request, Pdu response) {
        exchange(spec_.attacker_ip, attacker_port_, unit, std::move(request), std::move(response));
    }

    void poll() {
        std::vector<std::uint8_t> registers{20};
        for (int i = 0; i < 10; ++i) {
            const auto v = static_cast<std::uint16_t>(1000 + detail::below(rng_, 200));
            registers.push_back(static_cast<std::uint8_t>(v >> 8));
            registers.push_back(static_cast<std::uint8_t>(v & 0xFF));
        }
        exchange(spec_.poller_ip, poller_port_, 1, Pdu{0x03, ReadHoldingRegisters{0, 10}}, raw(0x03, registers));
    }

    void pause(double seconds) { clock_.micros += Timestamp::from_seconds(seconds).micros; }

    std::size_t packet_count() const { return records_.size(); }
    std::vector<PacketRecord> take() { return std::move(records_); }

private:
    void emit(Ipv4Address src, std::uint16_t sport, Ipv4Address dst, std::uint16_t dport,
              std::vector<std::uint8_t> payload) {
        // Jitter stays below half a gap so packet order follows emission order.
        const double jitter = spec_.inter_packet_gap * 0.2 * (detail::uniform01(rng_) - 0.5);
        clock_.micros += Timestamp::from_seconds(spec_.inter_packet_gap + jitter).micros;
        records_.push_back(PacketRecord{clock_, src, dst, sport, dport, std::move(payload)});
    }

    const ScenarioSpec& spec_;
    detail::Rng rng_;
    Timestamp clock_;
    std::uint16_t attacker_port_ = 0;
    std::uint16_t poller_port_ = 0;
    std::uint16_t transaction_ = 0;
    std::vector<PacketRecord> records_;
};

void scan_step(Builder& b) {
    // Function code sweep against unit 1; the honeypot implements only the
    // common read functions and rejects the rest with "illegal function".
    const std::vector<std::uint8_t> probes{0x01, 0x02, 0x03, 0x04, 0x07, 0x08, 0x0B, 0x0C,
                                           0x0F, 0x10, 0x14, 0x15, 0x16, 0x17, 0x18};
    for (auto fc : probes) {
        switch (fc) {
        case 0x01: b.attack(1, Pdu{fc, ReadCoils{0, 8}}, raw(fc, {1, 0x00})); break;
        case 0x03: b.attack(1, Pdu{fc, ReadHoldingRegisters{0, 1}}, raw(fc, {2, 0x00, 0x2A})); break;
        case 0x02:
        case 0x04: b.attack(1, raw(fc, {0x00, 0x00, 0x00, 0x01}), raw(fc, {2, 0x00, 0x00})); break;
        case 0x08: b.attack(1, raw(fc, {0x00, 0x00, 0xA5, 0x37}), exception(fc, 0x01)); break;
        case 0x0F: b.attack(1, raw(fc, {0x00, 0x00, 0x00, 0x01, 0x01, 0x00}), exception(fc, 0x01)); break;
        case 0x10: b.attack(1, raw(fc, {0x00, 0x00, 0x00, 0x01, 0x02, 0x00, 0x00}), exception(fc, 0x01)); break;
        case 0x14:
        case 0x15: b.attack(1, raw(fc, {0x07, 0x06, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01}), exception(fc, 0x01)); break;
        case 0x16: b.attack(1, raw(fc, {0x00, 0x00, 0xFF, 0xFF, 0x00, 0x00}), exception(fc, 0x01)); break;
        case 0x17: b.attack(1, raw(fc, {0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x02, 0x00, 0x00}),
                            exception(fc, 0x01)); break;
        case 0x18: b.attack(1, raw(fc, {0x00, 0x00}), exception(fc, 0x01)); break;
        default: b.attack(1, raw(fc), exception(fc, 0x01)); break;
        }
    }
}

void device_identification_step(Builder& b) {
    std::vector<std::uint8_t> objects{mei_read_device_id, 0x01, 0x01, 0x00, 0x00, 0x03};
    std::uint8_t object_id = 0;
    for (std::string_view value : {"Siemens", "SIMATIC", "S7-200"}) {
        objects.push_back(object_id++);
        objects.push_back(static_cast<std::uint8_t>(value.size()));
        auto bytes = ascii(value);
        objects.insert(objects.end(), bytes.begin(), bytes.end());
    }
    b.attack(1, Pdu{0x2B, ReadDeviceIdentification{mei_read_device_id, 0x01, 0x00}}, raw(0x2B, objects));

    auto id = ascii("SIMATIC");
    std::vector<std::uint8_t> server_id{static_cast<std::uint8_t>(id.size() + 2), 0x01, 0xFF};
    server_id.insert(server_id.end(), id.begin(), id.end());
    b.attack(1, Pdu{0x11, ReportServerId{}}, raw(0x11, server_id));
}

void uid_enumeration_step(Builder& b) {
    for (std::uint8_t unit = 1; unit <= 12; ++unit) {
        if (unit == 1)
            b.attack(unit, Pdu{0x03, ReadHoldingRegisters{0, 1}}, raw(0x03, {2, 0x00, 0x2A}));
        else
            b.attack(unit, Pdu{0x03, ReadHoldingRegisters{0, 1}}, exception(0x03, 0x0B));
    }
}

void state_modification_step(Builder& b) {
    b.attack(1, Pdu{0x05, WriteSingleCoil{0, coil_on}}, Pdu{0x05, WriteSingleCoil{0, coil_on}});
    b.attack(1, Pdu{0x06, WriteSingleRegister{1, 0x1234}}, Pdu{0x06, WriteSingleRegister{1, 0x1234}});
}

void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_be16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}
void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    put_be16(out, static_cast<std::uint16_t>(v >> 16));
    put_be16(out, static_cast<std::uint16_t>(v));
}

std::uint16_t checksum(const std::uint8_t* data, std::size_t size, std::uint32_t sum = 0) {
    for (std::size_t i = 0; i + 1 < size; i += 2) sum += (std::uint32_t(data[i]) << 8) | data[i + 1];
    if (size & 1) sum += std::uint32_t(data[size - 1]) << 8;
    while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
    return static_cast<std::uint16_t>(~sum);
}

void put_mac(std::vector<std::uint8_t>& out, Ipv4Address ip) {
    out.insert(out.end(), {0x02, 0x00});
    put_be32(out, ip.value);
}

}  // namespace

Scenario generate_scenario(const ScenarioSpec& spec) {
    if (spec.steps.empty() && spec.background_traffic == 0)
        throw Error(ErrorCode::validation, "scenario needs attack steps or background traffic");
    if (!(spec.inter_packet_gap > 0.0)) throw Error(ErrorCode::validation, "inter_packet_gap must be positive");
    if (spec.attacker_ip == spec.victim_ip) throw Error(ErrorCode::validation, "attacker and victim must differ");

    Builder b(spec);
    for (std::size_t i = 0; i < spec.background_traffic; ++i) b.poll();

    GroundTruth truth{spec.attacker_ip, spec.victim_ip, spec.victim_port, spec.seed, 0, {}};
    for (auto step : spec.steps) {
        b.pause(2.0);
        const std::size_t first = b.packet_count();
        switch (step) {
        case AttackStep::scan: scan_step(b); break;
        case AttackStep::device_identification: device_identification_step(b); break;
        case AttackStep::uid_enumeration: uid_enumeration_step(b); break;
        case AttackStep::state_modification: state_modification_step(b); break;
        }
        truth.steps.push_back(
            {step, std::string(attack_type_for(step)), first, b.packet_count() - 1, techniques_for(step)});
    }
    Scenario scenario;
    scenario.records = b.take();
    truth.packet_count = scenario.records.size();
    scenario.truth = std::move(truth);
    scenario.capture = encode_capture(scenario.records);
    return scenario;
}

std::vector<std::uint8_t> encode_capture(const std::vector<PacketRecord>& records) {
    if (records.empty()) throw Error(ErrorCode::validation, "cannot write a capture with no records");
    std::vector<std::uint8_t> out;
    put_le32(out, 0xA1B2C3D4);
    out.insert(out.end(), {0x02, 0x00, 0x04, 0x00});  // version 2.4
    put_le32(out, 0);                                // thiszone
    put_le32(out, 0);                                // sigfigs
    put_le32(out, 65535);                            // snaplen
    put_le32(out, 1);                                // Ethernet

    std::map<std::tuple<std::uint32_t, std::uint16_t, std::uint32_t, std::uint16_t>, std::uint32_t> next_seq;
    std::uint16_t ip_id = 1;
    for (const auto& r : records) {
        if (r.tcp_payload.size() > 65535 - 40) throw Error(ErrorCode::validation, "payload too large for IPv4");
        std::vector<std::uint8_t> frame;
        put_mac(frame, r.dst_ip);
        put_mac(frame, r.src_ip);
        put_be16(frame, 0x0800);

        const std::size_t ip_at = frame.size();
        const auto total = static_cast<std::uint16_t>(20 + 20 + r.tcp_payload.size());
        frame.insert(frame.end(), {0x45, 0x00});
        put_be16(frame, total);
        put_be16(frame, ip_id++);
        put_be16(frame, 0x4000);  // don't fragment
        frame.insert(frame.end(), {64, 6, 0, 0});
        put_be32(frame, r.src_ip.value);
        put_be32(frame, r.dst_ip.value);
        const auto ip_sum = checksum(frame.data() + ip_at, 20);
        frame[ip_at + 10] = static_cast<std::uint8_t>(ip_sum >> 8);
        frame[ip_at + 11] = static_cast<std::uint8_t>(ip_sum);

        auto& seq = next_seq[{r.src_ip.value, r.src_port, r.dst_ip.value, r.dst_port}];
        const auto ack = next_seq[{r.dst_ip.value, r.dst_port, r.src_ip.value, r.src_port}];
        const std::size_t tcp_at = frame.size();
        put_be16(frame, r.src_port);
        put_be16(frame, r.dst_port);
        put_be32(frame, seq + 1);
        put_be32(frame, ack + 1);
        frame.insert(frame.end(), {0x50, 0x18});  // 20-byte header, PSH|ACK
        put_be16(frame, 8192);
        frame.insert(frame.end(), {0, 0, 0, 0});
        frame.insert(frame.end(), r.tcp_payload.begin(), r.tcp_payload.end());
        seq += static_cast<std::uint32_t>(r.tcp_payload.size());

        const std::size_t tcp_len = frame.size() - tcp_at;
        std::uint32_t pseudo = (r.src_ip.value >> 16) + (r.src_ip.value & 0xFFFF) + (r.dst_ip.value >> 16) +
                               (r.dst_ip.value & 0xFFFF) + 6 + static_cast<std::uint32_t>(tcp_len);
        const auto tcp_sum = checksum(frame.data() + tcp_at, tcp_len, pseudo);
        frame[tcp_at + 16] = static_cast<std::uint8_t>(tcp_sum >> 8);
        frame[tcp_at + 17] = static_cast<std::uint8_t>(tcp_sum);

        put_le32(out, static_cast<std::uint32_t>(r.timestamp.seconds()));
        put_le32(out, static_cast<std::uint32_t>(r.timestamp.subsec_micros()));
        put_le32(out, static_cast<std::uint32_t>(frame.size()));
        put_le32(out, static_cast<std::uint32_t>(frame.size()));
        out.insert(out.end(), frame.begin(), frame.end());
    }
    return out;
}

std::size_t write_capture(const std::vector<PacketRecord>& records, const std::filesystem::path& path) {
    const auto bytes = encode_capture(records);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write capture " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "short write to " + path.string());
    return bytes.size();
}

std::string ground_truth_to_json(const GroundTruth& truth) {
    nlohmann::ordered_json doc;
    doc["schema_version"] = 1;
    doc["attacker_ip"] = truth.attacker_ip.to_string();
    doc["victim_ip"] = truth.victim_ip.to_string();
    doc["victim_port"] = truth.victim_port;
    doc["seed"] = truth.seed;
    doc["packet_count"] = truth.packet_count;
    doc["steps"] = nlohmann::ordered_json::array();
    for (const auto& s : truth.steps)
        doc["steps"].push_back({{"step", to_string(s.step)},
                                {"attack_type", s.attack_type},
                                {"first_packet", s.first_packet},
                                {"last_packet", s.last_packet},
                                {"technique_ids", s.technique_ids}});
    return doc.dump(2) + "\n";
}

GroundTruth ground_truth_from_json(std::string_view text) {
    try {
        const auto doc = nlohmann::json::parse(text);
        GroundTruth truth;
        truth.attacker_ip = Ipv4Address::parse(doc.at("attacker_ip").get<std::string>()).value();
        truth.victim_ip = Ipv4Address::parse(doc.at("victim_ip").get<std::string>()).value();
        truth.victim_port = doc.at("victim_port").get<std::uint16_t>();
        truth.seed = doc.at("seed").get<std::uint64_t>();
        truth.packet_count = doc.at("packet_count").get<std::size_t>();
        for (const auto& s : doc.at("steps")) {
            auto step = parse_attack_step(s.at("step").get<std::string>());
            if (!step) throw Error(ErrorCode::parse, "unknown step " + s.at("step").dump());
            truth.steps.push_back({*step, s.at("attack_type").get<std::string>(), s.at("first_packet").get<std::size_t>(),
                                   s.at("last_packet").get<std::size_t>(),
                                   s.at("technique_ids").get<std::vector<std::string>>()});
        }
        return truth;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse, std::string("ground truth: ") + e.what());
    } catch (const std::bad_optional_access&) {
        throw Error(ErrorCode::parse, "ground truth: malformed IPv4 address");
    }
}

}  // namespace icshunt
