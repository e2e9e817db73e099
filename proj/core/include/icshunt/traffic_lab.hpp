#pragma once

#include "icshunt/capture_ingest.hpp"
#include "icshunt/net.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace icshunt {

/// The four attacker steps of the honeypot scenario.
enum class AttackStep { scan, device_identification, uid_enumeration, state_modification };

std::string_view to_string(AttackStep step) noexcept;
std::optional<AttackStep> parse_attack_step(std::string_view text) noexcept;
/// Attack type label the default rule set assigns to the step.
std::string_view attack_type_for(AttackStep step) noexcept;

struct ScenarioSpec {
    Ipv4Address attacker_ip = *Ipv4Address::parse("192.168.56.101");
    Ipv4Address victim_ip = *Ipv4Address::parse("192.168.56.20");
    Ipv4Address poller_ip = *Ipv4Address::parse("192.168.56.10");
    std::uint16_t victim_port = 5300;
    std::vector<AttackStep> steps{AttackStep::scan, AttackStep::device_identification, AttackStep::uid_enumeration,
                                  AttackStep::state_modification};
    double inter_packet_gap = 0.2;  // seconds
    std::size_t background_traffic = 20;  // benign read polls, each a request/response pair
    std::uint64_t seed = 42;
    Timestamp start = Timestamp::from_parts(1609459200, 0);
};

struct StepTruth {
    AttackStep step;
    std::string attack_type;
    std::size_t first_packet = 0;  // inclusive capture index
    std::size_t last_packet = 0;   // inclusive
    std::vector<std::string> technique_ids;
};

struct GroundTruth {
    Ipv4Address attacker_ip;
    Ipv4Address victim_ip;
    std::uint16_t victim_port = 0;
    std::uint64_t seed = 0;
    std::size_t packet_count = 0;
    std::vector<StepTruth> steps;
};

struct Scenario {
    std::vector<PacketRecord> records;
    std::vector<std::uint8_t> capture;  // classic capture file bytes
    GroundTruth truth;
};

/// Throws Error{validation} when the scenario has neither attack steps nor
/// background polls, or a non-positive gap.
Scenario generate_scenario(const ScenarioSpec& spec);

/// Serialises records as Ethernet/IPv4/TCP frames in a microsecond classic
/// capture. Throws Error{validation} on an empty list.
std::vector<std::uint8_t> encode_capture(const std::vector<PacketRecord>& records);
std::size_t write_capture(const std::vector<PacketRecord>& records, const std::filesystem::path& path);

std::string ground_truth_to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(std::string_view text);

}  // namespace icshunt
