#pragma once

#include "icshunt/attack_knowledge.hpp"
#include "icshunt/capture_ingest.hpp"
#include "icshunt/modbus_codec.hpp"
#include "icshunt/net.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace icshunt {

enum class Severity { low, medium, high };
enum class DistinctKey { unit_id, function_code, dst_port };

std::string_view to_string(Severity severity) noexcept;
std::string_view to_string(DistinctKey key) noexcept;
std::optional<Severity> parse_severity(std::string_view text) noexcept;

/// Byte pattern compared against the encoded frame (MBAP header included)
/// starting at `offset`. Each byte is compared under its mask.
struct PayloadPattern {
    std::size_t offset = 0;
    std::vector<std::uint8_t> bytes;
    std::vector<std::uint8_t> mask;  // same length as bytes
    bool operator==(const PayloadPattern&) const = default;
};

/// Every present clause must hold for a frame to match.
struct MatchSpec {
    std::optional<modbus::Direction> direction;
    std::set<std::uint8_t> function_codes;
    std::optional<modbus::PduKind> pdu_kind;
    std::optional<PayloadPattern> payload;
    std::optional<std::pair<std::uint8_t, std::uint8_t>> unit_id_range;  // inclusive
    std::set<std::uint8_t> exception_codes;

    bool empty() const noexcept;
    bool operator==(const MatchSpec&) const = default;
};

struct WindowSpec {
    DistinctKey distinct_key = DistinctKey::function_code;
    std::size_t threshold = 10;
    double span = 10.0;  // seconds
    bool operator==(const WindowSpec&) const = default;
};

struct SignatureRule {
    std::string id;
    std::string name;
    std::string attack_type;
    MatchSpec match;
    std::optional<WindowSpec> window;
    std::vector<std::string> technique_ids;
    std::vector<std::string> tactic_ids;
    Severity severity = Severity::medium;
    bool operator==(const SignatureRule&) const = default;
};

class RuleSet {
public:
    RuleSet() = default;
    explicit RuleSet(std::vector<SignatureRule> rules) : rules_(std::move(rules)) {}

    const std::vector<SignatureRule>& rules() const noexcept { return rules_; }
    std::size_t size() const noexcept { return rules_.size(); }
    bool empty() const noexcept { return rules_.empty(); }
    const SignatureRule* find(std::string_view id) const;

private:
    std::vector<SignatureRule> rules_;
};

/// Parses a JSON rule document and resolves every technique against `kb`.
/// Rules may name techniques through "technique_ids" or "technique_names";
/// missing "tactic_ids" are derived from the techniques. An empty document
/// gives an empty set. Throws Error{parse} on malformed JSON and
/// Error{validation} naming the rule id and field otherwise.
RuleSet load_rules(std::string_view document, const KnowledgeBase& kb);
RuleSet load_rules_file(const std::filesystem::path& path, const KnowledgeBase& kb);
/// The rule file compiled into the library.
std::string_view default_rules_document() noexcept;
RuleSet load_default_rules(const KnowledgeBase& kb);

bool frame_matches(const MatchSpec& match, const modbus::Frame& frame);

struct EvidencePacket {
    Timestamp timestamp;
    Ipv4Address src_ip;
    std::uint16_t src_port = 0;
    Ipv4Address dst_ip;
    std::uint16_t dst_port = 0;
    std::uint8_t unit_id = 0;
    std::uint8_t function_code = 0;
    modbus::Direction direction = modbus::Direction::unknown;
    bool operator==(const EvidencePacket&) const = default;
};

struct Detection {
    std::string id;
    Timestamp timestamp;
    Ipv4Address attacker_ip;
    Ipv4Address victim_ip;
    std::string attack_type;
    std::string rule_id;
    std::vector<std::string> technique_ids;
    std::vector<std::string> tactic_ids;
    Severity severity = Severity::medium;
    std::vector<EvidencePacket> evidence;
    bool operator==(const Detection&) const = default;
};

struct EngineOptions {
    std::size_t evidence_cap = 16;
    std::size_t max_windows = 100'000;  // (attacker, rule) windows kept at once
    std::set<std::uint16_t> server_ports = default_modbus_ports;
};

/// Sliding-window state for windowed rules. Single writer.
class EngineState {
public:
    explicit EngineState(EngineOptions options = {}) : options_(std::move(options)) {}

    const EngineOptions& options() const noexcept { return options_; }
    std::size_t window_count() const noexcept { return windows_.size(); }
    std::size_t evicted_by_cap() const noexcept { return evicted_by_cap_; }
    std::uint64_t detections_emitted() const noexcept { return emitted_; }

private:
    friend std::vector<Detection> process_packet(EngineState&, const RuleSet&, const PacketRecord&,
                                                 const std::vector<modbus::Frame>&);
    friend std::vector<Detection> flush(EngineState&, Timestamp);

    struct Window {
        std::map<std::uint32_t, Timestamp> keys;  // distinct key -> last seen
        std::vector<EvidencePacket> evidence;
        std::optional<Timestamp> fired_at;
        Timestamp last_activity;
        std::int64_t span_micros = 0;
    };
    using WindowKey = std::pair<std::uint32_t, std::size_t>;  // attacker, rule index

    EngineOptions options_;
    std::map<WindowKey, Window> windows_;
    Timestamp high_water_;
    std::size_t evicted_by_cap_ = 0;
    std::uint64_t emitted_ = 0;
};

/// Evaluates all rules against the frames of one packet. Per-packet rules
/// fire at most once per packet. A windowed rule fires when the number of
/// distinct keys seen from one attacker within `span` seconds reaches the
/// threshold; its keys are then cleared and it stays silent for one span.
std::vector<Detection> process_packet(EngineState& state, const RuleSet& rules, const PacketRecord& record,
                                      const std::vector<modbus::Frame>& frames);

/// Drops windows idle for longer than their span. Never emits detections for
/// windows below threshold.
std::vector<Detection> flush(EngineState& state, Timestamp now);

}  // namespace icshunt
