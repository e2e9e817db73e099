#include "icshunt/signature_engine.hpp"
#include "icshunt/error.hpp"
#include "hashing.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace icshunt {

namespace detail {
extern const std::string_view default_rules_json;
}

using nlohmann::json;

std::string_view to_string(Severity severity) noexcept {
    switch (severity) {
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
    }
    return "medium";
}

std::string_view to_string(DistinctKey key) noexcept {
    switch (key) {
    case DistinctKey::unit_id: return "unit_id";
    case DistinctKey::function_code: return "function_code";
    case DistinctKey::dst_port: return "dst_port";
    }
    return "function_code";
}

std::optional<Severity> parse_severity(std::string_view text) noexcept {
    for (auto s : {Severity::low, Severity::medium, Severity::high})
        if (to_string(s) == text) return s;
    return std::nullopt;
}

bool MatchSpec::empty() const noexcept {
    return !direction && function_codes.empty() && !pdu_kind && !payload && !unit_id_range && exception_codes.empty();
}

const SignatureRule* RuleSet::find(std::string_view id) const {
    for (const auto& r : rules_)
        if (r.id == id) return &r;
    return nullptr;
}

namespace {

class RuleParser {
public:
    RuleParser(const json& node, const KnowledgeBase& kb) : node_(node), kb_(kb) {}

    SignatureRule parse() {
        if (!node_.is_object()) fail("rule", "must be an object");
        rule_.id = "?";
        rule_.id = string_field("id", true);
        if (rule_.id.empty()) fail("id", "must not be empty");
        for (const auto& [key, value] : node_.items()) {
            static const std::set<std::string> known{"id", "name", "attack_type", "severity", "match", "window",
                                                     "technique_ids", "technique_names", "tactic_ids"};
            if (!known.count(key)) fail(key, "is not a rule field");
        }
        rule_.name = string_field("name", false);
        if (rule_.name.empty()) rule_.name = rule_.id;
        rule_.attack_type = string_field("attack_type", true);
        if (rule_.attack_type.empty()) fail("attack_type", "must not be empty");
        if (node_.contains("severity")) {
            auto s = parse_severity(string_field("severity", true));
            if (!s) fail("severity", "must be low, medium or high");
            rule_.severity = *s;
        }
        if (node_.contains("match")) parse_match(node_.at("match"));
        if (node_.contains("window")) parse_window(node_.at("window"));
        if (rule_.match.empty() && !rule_.window) fail("match", "rule needs a match clause or a window");
        parse_techniques();
        parse_tactics();
        return std::move(rule_);
    }

private:
    [[noreturn]] void fail(std::string_view field, std::string_view what) const {
        throw Error(ErrorCode::validation,
                    "rule " + rule_.id + ": field '" + std::string(field) + "' " + std::string(what));
    }

    std::string string_field(const char* key, bool required) const {
        if (!node_.contains(key)) {
            if (required) fail(key, "is required");
            return {};
        }
        if (!node_.at(key).is_string()) fail(key, "must be a string");
        return node_.at(key).get<std::string>();
    }

    std::uint8_t byte_value(const json& v, std::string_view field) const {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0 || v.get<std::int64_t>() > 255)
            fail(field, "must hold integers in [0, 255]");
        return static_cast<std::uint8_t>(v.get<std::int64_t>());
    }

    std::set<std::uint8_t> byte_set(const json& v, std::string_view field) const {
        std::set<std::uint8_t> out;
        if (v.is_array()) {
            for (const auto& item : v) out.insert(byte_value(item, field));
            if (out.empty()) fail(field, "must not be an empty list");
        } else {
            out.insert(byte_value(v, field));
        }
        return out;
    }

    std::vector<std::uint8_t> hex_bytes(const json& v, std::string_view field) const {
        if (!v.is_string()) fail(field, "must be a hex string");
        std::string text;
        for (char c : v.get<std::string>())
            if (c != ' ' && c != ':') text.push_back(c);
        if (text.size() % 2 != 0) fail(field, "must have an even number of hex digits");
        std::vector<std::uint8_t> out;
        for (std::size_t i = 0; i < text.size(); i += 2) {
            unsigned value = 0;
            auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + i + 2, value, 16);
            if (ec != std::errc{} || ptr != text.data() + i + 2) fail(field, "must be a hex string");
            out.push_back(static_cast<std::uint8_t>(value));
        }
        return out;
    }

    void parse_match(const json& m) {
        if (!m.is_object()) fail("match", "must be an object");
        for (const auto& [key, value] : m.items()) {
            const std::string field = "match." + key;
            if (key == "direction") {
                const auto text = value.is_string() ? value.get<std::string>() : "";
                if (text == "request") rule_.match.direction = modbus::Direction::request;
                else if (text == "response") rule_.match.direction = modbus::Direction::response;
                else if (text != "any") fail(field, "must be request, response or any");
            } else if (key == "function_code") {
                rule_.match.function_codes = byte_set(value, field);
            } else if (key == "pdu_kind") {
                const auto text = value.is_string() ? value.get<std::string>() : "";
                for (auto kind : {modbus::PduKind::read, modbus::PduKind::write, modbus::PduKind::identification,
                                  modbus::PduKind::exception, modbus::PduKind::other})
                    if (text == modbus::to_string(kind)) rule_.match.pdu_kind = kind;
                if (!rule_.match.pdu_kind) fail(field, "must be read, write, identification, exception or other");
            } else if (key == "payload") {
                if (!value.is_object() || !value.contains("bytes")) fail(field, "needs a bytes entry");
                PayloadPattern p;
                if (value.contains("offset")) {
                    if (!value.at("offset").is_number_unsigned()) fail(field + ".offset", "must be a non-negative integer");
                    p.offset = value.at("offset").get<std::size_t>();
                }
                p.bytes = hex_bytes(value.at("bytes"), field + ".bytes");
                if (p.bytes.empty()) fail(field + ".bytes", "must not be empty");
                p.mask = value.contains("mask") ? hex_bytes(value.at("mask"), field + ".mask")
                                                : std::vector<std::uint8_t>(p.bytes.size(), 0xFF);
                if (p.mask.size() != p.bytes.size()) fail(field + ".mask", "must be as long as bytes");
                rule_.match.payload = std::move(p);
            } else if (key == "unit_id") {
                if (!value.is_object() || !value.contains("min") || !value.contains("max"))
                    fail(field, "must be an object with min and max");
                const auto lo = byte_value(value.at("min"), field + ".min");
                const auto hi = byte_value(value.at("max"), field + ".max");
                if (lo > hi) fail(field, "min exceeds max");
                rule_.match.unit_id_range = std::pair{lo, hi};
            } else if (key == "exception_code") {
                rule_.match.exception_codes = byte_set(value, field);
            } else {
                fail(field, "is not a match clause");
            }
        }
    }

    void parse_window(const json& w) {
        if (!w.is_object()) fail("window", "must be an object");
        WindowSpec spec;
        for (const auto& [key, value] : w.items()) {
            if (key == "distinct_key") {
                const auto text = value.is_string() ? value.get<std::string>() : "";
                if (text == "unit_id") spec.distinct_key = DistinctKey::unit_id;
                else if (text == "function_code") spec.distinct_key = DistinctKey::function_code;
                else if (text == "dst_port") spec.distinct_key = DistinctKey::dst_port;
                else fail("window.distinct_key", "must be unit_id, function_code or dst_port");
            } else if (key == "threshold") {
                if (!value.is_number_integer() || value.get<std::int64_t>() < 2)
                    fail("window.threshold", "must be an integer >= 2");
                spec.threshold = value.get<std::size_t>();
            } else if (key == "span") {
                if (!value.is_number() || !(value.get<double>() > 0)) fail("window.span", "must be a positive number");
                spec.span = value.get<double>();
            } else {
                fail("window." + key, "is not a window field");
            }
        }
        if (!w.contains("distinct_key")) fail("window.distinct_key", "is required");
        rule_.window = spec;
    }

    std::vector<std::string> string_list(const char* key) const {
        if (!node_.contains(key)) return {};
        const auto& v = node_.at(key);
        if (!v.is_array()) fail(key, "must be a list of strings");
        std::vector<std::string> out;
        for (const auto& item : v) {
            if (!item.is_string()) fail(key, "must be a list of strings");
            out.push_back(item.get<std::string>());
        }
        return out;
    }

    void parse_techniques() {
        std::set<std::string> ids;
        for (const auto& id : string_list("technique_ids")) {
            if (!kb_.find_technique(id)) fail("technique_ids", "names unknown technique " + id);
            ids.insert(id);
        }
        for (const auto& name : string_list("technique_names")) {
            const auto* t = kb_.find_technique_by_name(name);
            if (!t) fail("technique_names", "names unknown technique \"" + name + "\"");
            ids.insert(t->id);
        }
        if (ids.empty()) fail("technique_ids", "must list at least one technique");
        rule_.technique_ids.assign(ids.begin(), ids.end());
    }

    void parse_tactics() {
        std::set<std::string> ids;
        if (node_.contains("tactic_ids")) {
            for (const auto& id : string_list("tactic_ids")) {
                if (!kb_.find_tactic(id)) fail("tactic_ids", "names unknown tactic " + id);
                ids.insert(id);
            }
        } else {
            for (const auto& t : rule_.technique_ids)
                for (const auto& tactic : kb_.technique(t).tactic_ids) ids.insert(tactic);
        }
        rule_.tactic_ids.assign(ids.begin(), ids.end());
        std::sort(rule_.tactic_ids.begin(), rule_.tactic_ids.end(), [&](const auto& a, const auto& b) {
            return kb_.matrix_order(a) < kb_.matrix_order(b);
        });
    }

    const json& node_;
    const KnowledgeBase& kb_;
    SignatureRule rule_;
};

std::uint8_t exception_code_of(const modbus::Frame& frame) {
    if (const auto* e = std::get_if<modbus::ExceptionResponse>(&frame.pdu.body)) return e->exception_code;
    if (const auto* raw = std::get_if<modbus::RawPdu>(&frame.pdu.body))
        if (!raw->body.empty()) return raw->body[0];
    return 0;
}

struct Endpoints {
    Ipv4Address attacker;
    Ipv4Address victim;
    std::uint16_t victim_port;
};

Endpoints endpoints(const PacketRecord& record, modbus::Direction direction) {
    if (direction == modbus::Direction::response) return {record.dst_ip, record.src_ip, record.src_port};
    return {record.src_ip, record.dst_ip, record.dst_port};
}

EvidencePacket evidence_of(const PacketRecord& record, const modbus::Frame& frame) {
    return {record.timestamp, record.src_ip,          record.src_port,      record.dst_ip,
            record.dst_port,  frame.header.unit_id, frame.pdu.function_code, frame.direction};
}

}  // namespace

bool frame_matches(const MatchSpec& match, const modbus::Frame& frame) {
    if (match.direction && frame.direction != *match.direction) return false;
    if (!match.function_codes.empty() && !match.function_codes.count(frame.pdu.function_code)) return false;
    if (match.pdu_kind && modbus::classify_pdu(frame) != *match.pdu_kind) return false;
    if (match.unit_id_range &&
        (frame.header.unit_id < match.unit_id_range->first || frame.header.unit_id > match.unit_id_range->second))
        return false;
    if (!match.exception_codes.empty()) {
        if (!(frame.pdu.function_code & 0x80) || !match.exception_codes.count(exception_code_of(frame))) return false;
    }
    if (match.payload) {
        const auto bytes = modbus::encode_frame(frame);
        const auto& p = *match.payload;
        if (p.offset + p.bytes.size() > bytes.size()) return false;
        for (std::size_t i = 0; i < p.bytes.size(); ++i)
            if ((bytes[p.offset + i] & p.mask[i]) != (p.bytes[i] & p.mask[i])) return false;
    }
    return true;
}

RuleSet load_rules(std::string_view document, const KnowledgeBase& kb) {
    if (document.find_first_not_of(" \t\r\n") == std::string_view::npos) return {};
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::parse, std::string("rule document: ") + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::validation, "rule document must be an object");
    if (doc.contains("schema_version") && doc.at("schema_version") != 1)
        throw Error(ErrorCode::validation, "rule document schema_version " + doc.at("schema_version").dump() +
                                               " is not supported");
    if (!doc.contains("rules")) return {};
    if (!doc.at("rules").is_array()) throw Error(ErrorCode::validation, "rule document field 'rules' must be a list");
    std::vector<SignatureRule> rules;
    std::set<std::string> seen;
    for (const auto& node : doc.at("rules")) {
        auto rule = RuleParser(node, kb).parse();
        if (!seen.insert(rule.id).second)
            throw Error(ErrorCode::validation, "rule " + rule.id + ": field 'id' is duplicated");
        rules.push_back(std::move(rule));
    }
    return RuleSet(std::move(rules));
}

RuleSet load_rules_file(const std::filesystem::path& path, const KnowledgeBase& kb) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open rule file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return load_rules(text.str(), kb);
}

std::string_view default_rules_document() noexcept { return detail::default_rules_json; }

RuleSet load_default_rules(const KnowledgeBase& kb) { return load_rules(default_rules_document(), kb); }

namespace {

Detection make_detection(std::uint64_t sequence, const SignatureRule& rule,
                         const PacketRecord& record, const Endpoints& ends, std::vector<EvidencePacket> evidence) {
    Detection d;
    d.id = "det-" + detail::Fnv1a()
                        .add(rule.id)
                        .add(std::uint64_t{ends.attacker.value})
                        .add(std::uint64_t{ends.victim.value})
                        .add(record.timestamp.micros)
                        .add(sequence)
                        .hex();
    d.timestamp = record.timestamp;
    d.attacker_ip = ends.attacker;
    d.victim_ip = ends.victim;
    d.attack_type = rule.attack_type;
    d.rule_id = rule.id;
    d.technique_ids = rule.technique_ids;
    d.tactic_ids = rule.tactic_ids;
    d.severity = rule.severity;
    d.evidence = std::move(evidence);
    return d;
}

bool window_expired(const auto& window, Timestamp now) {
    if (window.fired_at && now.micros - window.fired_at->micros <= window.span_micros) return false;
    return now.micros - window.last_activity.micros > window.span_micros;
}

}  // namespace

std::vector<Detection> process_packet(EngineState& state, const RuleSet& rules, const PacketRecord& record,
                                      const std::vector<modbus::Frame>& frames) {
    std::vector<Detection> out;
    if (frames.empty()) return out;
    state.high_water_ = std::max(state.high_water_, record.timestamp);
    const auto t = record.timestamp;
    const std::size_t cap = state.options_.evidence_cap;

    for (std::size_t r = 0; r < rules.rules().size(); ++r) {
        const auto& rule = rules.rules()[r];
        if (!rule.window) {
            std::vector<EvidencePacket> evidence;
            std::optional<Endpoints> ends;
            for (const auto& frame : frames) {
                if (!frame_matches(rule.match, frame)) continue;
                if (!ends) ends = endpoints(record, frame.direction);
                if (evidence.size() < cap) evidence.push_back(evidence_of(record, frame));
            }
            if (!ends || ends->attacker == ends->victim) continue;
            out.push_back(make_detection(state.emitted_++, rule, record, *ends, std::move(evidence)));
            continue;
        }

        const auto span = Timestamp::from_seconds(rule.window->span).micros;
        for (const auto& frame : frames) {
            if (!frame_matches(rule.match, frame)) continue;
            const auto ends = endpoints(record, frame.direction);
            if (ends.attacker == ends.victim) continue;

            auto [it, inserted] = state.windows_.try_emplace({ends.attacker.value, r});
            auto& w = it->second;
            w.span_micros = span;
            w.last_activity = std::max(w.last_activity, t);
            if (w.fired_at && t.micros - w.fired_at->micros <= span) continue;  // silent after firing
            std::erase_if(w.keys, [&](const auto& kv) { return t.micros - kv.second.micros > span; });

            std::uint32_t key = 0;
            switch (rule.window->distinct_key) {
            case DistinctKey::unit_id: key = frame.header.unit_id; break;
            case DistinctKey::function_code: key = frame.pdu.function_code; break;
            case DistinctKey::dst_port: key = ends.victim_port; break;
            }
            auto& seen = w.keys[key];
            seen = std::max(seen, t);
            if (w.evidence.size() >= cap) w.evidence.erase(w.evidence.begin());
            if (cap > 0) w.evidence.push_back(evidence_of(record, frame));

            if (w.keys.size() >= rule.window->threshold) {
                out.push_back(make_detection(state.emitted_++, rule, record, ends, std::move(w.evidence)));
                w.keys.clear();
                w.evidence.clear();
                w.fired_at = t;
            }
        }
    }

    if (state.windows_.size() > state.options_.max_windows) {
        std::erase_if(state.windows_, [&](const auto& kv) { return window_expired(kv.second, state.high_water_); });
        std::size_t dropped = 0;
        while (state.windows_.size() > state.options_.max_windows) {
            auto oldest = std::min_element(state.windows_.begin(), state.windows_.end(), [](const auto& a, const auto& b) {
                return a.second.last_activity < b.second.last_activity;
            });
            state.windows_.erase(oldest);
            ++dropped;
        }
        if (dropped) {
            state.evicted_by_cap_ += dropped;
            spdlog::warn("signature engine: window cap {} reached, evicted {} oldest windows",
                         state.options_.max_windows, dropped);
        }
    }
    return out;
}

std::vector<Detection> flush(EngineState& state, Timestamp now) {
    state.high_water_ = std::max(state.high_water_, now);
    std::erase_if(state.windows_, [&](const auto& kv) { return window_expired(kv.second, now); });
    return {};
}

}  // namespace icshunt
