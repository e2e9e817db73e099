#include "json_records.hpp"
#include "icshunt/error.hpp"

namespace icshunt {

using nlohmann::json;

namespace detail {

namespace {

json time_json(Timestamp t) { return t.micros; }

Timestamp time_from(const json& j, const char* key) { return Timestamp{j.at(key).get<std::int64_t>()}; }

Ipv4Address ip_from(const json& j, const char* key) {
    auto ip = Ipv4Address::parse(j.at(key).get<std::string>());
    if (!ip) throw Error(ErrorCode::validation, std::string("field '") + key + "' is not an IPv4 address");
    return *ip;
}

modbus::Direction direction_from(const std::string& text) {
    if (text == "request") return modbus::Direction::request;
    if (text == "response") return modbus::Direction::response;
    if (text == "unknown") return modbus::Direction::unknown;
    throw Error(ErrorCode::validation, "unknown direction " + text);
}

template <typename Fn>
auto guarded(const char* what, Fn&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, std::string(what) + " record: " + e.what());
    }
}

}  // namespace

json detection_json(const Detection& d) {
    json evidence = json::array();
    for (const auto& e : d.evidence)
        evidence.push_back({{"timestamp_us", time_json(e.timestamp)},
                            {"src_ip", e.src_ip.to_string()},
                            {"src_port", e.src_port},
                            {"dst_ip", e.dst_ip.to_string()},
                            {"dst_port", e.dst_port},
                            {"unit_id", e.unit_id},
                            {"function_code", e.function_code},
                            {"direction", modbus::to_string(e.direction)}});
    return {{"schema_version", record_schema_version},
            {"id", d.id},
            {"timestamp_us", time_json(d.timestamp)},
            {"timestamp", d.timestamp.to_iso8601()},
            {"attacker_ip", d.attacker_ip.to_string()},
            {"victim_ip", d.victim_ip.to_string()},
            {"attack_type", d.attack_type},
            {"rule_id", d.rule_id},
            {"technique_ids", d.technique_ids},
            {"tactic_ids", d.tactic_ids},
            {"severity", to_string(d.severity)},
            {"evidence", evidence}};
}

Detection detection_from(const json& j) {
    return guarded("detection", [&] {
        Detection d;
        d.id = j.at("id").get<std::string>();
        d.timestamp = time_from(j, "timestamp_us");
        d.attacker_ip = ip_from(j, "attacker_ip");
        d.victim_ip = ip_from(j, "victim_ip");
        d.attack_type = j.at("attack_type").get<std::string>();
        d.rule_id = j.at("rule_id").get<std::string>();
        d.technique_ids = j.at("technique_ids").get<std::vector<std::string>>();
        d.tactic_ids = j.at("tactic_ids").get<std::vector<std::string>>();
        auto severity = parse_severity(j.at("severity").get<std::string>());
        if (!severity) throw Error(ErrorCode::validation, "detection record: unknown severity");
        d.severity = *severity;
        for (const auto& e : j.at("evidence"))
            d.evidence.push_back({time_from(e, "timestamp_us"), ip_from(e, "src_ip"), e.at("src_port").get<std::uint16_t>(),
                                  ip_from(e, "dst_ip"), e.at("dst_port").get<std::uint16_t>(),
                                  e.at("unit_id").get<std::uint8_t>(), e.at("function_code").get<std::uint8_t>(),
                                  direction_from(e.at("direction").get<std::string>())});
        if (d.id.empty()) throw Error(ErrorCode::validation, "detection record: empty id");
        return d;
    });
}

json hypothesis_json(const Hypothesis& h) {
    json candidates = json::array();
    for (const auto& c : h.candidates)
        candidates.push_back({{"group_id", c.group_id}, {"score", c.score}, {"in_candidate_set", c.in_candidate_set}});
    json predicted = json::array();
    for (const auto& p : h.predicted_future)
        predicted.push_back({{"technique_id", p.technique_id}, {"tactic_id", p.tactic_id}});
    return {{"schema_version", record_schema_version},
            {"id", h.id},
            {"version", h.version},
            {"attacker_ip", h.attacker_ip.to_string()},
            {"victim_ip", h.victim_ip.to_string()},
            {"detection_ids", h.detection_ids},
            {"observed_techniques", h.observed_techniques},
            {"observed_tactics", h.observed_tactics},
            {"weak_techniques", h.weak_techniques},
            {"candidates", candidates},
            {"predicted_future", predicted},
            {"status", to_string(h.status)},
            {"status_reason", h.status_reason},
            {"narrative", h.narrative},
            {"created_at_us", time_json(h.created_at)},
            {"updated_at_us", time_json(h.updated_at)}};
}

Hypothesis hypothesis_from(const json& j) {
    return guarded("hypothesis", [&] {
        Hypothesis h;
        h.id = j.at("id").get<std::string>();
        h.version = j.at("version").get<std::uint64_t>();
        h.attacker_ip = ip_from(j, "attacker_ip");
        h.victim_ip = ip_from(j, "victim_ip");
        h.detection_ids = j.at("detection_ids").get<std::vector<std::string>>();
        h.observed_techniques = j.at("observed_techniques").get<std::set<std::string>>();
        h.observed_tactics = j.at("observed_tactics").get<std::set<std::string>>();
        h.weak_techniques = j.at("weak_techniques").get<std::set<std::string>>();
        for (const auto& c : j.at("candidates"))
            h.candidates.push_back({c.at("group_id").get<std::string>(), c.at("score").get<double>(),
                                    c.at("in_candidate_set").get<bool>()});
        for (const auto& p : j.at("predicted_future"))
            h.predicted_future.push_back({p.at("technique_id").get<std::string>(), p.at("tactic_id").get<std::string>()});
        auto status = parse_hypothesis_status(j.at("status").get<std::string>());
        if (!status) throw Error(ErrorCode::validation, "hypothesis record: unknown status");
        h.status = *status;
        h.status_reason = j.at("status_reason").get<std::string>();
        h.narrative = j.at("narrative").get<std::string>();
        h.created_at = time_from(j, "created_at_us");
        h.updated_at = time_from(j, "updated_at_us");
        if (h.id.empty()) throw Error(ErrorCode::validation, "hypothesis record: empty id");
        return h;
    });
}

json model_run_json(const ModelRun& r) {
    return {{"schema_version", record_schema_version},
            {"id", r.id},
            {"created_at_us", time_json(r.created_at)},
            {"domain", to_string(r.domain)},
            {"granularity", to_string(r.granularity)},
            {"seed", r.seed},
            {"noise", r.noise},
            {"copies", r.copies},
            {"classes", r.classes},
            {"features", r.features},
            {"train_rows", r.train_rows},
            {"test_rows", r.test_rows},
            {"epochs", r.epochs},
            {"final_loss", r.final_loss},
            {"clean_accuracy", r.clean_accuracy},
            {"test_accuracy", r.test_accuracy},
            {"excluded_groups", r.excluded_groups}};
}

ModelRun model_run_from(const json& j) {
    return guarded("model run", [&] {
        ModelRun r;
        r.id = j.at("id").get<std::string>();
        r.created_at = time_from(j, "created_at_us");
        auto domain = parse_domain(j.at("domain").get<std::string>());
        auto granularity = parse_granularity(j.at("granularity").get<std::string>());
        if (!domain || !granularity) throw Error(ErrorCode::validation, "model run record: bad domain or granularity");
        r.domain = *domain;
        r.granularity = *granularity;
        r.seed = j.at("seed").get<std::uint64_t>();
        r.noise = j.at("noise").get<double>();
        r.copies = j.at("copies").get<std::size_t>();
        r.classes = j.at("classes").get<std::size_t>();
        r.features = j.at("features").get<std::size_t>();
        r.train_rows = j.at("train_rows").get<std::size_t>();
        r.test_rows = j.at("test_rows").get<std::size_t>();
        r.epochs = j.at("epochs").get<std::size_t>();
        r.final_loss = j.at("final_loss").get<double>();
        r.clean_accuracy = j.at("clean_accuracy").get<double>();
        r.test_accuracy = j.at("test_accuracy").get<double>();
        r.excluded_groups = j.at("excluded_groups").get<std::vector<std::string>>();
        return r;
    });
}

}  // namespace detail

namespace {

json parse(std::string_view text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::validation, std::string(what) + " record is not JSON: " + e.what());
    }
}

}  // namespace

std::string to_json(const Detection& detection) { return detail::detection_json(detection).dump(); }
std::string to_json(const Hypothesis& hypothesis) { return detail::hypothesis_json(hypothesis).dump(); }
std::string to_json(const ModelRun& run) { return detail::model_run_json(run).dump(); }

Detection detection_from_json(std::string_view text) { return detail::detection_from(parse(text, "detection")); }
Hypothesis hypothesis_from_json(std::string_view text) { return detail::hypothesis_from(parse(text, "hypothesis")); }
ModelRun model_run_from_json(std::string_view text) { return detail::model_run_from(parse(text, "model run")); }

}  // namespace icshunt
