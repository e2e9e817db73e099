#include "oracles.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <tuple>

#include <nlohmann/json.hpp>

namespace icshunt::testkit {

using nlohmann::json;

std::optional<std::string> hamming_nearest(const Dataset& rows, const TtpVector& query) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    std::set<std::string> labels;
    for (const auto& row : rows.rows) {
        std::size_t d = 0;
        for (std::size_t i = 0; i < query.bits.size(); ++i) d += row.vector.bits[i] != query.bits[i];
        if (d < best) {
            best = d;
            labels = {row.label};
        } else if (d == best) {
            labels.insert(row.label);
        }
    }
    if (labels.size() != 1) return std::nullopt;
    return *labels.begin();
}

std::set<std::string> superset_scan(const KnowledgeBase& kb, const TtpVector& observed) {
    const auto names = kb.feature_names(observed.granularity);
    std::set<std::string> wanted;
    for (std::size_t i = 0; i < observed.bits.size(); ++i)
        if (observed.bits[i]) wanted.insert(names[i]);

    std::set<std::string> out;
    for (const auto& [id, group] : kb.groups()) {
        std::set<std::string> has;
        for (const auto& t : group.technique_ids) {
            if (observed.granularity == Granularity::technique) {
                has.insert(t);
            } else {
                for (const auto& tactic : kb.technique(t).tactic_ids) has.insert(tactic);
            }
        }
        if (std::includes(has.begin(), has.end(), wanted.begin(), wanted.end())) out.insert(id);
    }
    return out;
}

namespace {

struct Occurrence {
    std::size_t packet;
    std::size_t frame;
    Timestamp time;
    std::uint32_t key;
    Ipv4Address victim;
    EvidencePacket evidence;
};

EvidencePacket evidence_for(const PacketRecord& r, const modbus::Frame& f) {
    return {r.timestamp, r.src_ip, r.src_port, r.dst_ip, r.dst_port, f.header.unit_id, f.pdu.function_code,
            f.direction};
}

Detection detection_for(const SignatureRule& rule, Timestamp t, Ipv4Address attacker, Ipv4Address victim,
                        std::vector<EvidencePacket> evidence) {
    Detection d;
    d.timestamp = t;
    d.attacker_ip = attacker;
    d.victim_ip = victim;
    d.attack_type = rule.attack_type;
    d.rule_id = rule.id;
    d.technique_ids = rule.technique_ids;
    d.tactic_ids = rule.tactic_ids;
    d.severity = rule.severity;
    d.evidence = std::move(evidence);
    return d;
}

}  // namespace

std::vector<Detection> replay_detections(const RuleSet& rules, const std::vector<PacketRecord>& records,
                                         const std::set<std::uint16_t>& server_ports, std::size_t evidence_cap) {
    std::vector<std::vector<modbus::Frame>> frames;
    frames.reserve(records.size());
    for (const auto& r : records) frames.push_back(extract_modbus(r, server_ports));

    // (packet, rule, frame) orders detections the way a single pass emits them.
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t, Detection>> found;

    for (std::size_t ri = 0; ri < rules.rules().size(); ++ri) {
        const auto& rule = rules.rules()[ri];
        if (!rule.window) {
            for (std::size_t p = 0; p < records.size(); ++p) {
                const auto& r = records[p];
                std::vector<EvidencePacket> evidence;
                std::optional<std::size_t> first;
                for (std::size_t f = 0; f < frames[p].size(); ++f) {
                    if (!frame_matches(rule.match, frames[p][f])) continue;
                    if (!first) first = f;
                    if (evidence.size() < evidence_cap) evidence.push_back(evidence_for(r, frames[p][f]));
                }
                if (!first) continue;
                const bool response = frames[p][*first].direction == modbus::Direction::response;
                const auto attacker = response ? r.dst_ip : r.src_ip;
                const auto victim = response ? r.src_ip : r.dst_ip;
                if (attacker == victim) continue;
                found.emplace_back(p, ri, 0, detection_for(rule, r.timestamp, attacker, victim, std::move(evidence)));
            }
            continue;
        }

        const auto span = Timestamp::from_seconds(rule.window->span).micros;
        std::map<std::uint32_t, std::vector<Occurrence>> by_attacker;
        for (std::size_t p = 0; p < records.size(); ++p) {
            const auto& r = records[p];
            for (std::size_t f = 0; f < frames[p].size(); ++f) {
                const auto& frame = frames[p][f];
                if (!frame_matches(rule.match, frame)) continue;
                const bool response = frame.direction == modbus::Direction::response;
                const auto attacker = response ? r.dst_ip : r.src_ip;
                const auto victim = response ? r.src_ip : r.dst_ip;
                const auto victim_port = response ? r.src_port : r.dst_port;
                if (attacker == victim) continue;
                std::uint32_t key = 0;
                switch (rule.window->distinct_key) {
                case DistinctKey::unit_id: key = frame.header.unit_id; break;
                case DistinctKey::function_code: key = frame.pdu.function_code; break;
                case DistinctKey::dst_port: key = victim_port; break;
                }
                by_attacker[attacker.value].push_back({p, f, r.timestamp, key, victim, evidence_for(r, frame)});
            }
        }

        for (const auto& [attacker, occ] : by_attacker) {
            // An occurrence counts towards a later one when it is inside the
            // span, after the last firing and not itself muted by a firing.
            std::vector<bool> muted(occ.size(), false);
            std::optional<std::size_t> last_fire;
            for (std::size_t k = 0; k < occ.size(); ++k) {
                if (last_fire && occ[k].time.micros - occ[*last_fire].time.micros <= span) {
                    muted[k] = true;
                    continue;
                }
                const std::size_t begin = last_fire ? *last_fire + 1 : 0;
                std::set<std::uint32_t> keys;
                for (std::size_t j = begin; j <= k; ++j)
                    if (!muted[j] && occ[k].time.micros - occ[j].time.micros <= span) keys.insert(occ[j].key);
                if (keys.size() < rule.window->threshold) continue;

                std::vector<EvidencePacket> evidence;
                for (std::size_t j = begin; j <= k; ++j)
                    if (!muted[j]) evidence.push_back(occ[j].evidence);
                if (evidence.size() > evidence_cap)
                    evidence.erase(evidence.begin(), evidence.end() - static_cast<std::ptrdiff_t>(evidence_cap));
                found.emplace_back(occ[k].packet, ri, occ[k].frame,
                                   detection_for(rule, occ[k].time, Ipv4Address{attacker}, occ[k].victim,
                                                 std::move(evidence)));
                last_fire = k;
            }
        }
    }

    std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
        return std::tie(std::get<0>(a), std::get<1>(a), std::get<2>(a)) <
               std::tie(std::get<0>(b), std::get<1>(b), std::get<2>(b));
    });
    std::vector<Detection> out;
    for (auto& entry : found) out.push_back(std::move(std::get<3>(entry)));
    return out;
}

QueryResult scan_query(const std::vector<StoredEvent>& events, const QueryFilter& filter) {
    std::map<std::string, std::uint64_t> latest_hypothesis_event;
    for (const auto& e : events)
        if (e.kind == EventKind::hypothesis) {
            const auto id = json::parse(e.payload).at("id").get<std::string>();
            latest_hypothesis_event[id] = std::max(latest_hypothesis_event[id], e.id);
        }

    std::vector<StoredEvent> matched;
    for (const auto& e : events) {
        const auto doc = json::parse(e.payload);
        if (filter.kind && e.kind != *filter.kind) continue;
        if (filter.from && e.created_at < *filter.from) continue;
        if (filter.to && e.created_at > *filter.to) continue;
        if (filter.attacker_ip &&
            (!doc.contains("attacker_ip") || doc.at("attacker_ip").get<std::string>() != filter.attacker_ip->to_string()))
            continue;
        if (filter.attack_type && (e.kind != EventKind::detection || doc.at("attack_type") != *filter.attack_type))
            continue;
        if (filter.status &&
            (e.kind != EventKind::hypothesis || doc.at("status") != std::string(to_string(*filter.status))))
            continue;
        if (filter.latest_versions_only && e.kind == EventKind::hypothesis &&
            latest_hypothesis_event.at(doc.at("id").get<std::string>()) != e.id)
            continue;
        matched.push_back(e);
    }
    std::sort(matched.begin(), matched.end(), [](const auto& a, const auto& b) { return a.id > b.id; });

    QueryResult result;
    result.total = matched.size();
    for (std::size_t i = filter.offset; i < matched.size() && result.events.size() < filter.limit; ++i)
        result.events.push_back(matched[i]);
    return result;
}

}  // namespace icshunt::testkit
