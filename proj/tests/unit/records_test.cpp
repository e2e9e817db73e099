#include "icshunt/error.hpp"
#include "icshunt/records.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

using namespace icshunt;

namespace {

Detection sample_detection() {
    Detection d;
    d.id = "det-0123456789abcdef";
    d.timestamp = Timestamp::from_parts(1609459227, 644638);
    d.attacker_ip = *Ipv4Address::parse("192.168.56.101");
    d.victim_ip = *Ipv4Address::parse("192.168.56.20");
    d.attack_type = "Unauthorized Write";
    d.rule_id = "MB-WRITE";
    d.technique_ids = {"T0836", "T0855"};
    d.tactic_ids = {"TA0106"};
    d.severity = Severity::high;
    d.evidence.push_back({d.timestamp, d.attacker_ip, 40000, d.victim_ip, 5300, 1, 5, modbus::Direction::request});
    return d;
}

Hypothesis sample_hypothesis() {
    Hypothesis h;
    h.id = "hyp-1";
    h.version = 3;
    h.attacker_ip = *Ipv4Address::parse("192.168.56.101");
    h.victim_ip = *Ipv4Address::parse("192.168.56.20");
    h.detection_ids = {"det-a", "det-b"};
    h.observed_techniques = {"T0841"};
    h.observed_tactics = {"TA0102"};
    h.weak_techniques = {"T0846"};
    h.candidates = {{"G0034", 0.25, true}, {"G0032", -1.5, false}};
    h.predicted_future = {{"T0817", "TA0108"}};
    h.status = HypothesisStatus::validated;
    h.status_reason = "T0817 was predicted";
    h.narrative = "Sandworm uses ...";
    h.created_at = Timestamp::from_parts(100, 1);
    h.updated_at = Timestamp::from_parts(200, 2);
    return h;
}

}  // namespace

TEST(Records, DetectionRoundTrip) {
    const auto d = sample_detection();
    const auto text = to_json(d);
    EXPECT_EQ(detection_from_json(text), d);
    const auto doc = nlohmann::json::parse(text);
    EXPECT_EQ(doc.at("schema_version"), 1);
    EXPECT_EQ(doc.at("timestamp"), "2021-01-01T00:00:27.644638Z");
    EXPECT_EQ(doc.at("attacker_ip"), "192.168.56.101");
}

TEST(Records, HypothesisRoundTrip) {
    const auto h = sample_hypothesis();
    EXPECT_EQ(hypothesis_from_json(to_json(h)), h);
}

TEST(Records, ModelRunRoundTrip) {
    ModelRun run;
    run.id = "run-1";
    run.created_at = Timestamp::from_parts(5, 0);
    run.domain = Domain::enterprise;
    run.noise = 0.1;
    run.copies = 50;
    run.classes = 160;
    run.test_accuracy = 0.94;
    run.excluded_groups = {"G1", "G2"};
    EXPECT_EQ(model_run_from_json(to_json(run)), run);
}

TEST(Records, ParsersRejectOtherDocuments) {
    EXPECT_THROW(detection_from_json("{}"), Error);
    EXPECT_THROW(detection_from_json("not json"), Error);
    EXPECT_THROW(hypothesis_from_json(to_json(sample_detection())), Error);
    auto doc = nlohmann::json::parse(to_json(sample_detection()));
    doc["attacker_ip"] = "999.1.1.1";
    EXPECT_THROW(detection_from_json(doc.dump()), Error);
    doc = nlohmann::json::parse(to_json(sample_hypothesis()));
    doc["status"] = "maybe";
    EXPECT_THROW(hypothesis_from_json(doc.dump()), Error);
}
