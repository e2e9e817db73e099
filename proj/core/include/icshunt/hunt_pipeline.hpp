#pragma once

#include "icshunt/attack_knowledge.hpp"
#include "icshunt/capture_ingest.hpp"
#include "icshunt/event_store.hpp"
#include "icshunt/hunt_classifier.hpp"
#include "icshunt/hypothesis_engine.hpp"
#include "icshunt/records.hpp"
#include "icshunt/signature_engine.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace icshunt {

struct HuntOptions {
    std::set<std::uint16_t> server_ports = default_modbus_ports;
    EngineOptions engine;
    CorrelatorOptions correlator;
};

struct HuntReport {
    std::size_t packets = 0;
    std::size_t frames = 0;
    std::vector<Detection> detections;  // in emission order
    std::vector<Hypothesis> hypotheses;  // latest version of each, by creation order
    std::vector<std::uint64_t> event_ids;  // store ids of the events appended by this run, in order
};

/// Runs the detection engine over time-ordered records and feeds every
/// detection to the hypothesis tracker. When `store` is set, detections and
/// each hypothesis version are appended as they are produced, skipping ids
/// and versions the store already holds.
HuntReport run_hunt(const std::vector<PacketRecord>& records, const RuleSet& rules, const KnowledgeBase& kb,
                    const TrainedModel& model, EventStore* store = nullptr, const HuntOptions& options = {});

struct TrainingRequest {
    Domain domain = Domain::ics;
    Granularity granularity = Granularity::technique;
    std::uint64_t seed = 42;
    double noise = 0.0;
    std::size_t copies = 0;
    double test_fraction = 0.2;  // used only when copies > 0
    ModelHyperparams hyperparams;
};

struct TrainingOutcome {
    TrainedModel model;
    ModelRun run;
};

/// Builds the dataset, drops groups with colliding profiles, trains, and
/// evaluates on the clean profiles and on a held-out split of the copies.
TrainingOutcome run_training(const KnowledgeBase& kb, const TrainingRequest& request);

}  // namespace icshunt
