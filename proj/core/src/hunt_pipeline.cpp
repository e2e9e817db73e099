#include "icshunt/hunt_pipeline.hpp"
#include "icshunt/error.hpp"
#include "hashing.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

namespace icshunt {

HuntReport run_hunt(const std::vector<PacketRecord>& records, const RuleSet& rules, const KnowledgeBase& kb,
                    const TrainedModel& model, EventStore* store, const HuntOptions& options) {
    EngineOptions engine_options = options.engine;
    engine_options.server_ports = options.server_ports;
    EngineState state(engine_options);
    HypothesisTracker tracker(kb, model, options.correlator);
    HuntReport report;
    std::vector<std::string> hypothesis_order;

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return records[a].timestamp < records[b].timestamp; });

    for (auto i : order) {
        const auto& record = records[i];
        const auto frames = extract_modbus(record, options.server_ports);
        ++report.packets;
        report.frames += frames.size();
        for (auto& detection : process_packet(state, rules, record, frames)) {
            // Detection and hypothesis ids are content-derived, so replaying a
            // capture into the same store adds nothing.
            if (store && !store->find_detection(detection.id)) report.event_ids.push_back(store->append(detection));
            for (auto& hypothesis : tracker.observe(detection)) {
                if (store && store->hypothesis_versions(hypothesis.id) < hypothesis.version)
                    report.event_ids.push_back(store->append(hypothesis));
                if (std::find(hypothesis_order.begin(), hypothesis_order.end(), hypothesis.id) == hypothesis_order.end())
                    hypothesis_order.push_back(hypothesis.id);
            }
            report.detections.push_back(std::move(detection));
        }
    }
    if (!order.empty()) flush(state, records[order.back()].timestamp);
    for (const auto& id : hypothesis_order) report.hypotheses.push_back(tracker.hypotheses().at(id));
    spdlog::info("hunt: {} packets, {} modbus frames, {} detections, {} hypotheses", report.packets, report.frames,
                 report.detections.size(), report.hypotheses.size());
    return report;
}

TrainingOutcome run_training(const KnowledgeBase& kb, const TrainingRequest& request) {
    if (request.domain != kb.domain())
        throw Error(ErrorCode::validation, "training request domain does not match the knowledge base");
    auto dataset = build_dataset(kb, request.granularity, {request.noise, request.copies, request.seed});
    const auto excluded = remove_colliding_profiles(dataset);
    if (!excluded.empty())
        spdlog::info("training: excluded {} groups with colliding profiles", excluded.size());

    Dataset clean{dataset.granularity, dataset.feature_names, {}};
    std::set<std::string> seen;
    for (const auto& row : dataset.rows)  // clean rows come first for each label
        if (seen.insert(row.label).second) clean.rows.push_back(row);

    Dataset train_set = dataset;
    Dataset test_set = clean;
    if (request.copies > 0) std::tie(train_set, test_set) = split_dataset(dataset, request.test_fraction, request.seed);

    auto hp = request.hyperparams;
    hp.seed = request.seed;
    auto result = train(train_set, hp);

    TrainingOutcome outcome;
    auto& run = outcome.run;
    run.id = "run-" + detail::Fnv1a()
                          .add(to_string(request.domain))
                          .add(to_string(request.granularity))
                          .add(request.seed)
                          .add(std::to_string(request.noise))
                          .add(std::uint64_t{request.copies})
                          .hex();
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    run.created_at = Timestamp{std::chrono::duration_cast<std::chrono::microseconds>(now).count()};
    run.domain = request.domain;
    run.granularity = request.granularity;
    run.seed = request.seed;
    run.noise = request.noise;
    run.copies = request.copies;
    run.classes = result.model.classes.size();
    run.features = result.model.feature_count();
    run.train_rows = train_set.rows.size();
    run.test_rows = test_set.rows.size();
    run.epochs = result.report.epochs_run;
    run.final_loss = result.report.final_loss;
    run.clean_accuracy = evaluate(result.model, clean);
    run.test_accuracy = test_set.rows.empty() ? run.clean_accuracy : evaluate(result.model, test_set);
    run.excluded_groups = excluded;
    outcome.model = std::move(result.model);
    return outcome;
}

}  // namespace icshunt
