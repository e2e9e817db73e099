#pragma once

#include "icshunt/attack_knowledge.hpp"
#include "icshunt/hypothesis_engine.hpp"
#include "icshunt/net.hpp"
#include "icshunt/signature_engine.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace icshunt {

inline constexpr int record_schema_version = 1;

/// Summary of one classifier training job.
struct ModelRun {
    std::string id;
    Timestamp created_at;
    Domain domain = Domain::ics;
    Granularity granularity = Granularity::technique;
    std::uint64_t seed = 0;
    double noise = 0.0;
    std::size_t copies = 0;
    std::size_t classes = 0;
    std::size_t features = 0;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    std::size_t epochs = 0;
    double final_loss = 0.0;
    double clean_accuracy = 0.0;  // on the clean group profiles
    double test_accuracy = 0.0;   // on the held-out split (clean accuracy when there is none)
    std::vector<std::string> excluded_groups;  // dropped for colliding profiles
    bool operator==(const ModelRun&) const = default;
};

/// Compact JSON documents. Parsers throw Error{validation} on a document that
/// does not describe the record.
std::string to_json(const Detection& detection);
std::string to_json(const Hypothesis& hypothesis);
std::string to_json(const ModelRun& run);
Detection detection_from_json(std::string_view text);
Hypothesis hypothesis_from_json(std::string_view text);
ModelRun model_run_from_json(std::string_view text);

}  // namespace icshunt
