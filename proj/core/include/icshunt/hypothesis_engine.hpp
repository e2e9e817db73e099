#pragma once

#include "icshunt/attack_knowledge.hpp"
#include "icshunt/hunt_classifier.hpp"
#include "icshunt/net.hpp"
#include "icshunt/signature_engine.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace icshunt {

enum class HypothesisStatus { generated, validated, rejected };

std::string_view to_string(HypothesisStatus status) noexcept;
std::optional<HypothesisStatus> parse_hypothesis_status(std::string_view text) noexcept;

struct PredictedTechnique {
    std::string technique_id;
    std::string tactic_id;
    bool operator==(const PredictedTechnique&) const = default;
};

struct Candidate {
    std::string group_id;
    double score = 0.0;
    bool in_candidate_set = false;  // false for groups ranked only by the classifier
    bool operator==(const Candidate&) const = default;
};

struct Hypothesis {
    std::string id;
    std::uint64_t version = 1;
    Ipv4Address attacker_ip;
    Ipv4Address victim_ip;
    std::vector<std::string> detection_ids;
    std::set<std::string> observed_techniques;
    std::set<std::string> observed_tactics;
    std::set<std::string> weak_techniques;  // from tactic-level detections
    std::vector<Candidate> candidates;      // candidate set first, then the rest
    std::vector<PredictedTechnique> predicted_future;
    HypothesisStatus status = HypothesisStatus::generated;
    std::string status_reason;
    std::string narrative;
    Timestamp created_at;
    Timestamp updated_at;

    /// Group ids with in_candidate_set, in ranking order.
    std::vector<std::string> active_candidates() const;
    bool operator==(const Hypothesis&) const = default;
};

/// Union of the candidates' techniques minus `observed`, each paired with its
/// earliest tactic, ordered by tactic matrix column then technique id.
std::vector<PredictedTechnique> predict_future(const KnowledgeBase& kb, const std::vector<std::string>& candidates,
                                               const std::set<std::string>& observed_techniques);

/// Builds a hypothesis from detections. The candidate set is the superset
/// match at the model's granularity ordered by classifier margin; when no
/// group matches, the classifier's top-ranked group stands in.
Hypothesis generate(const std::vector<Detection>& detections, const KnowledgeBase& kb, const TrainedModel& model);

/// A new technique that was predicted validates the hypothesis and narrows
/// the candidates; a new technique outside every candidate's profile rejects
/// it; anything else leaves the status unchanged.
Hypothesis validate(const Hypothesis& hypothesis, const Detection& detection, const KnowledgeBase& kb,
                    const TrainedModel& model);

struct CorrelatorOptions {
    double window_seconds = 3600.0;
};

/// Keeps one open hypothesis per (attacker, victim) pair and routes each
/// detection to generate or validate. A rejected hypothesis is closed and a
/// fresh one is generated from the detection that rejected it.
class HypothesisTracker {
public:
    HypothesisTracker(const KnowledgeBase& kb, const TrainedModel& model, CorrelatorOptions options = {});

    /// Returns the hypothesis versions created or changed by the detection.
    std::vector<Hypothesis> observe(const Detection& detection);

    const std::map<std::string, Hypothesis>& hypotheses() const noexcept { return hypotheses_; }

private:
    const KnowledgeBase& kb_;
    const TrainedModel& model_;
    CorrelatorOptions options_;
    std::map<std::string, Hypothesis> hypotheses_;
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::string> open_;
};

}  // namespace icshunt
