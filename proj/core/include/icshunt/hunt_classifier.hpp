#pragma once

#include "icshunt/attack_knowledge.hpp"

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace icshunt {

struct ModelHyperparams {
    double c = 1.0;  // hinge weight; the L2 penalty is 1 / (c * training rows)
    std::size_t epochs = 40;
    double learning_rate = 3.0;
    std::uint64_t seed = 1;
};

/// One-vs-rest linear classifiers; row i of `weights` belongs to classes[i].
struct TrainedModel {
    Granularity granularity = Granularity::technique;
    std::vector<std::string> feature_names;
    std::vector<std::string> classes;  // sorted group ids
    std::vector<std::vector<double>> weights;
    std::vector<double> biases;

    std::size_t feature_count() const noexcept { return feature_names.size(); }
    bool operator==(const TrainedModel&) const = default;
};

struct TrainingReport {
    std::size_t epochs_run = 0;
    double final_loss = 0.0;  // regularised hinge objective averaged over classes
    std::size_t rows = 0;
};

struct TrainResult {
    TrainedModel model;
    TrainingReport report;
};

struct ScoredGroup {
    std::string group_id;
    double score = 0.0;  // signed margin of the group's classifier
    bool operator==(const ScoredGroup&) const = default;
};

struct Attribution {
    std::vector<ScoredGroup> ranking;  // descending score, ties by group id
    bool low_confidence = false;       // top margin below zero

    const std::string& top() const { return ranking.front().group_id; }
};

/// Hinge loss with L2 penalty, minimised by seeded stochastic
/// subgradient descent. Throws insufficient_classes, dimension or validation.
TrainResult train(const Dataset& dataset, const ModelHyperparams& hp = {});

/// Throws Error{dimension} when the vector length differs from the model.
Attribution predict_ranked(const TrainedModel& model, const TtpVector& vector);

/// Groups whose profile contains every set bit of `observed`.
/// Throws empty_observation for an all-zero vector and dimension when the
/// vector does not fit the knowledge base.
std::set<std::string> candidate_groups(const KnowledgeBase& kb, const TtpVector& observed);

/// Top-1 accuracy. Throws evaluation on an empty set and dimension when the
/// features differ from the model's.
double evaluate(const TrainedModel& model, const Dataset& test);

/// Stratified split: every label keeps at least one training row.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double test_fraction, std::uint64_t seed);

/// Versioned text document; weights are written with round-trip precision.
std::string save_model(const TrainedModel& model);
TrainedModel load_model(std::string_view text);
void save_model_file(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model_file(const std::filesystem::path& path);

}  // namespace icshunt
