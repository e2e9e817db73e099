#include "icshunt/hunt_classifier.hpp"
#include "icshunt/error.hpp"
#include "random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace icshunt {

namespace {

using SparseRow = std::vector<std::uint32_t>;  // indices of set bits

SparseRow sparse(const TtpVector& v) {
    SparseRow out;
    for (std::size_t i = 0; i < v.bits.size(); ++i)
        if (v.bits[i]) out.push_back(static_cast<std::uint32_t>(i));
    return out;
}

double dot(const std::vector<double>& w, const SparseRow& x) {
    double sum = 0.0;
    for (auto i : x) sum += w[i];
    return sum;
}

void check_hyperparams(const ModelHyperparams& hp) {
    if (!(hp.c > 0) || !(hp.learning_rate > 0) || hp.epochs == 0)
        throw Error(ErrorCode::validation, "hyperparameters must be positive");
}

// Trains one binary classifier. The weight vector is kept as scale * v so the
// L2 shrink step costs O(1) instead of O(features).
double train_binary(const std::vector<SparseRow>& rows, const std::vector<int>& y, std::size_t features,
                    const ModelHyperparams& hp, detail::Rng& rng, std::vector<double>& w, double& b) {
    const double n = static_cast<double>(rows.size());
    const double lambda = 1.0 / (hp.c * n);

    std::vector<double> v(features, 0.0);
    double scale = 1.0;
    b = 0.0;
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);

    // The returned weights average the iterates of the second half of
    // training, which damps the noise of single-sample steps.
    std::vector<double> sum_w(features, 0.0);
    double sum_b = 0.0;
    std::size_t averaged = 0;
    for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
        detail::shuffle(order, rng);
        const double eta = hp.learning_rate / (1.0 + static_cast<double>(epoch));
        const double shrink = 1.0 - eta * lambda;
        for (auto i : order) {
            const double margin = y[i] * (scale * dot(v, rows[i]) + b);
            scale *= shrink > 0 ? shrink : 1e-12;
            if (margin < 1.0) {
                const double step = eta * y[i];
                for (auto j : rows[i]) v[j] += step / scale;
                b += step;
            }
            if (scale < 1e-9) {
                for (auto& value : v) value *= scale;
                scale = 1.0;
            }
        }
        if (2 * (epoch + 1) > hp.epochs) {
            for (std::size_t j = 0; j < features; ++j) sum_w[j] += v[j] * scale;
            sum_b += b;
            ++averaged;
        }
    }
    w.resize(features);
    for (std::size_t j = 0; j < features; ++j) w[j] = sum_w[j] / static_cast<double>(averaged);
    b = sum_b / static_cast<double>(averaged);

    double loss = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double hinge = std::max(0.0, 1.0 - y[i] * (dot(w, rows[i]) + b));
        loss += hinge;
    }
    double norm = 0.0;
    for (double value : w) norm += value * value;
    return loss / n + 0.5 * lambda * norm;
}

void check_features(const TrainedModel& model, Granularity granularity, const std::vector<std::string>& names) {
    if (granularity != model.granularity || names != model.feature_names)
        throw Error(ErrorCode::dimension, "dataset features do not match the model");
}

}  // namespace

TrainResult train(const Dataset& dataset, const ModelHyperparams& hp) {
    check_hyperparams(hp);
    const auto classes = dataset.labels();
    if (classes.size() < 2)
        throw Error(ErrorCode::insufficient_classes,
                    "training needs at least 2 classes, dataset has " + std::to_string(classes.size()));
    const std::size_t features = dataset.feature_names.size();
    if (features == 0) throw Error(ErrorCode::dimension, "dataset vectors have zero length");

    std::vector<SparseRow> rows;
    rows.reserve(dataset.rows.size());
    for (const auto& row : dataset.rows) {
        if (row.vector.size() != features)
            throw Error(ErrorCode::dimension, "row for " + row.label + " has " + std::to_string(row.vector.size()) +
                                                  " features, expected " + std::to_string(features));
        rows.push_back(sparse(row.vector));
    }

    TrainResult result;
    auto& model = result.model;
    model.granularity = dataset.granularity;
    model.feature_names = dataset.feature_names;
    model.classes = classes;
    model.weights.resize(classes.size());
    model.biases.resize(classes.size());

    double total_loss = 0.0;
    std::vector<int> y(rows.size());
    for (std::size_t c = 0; c < classes.size(); ++c) {
        for (std::size_t i = 0; i < rows.size(); ++i) y[i] = dataset.rows[i].label == classes[c] ? 1 : -1;
        // Each class gets its own stream so results do not depend on class order.
        detail::Rng rng(hp.seed * 0x9E3779B97F4A7C15ULL + c);
        total_loss += train_binary(rows, y, features, hp, rng, model.weights[c], model.biases[c]);
    }
    result.report = {hp.epochs, total_loss / static_cast<double>(classes.size()), rows.size()};
    return result;
}

Attribution predict_ranked(const TrainedModel& model, const TtpVector& vector) {
    if (vector.size() != model.feature_count())
        throw Error(ErrorCode::dimension, "vector has " + std::to_string(vector.size()) + " features, model expects " +
                                              std::to_string(model.feature_count()));
    const auto x = sparse(vector);
    Attribution out;
    out.ranking.reserve(model.classes.size());
    for (std::size_t c = 0; c < model.classes.size(); ++c)
        out.ranking.push_back({model.classes[c], dot(model.weights[c], x) + model.biases[c]});
    std::sort(out.ranking.begin(), out.ranking.end(), [](const ScoredGroup& a, const ScoredGroup& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.group_id < b.group_id;
    });
    out.low_confidence = out.ranking.empty() || out.ranking.front().score < 0.0;
    return out;
}

std::set<std::string> candidate_groups(const KnowledgeBase& kb, const TtpVector& observed) {
    if (observed.size() != kb.feature_count(observed.granularity))
        throw Error(ErrorCode::dimension, "observed vector does not fit the knowledge base");
    if (!observed.any()) throw Error(ErrorCode::empty_observation, "observed vector has no set bits");
    std::set<std::string> out;
    for (const auto& [id, group] : kb.groups()) {
        const auto profile = group_profile(kb, id, observed.granularity);
        bool superset = true;
        for (std::size_t i = 0; i < observed.size() && superset; ++i)
            if (observed.bits[i] && !profile.bits[i]) superset = false;
        if (superset) out.insert(id);
    }
    return out;
}

double evaluate(const TrainedModel& model, const Dataset& test) {
    check_features(model, test.granularity, test.feature_names);
    if (test.rows.empty()) throw Error(ErrorCode::evaluation, "test set is empty");
    std::size_t correct = 0;
    for (const auto& row : test.rows)
        if (predict_ranked(model, row.vector).top() == row.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(test.rows.size());
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw Error(ErrorCode::validation, "test fraction must be in [0, 1)");
    std::map<std::string, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < dataset.rows.size(); ++i) by_label[dataset.rows[i].label].push_back(i);

    Dataset train_set{dataset.granularity, dataset.feature_names, {}};
    Dataset test_set{dataset.granularity, dataset.feature_names, {}};
    detail::Rng rng(seed);
    for (auto& [label, indices] : by_label) {
        detail::shuffle(indices, rng);
        auto take = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(indices.size())));
        take = std::min(take, indices.size() - 1);
        for (std::size_t k = 0; k < indices.size(); ++k)
            (k < take ? test_set : train_set).rows.push_back(dataset.rows[indices[k]]);
    }
    return {std::move(train_set), std::move(test_set)};
}

std::string save_model(const TrainedModel& model) {
    std::string out = "icshunt-model 1\n";
    out += "granularity " + std::string(to_string(model.granularity)) + "\n";
    out += "features " + std::to_string(model.feature_names.size()) + "\n";
    for (const auto& f : model.feature_names) out += f + "\n";
    out += "classes " + std::to_string(model.classes.size()) + "\n";
    char buf[32];
    for (std::size_t c = 0; c < model.classes.size(); ++c) {
        out += model.classes[c];
        std::snprintf(buf, sizeof buf, " %.17g", model.biases[c]);
        out += buf;
        for (double w : model.weights[c]) {
            std::snprintf(buf, sizeof buf, " %.17g", w);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

TrainedModel load_model(std::string_view text) {
    std::istringstream in{std::string(text)};
    auto fail = [](const std::string& what) -> TrainedModel { throw Error(ErrorCode::parse, "model: " + what); };
    std::string word;
    int version = 0;
    if (!(in >> word >> version) || word != "icshunt-model") return fail("missing header");
    if (version != 1) return fail("unsupported version " + std::to_string(version));

    TrainedModel model;
    std::string granularity;
    if (!(in >> word >> granularity) || word != "granularity") return fail("missing granularity");
    auto g = parse_granularity(granularity);
    if (!g) return fail("unknown granularity " + granularity);
    model.granularity = *g;

    std::size_t count = 0;
    if (!(in >> word >> count) || word != "features") return fail("missing feature count");
    model.feature_names.resize(count);
    for (auto& f : model.feature_names)
        if (!(in >> f)) return fail("truncated feature list");

    if (!(in >> word >> count) || word != "classes") return fail("missing class count");
    if (count < 2) return fail("needs at least 2 classes");
    model.classes.resize(count);
    model.biases.resize(count);
    model.weights.assign(count, std::vector<double>(model.feature_names.size()));
    // strtod rather than operator>> so subnormal weights parse.
    auto read_double = [&in](double& value) {
        std::string token;
        if (!(in >> token)) return false;
        char* end = nullptr;
        value = std::strtod(token.c_str(), &end);
        return end == token.c_str() + token.size();
    };
    for (std::size_t c = 0; c < count; ++c) {
        if (!(in >> model.classes[c]) || !read_double(model.biases[c])) return fail("truncated class row");
        for (auto& w : model.weights[c])
            if (!read_double(w)) return fail("bad weights for " + model.classes[c]);
    }
    if (in >> word) return fail("trailing data");
    return model;
}

void save_model_file(const TrainedModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    out << save_model(model);
    if (!out) throw Error(ErrorCode::io, "cannot write model " + path.string());
}

TrainedModel load_model_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open model " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return load_model(text.str());
}

}  // namespace icshunt
