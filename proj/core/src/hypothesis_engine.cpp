#include "icshunt/hypothesis_engine.hpp"
#include "icshunt/error.hpp"
#include "hashing.hpp"

#include <algorithm>
#include <cstdio>
#include <regex>

namespace icshunt {

std::string_view to_string(HypothesisStatus status) noexcept {
    switch (status) {
    case HypothesisStatus::generated: return "generated";
    case HypothesisStatus::validated: return "validated";
    case HypothesisStatus::rejected: return "rejected";
    }
    return "generated";
}

std::optional<HypothesisStatus> parse_hypothesis_status(std::string_view text) noexcept {
    for (auto s : {HypothesisStatus::generated, HypothesisStatus::validated, HypothesisStatus::rejected})
        if (to_string(s) == text) return s;
    return std::nullopt;
}

std::vector<std::string> Hypothesis::active_candidates() const {
    std::vector<std::string> out;
    for (const auto& c : candidates)
        if (c.in_candidate_set) out.push_back(c.group_id);
    return out;
}

namespace {

const std::string& earliest_tactic(const KnowledgeBase& kb, const Technique& t) {
    return *std::min_element(t.tactic_ids.begin(), t.tactic_ids.end(), [&](const auto& a, const auto& b) {
        return kb.matrix_order(a) < kb.matrix_order(b);
    });
}

const Technique& resolve(const KnowledgeBase& kb, const std::string& technique_id) {
    const auto* t = kb.find_technique(technique_id);
    if (!t) throw Error(ErrorCode::integrity, "detection cites unknown technique " + technique_id);
    if (t->tactic_ids.empty()) throw Error(ErrorCode::integrity, "technique " + technique_id + " has no tactic");
    return *t;
}

// Observed evidence at the model's granularity.
TtpVector observed_vector(const KnowledgeBase& kb, const TrainedModel& model, const Hypothesis& h) {
    if (kb.feature_names(model.granularity) != model.feature_names)
        throw Error(ErrorCode::dimension, "model features do not match the knowledge base");
    auto v = ttp_vector(kb, {h.observed_techniques.begin(), h.observed_techniques.end()}, model.granularity);
    if (model.granularity == Granularity::tactic) {
        const auto tactics = tactic_vector(kb, {h.observed_tactics.begin(), h.observed_tactics.end()});
        for (std::size_t i = 0; i < v.size(); ++i) v.bits[i] |= tactics.bits[i];
    }
    return v;
}

bool profile_contains(const KnowledgeBase& kb, const std::string& group_id, const std::string& technique_id) {
    const auto* g = kb.find_group(group_id);
    return g && std::binary_search(g->technique_ids.begin(), g->technique_ids.end(), technique_id);
}

std::string first_sentence(const std::string& description) {
    static const std::regex citation(R"(\s*\(Citation:[^)]*\))");
    static const std::regex link(R"(\[([^\]]*)\]\([^)]*\))");
    auto text = std::regex_replace(std::regex_replace(description, citation, ""), link, "$1");
    const auto end = text.find(". ");
    if (end != std::string::npos) text.resize(end + 1);
    std::replace(text.begin(), text.end(), '\n', ' ');
    return text;
}

std::string technique_label(const KnowledgeBase& kb, const std::string& id) {
    const auto& t = kb.technique(id);
    return t.id + " " + t.name + " (" + kb.tactic(earliest_tactic(kb, t)).name + ")";
}

std::string render_narrative(const Hypothesis& h, const KnowledgeBase& kb) {
    std::string out = "Activity from " + h.attacker_ip.to_string() + " against " + h.victim_ip.to_string() + ".\n";
    out += "Observed techniques:\n";
    for (const auto& id : h.observed_techniques) {
        out += "- " + technique_label(kb, id);
        const auto sentence = first_sentence(kb.technique(id).description);
        if (!sentence.empty()) out += ": " + sentence;
        out += "\n";
    }
    if (!h.weak_techniques.empty()) {
        out += "Weak evidence from tactic-level detections (" + std::to_string(h.weak_techniques.size()) +
               " techniques):";
        for (const auto& id : h.weak_techniques) out += " " + id;
        out += "\n";
    }
    const auto active = h.active_candidates();
    if (!active.empty()) {
        out += "Candidate groups:";
        char score[32];
        for (const auto& c : h.candidates) {
            if (!c.in_candidate_set) continue;
            const auto* g = kb.find_group(c.group_id);
            std::snprintf(score, sizeof score, "%.3f", c.score);
            out += " " + c.group_id + (g ? " " + g->name : std::string()) + " (margin " + score + ");";
        }
        out.back() = '\n';
    }
    if (!h.predicted_future.empty()) {
        out += "Possible next techniques:\n";
        for (const auto& p : h.predicted_future)
            out += "- " + p.technique_id + " " + kb.technique(p.technique_id).name + " (" + kb.tactic(p.tactic_id).name +
                   ")\n";
    }
    if (h.status == HypothesisStatus::rejected) out += "Rejected: " + h.status_reason + "\n";
    return out;
}

// Adds the detection's evidence to the hypothesis; returns the techniques
// that were not observed before.
std::set<std::string> absorb(Hypothesis& h, const Detection& d, const KnowledgeBase& kb) {
    std::set<std::string> fresh;
    std::set<std::string> covered_tactics;
    for (const auto& id : d.technique_ids) {
        const auto& t = resolve(kb, id);
        covered_tactics.insert(t.tactic_ids.begin(), t.tactic_ids.end());
        if (!h.observed_techniques.count(id)) fresh.insert(id);
    }
    for (const auto& id : fresh) {
        h.observed_techniques.insert(id);
        h.weak_techniques.erase(id);
        const auto& t = kb.technique(id);
        h.observed_tactics.insert(t.tactic_ids.begin(), t.tactic_ids.end());
    }
    for (const auto& tactic : d.tactic_ids) {
        if (!kb.find_tactic(tactic)) throw Error(ErrorCode::integrity, "detection cites unknown tactic " + tactic);
        h.observed_tactics.insert(tactic);
        if (covered_tactics.count(tactic)) continue;
        for (const auto& t : techniques_for_tactic(kb, tactic))
            if (!h.observed_techniques.count(t.id)) h.weak_techniques.insert(t.id);
    }
    h.detection_ids.push_back(d.id);
    h.updated_at = std::max(h.updated_at, d.timestamp);
    return fresh;
}

void refresh(Hypothesis& h, const KnowledgeBase& kb) {
    const auto active = h.active_candidates();
    h.predicted_future = active.empty() ? std::vector<PredictedTechnique>{}
                                        : predict_future(kb, active, h.observed_techniques);
    h.narrative = render_narrative(h, kb);
}

}  // namespace

std::vector<PredictedTechnique> predict_future(const KnowledgeBase& kb, const std::vector<std::string>& candidates,
                                               const std::set<std::string>& observed_techniques) {
    std::set<std::string> pool;
    for (const auto& id : candidates)
        for (const auto& t : kb.group(id).technique_ids)
            if (!observed_techniques.count(t)) pool.insert(t);
    std::vector<PredictedTechnique> out;
    for (const auto& id : pool) out.push_back({id, earliest_tactic(kb, kb.technique(id))});
    std::stable_sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
        const auto oa = kb.matrix_order(a.tactic_id);
        const auto ob = kb.matrix_order(b.tactic_id);
        if (oa != ob) return oa < ob;
        return a.technique_id < b.technique_id;
    });
    return out;
}

Hypothesis generate(const std::vector<Detection>& detections, const KnowledgeBase& kb, const TrainedModel& model) {
    if (detections.empty()) throw Error(ErrorCode::validation, "cannot generate a hypothesis without detections");
    Hypothesis h;
    h.id = "hyp-" + detail::Fnv1a().add(detections.front().id).hex();
    h.attacker_ip = detections.front().attacker_ip;
    h.victim_ip = detections.front().victim_ip;
    h.created_at = detections.front().timestamp;
    h.updated_at = h.created_at;
    for (const auto& d : detections) {
        absorb(h, d, kb);
        h.created_at = std::min(h.created_at, d.timestamp);
    }
    if (h.observed_tactics.empty()) throw Error(ErrorCode::integrity, "observed techniques map to no tactic");

    const auto observed = observed_vector(kb, model, h);
    const auto matches = observed.any() ? candidate_groups(kb, observed) : std::set<std::string>{};
    const auto ranking = predict_ranked(model, observed);

    std::vector<Candidate> inside;
    std::vector<Candidate> outside;
    for (const auto& s : ranking.ranking)
        (matches.count(s.group_id) ? inside : outside).push_back({s.group_id, s.score, matches.count(s.group_id) > 0});
    for (const auto& id : matches)  // matching groups the model was not trained on
        if (std::none_of(inside.begin(), inside.end(), [&](const auto& c) { return c.group_id == id; }))
            inside.push_back({id, 0.0, true});
    if (inside.empty() && !outside.empty()) {
        inside.push_back(outside.front());
        inside.front().in_candidate_set = true;
        outside.erase(outside.begin());
    }
    h.candidates = std::move(inside);
    h.candidates.insert(h.candidates.end(), outside.begin(), outside.end());
    refresh(h, kb);
    return h;
}

Hypothesis validate(const Hypothesis& hypothesis, const Detection& detection, const KnowledgeBase& kb,
                    const TrainedModel& model) {
    if (hypothesis.status == HypothesisStatus::rejected)
        throw Error(ErrorCode::validation, "hypothesis " + hypothesis.id + " is already rejected");
    for (const auto& id : detection.technique_ids) resolve(kb, id);

    Hypothesis h = hypothesis;
    ++h.version;
    const auto active = h.active_candidates();
    std::set<std::string> predicted;
    for (const auto& p : h.predicted_future) predicted.insert(p.technique_id);

    const auto fresh = absorb(h, detection, kb);
    std::set<std::string> hits;
    std::vector<std::string> unexplained;
    for (const auto& id : fresh) {
        if (predicted.count(id)) hits.insert(id);
        else if (std::none_of(active.begin(), active.end(), [&](const auto& g) { return profile_contains(kb, g, id); }))
            unexplained.push_back(id);
    }

    if (!hits.empty()) {
        h.status = HypothesisStatus::validated;
        h.status_reason = "predicted technique observed:";
        for (const auto& id : hits) h.status_reason += " " + id;
        const auto observed = observed_vector(kb, model, h);
        auto keep = candidate_groups(kb, observed);
        if (std::none_of(active.begin(), active.end(), [&](const auto& g) { return keep.count(g); })) {
            // No candidate covers everything observed; keep those that explain the hit.
            keep.clear();
            for (const auto& g : active)
                if (std::all_of(hits.begin(), hits.end(), [&](const auto& t) { return profile_contains(kb, g, t); }))
                    keep.insert(g);
        }
        for (auto& c : h.candidates) c.in_candidate_set = c.in_candidate_set && keep.count(c.group_id);
        std::stable_partition(h.candidates.begin(), h.candidates.end(),
                              [](const Candidate& c) { return c.in_candidate_set; });
    } else if (!unexplained.empty()) {
        h.status = HypothesisStatus::rejected;
        h.status_reason = "technique outside every candidate profile:";
        for (const auto& id : unexplained) h.status_reason += " " + id;
    }
    refresh(h, kb);
    return h;
}

HypothesisTracker::HypothesisTracker(const KnowledgeBase& kb, const TrainedModel& model, CorrelatorOptions options)
    : kb_(kb), model_(model), options_(options) {}

std::vector<Hypothesis> HypothesisTracker::observe(const Detection& detection) {
    const std::pair key{detection.attacker_ip.value, detection.victim_ip.value};
    const auto window = Timestamp::from_seconds(options_.window_seconds).micros;
    std::vector<Hypothesis> changed;

    if (auto it = open_.find(key); it != open_.end()) {
        const auto& current = hypotheses_.at(it->second);
        if (detection.timestamp.micros - current.updated_at.micros <= window) {
            auto next = validate(current, detection, kb_, model_);
            hypotheses_[next.id] = next;
            changed.push_back(next);
            if (next.status != HypothesisStatus::rejected) return changed;
        }
        open_.erase(it);
    }
    auto fresh = generate({detection}, kb_, model_);
    open_[key] = fresh.id;
    hypotheses_[fresh.id] = fresh;
    changed.push_back(std::move(fresh));
    return changed;
}

}  // namespace icshunt
