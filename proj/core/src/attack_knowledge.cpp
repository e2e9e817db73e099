#include "icshunt/attack_knowledge.hpp"
#include "icshunt/error.hpp"
#include "random.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace icshunt {

using nlohmann::json;

std::string_view to_string(Domain domain) noexcept {
    return domain == Domain::ics ? "ics" : "enterprise";
}

std::string_view to_string(Granularity granularity) noexcept {
    return granularity == Granularity::tactic ? "tactic" : "technique";
}

std::optional<Domain> parse_domain(std::string_view text) noexcept {
    if (text == "ics") return Domain::ics;
    if (text == "enterprise") return Domain::enterprise;
    return std::nullopt;
}

std::optional<Granularity> parse_granularity(std::string_view text) noexcept {
    if (text == "tactic") return Granularity::tactic;
    if (text == "technique") return Granularity::technique;
    return std::nullopt;
}

KnowledgeBase::KnowledgeBase(Domain domain, std::vector<Tactic> tactics,
                             std::map<std::string, Technique> techniques,
                             std::map<std::string, ThreatGroup> groups, std::string bundle_version,
                             std::vector<std::string> warnings)
    : domain_(domain),
      tactics_(std::move(tactics)),
      techniques_(std::move(techniques)),
      groups_(std::move(groups)),
      bundle_version_(std::move(bundle_version)),
      warnings_(std::move(warnings)) {
    std::sort(tactics_.begin(), tactics_.end(),
              [](const Tactic& a, const Tactic& b) { return a.matrix_order < b.matrix_order; });
    for (std::size_t i = 0; i < tactics_.size(); ++i) {
        if (tactics_[i].matrix_order != i)
            throw Error(ErrorCode::structural, "tactic matrix order is not contiguous at " + tactics_[i].id);
        if (tactics_[i].name.empty()) throw Error(ErrorCode::structural, "tactic " + tactics_[i].id + " has no name");
        if (!tactic_index_.emplace(tactics_[i].id, i).second)
            throw Error(ErrorCode::structural, "duplicate tactic " + tactics_[i].id);
    }
    technique_order_.reserve(techniques_.size());
    for (const auto& [id, technique] : techniques_) technique_order_.push_back(id);
    check_integrity();
}

const Tactic* KnowledgeBase::find_tactic(std::string_view id) const {
    auto it = tactic_index_.find(id);
    return it == tactic_index_.end() ? nullptr : &tactics_[it->second];
}

const Tactic* KnowledgeBase::find_tactic_by_name(std::string_view name) const {
    for (const auto& t : tactics_)
        if (t.name == name) return &t;
    return nullptr;
}

const Technique* KnowledgeBase::find_technique(std::string_view id) const {
    auto it = techniques_.find(std::string(id));
    return it == techniques_.end() ? nullptr : &it->second;
}

const Technique* KnowledgeBase::find_technique_by_name(std::string_view name) const {
    for (const auto& [id, t] : techniques_)
        if (t.name == name) return &t;
    return nullptr;
}

const ThreatGroup* KnowledgeBase::find_group(std::string_view id) const {
    auto it = groups_.find(std::string(id));
    return it == groups_.end() ? nullptr : &it->second;
}

const Tactic& KnowledgeBase::tactic(std::string_view id) const {
    if (const auto* t = find_tactic(id)) return *t;
    throw Error(ErrorCode::not_found, "unknown tactic " + std::string(id));
}

const Technique& KnowledgeBase::technique(std::string_view id) const {
    if (const auto* t = find_technique(id)) return *t;
    throw Error(ErrorCode::not_found, "unknown technique " + std::string(id));
}

const ThreatGroup& KnowledgeBase::group(std::string_view id) const {
    if (const auto* g = find_group(id)) return *g;
    throw Error(ErrorCode::not_found, "unknown group " + std::string(id));
}

std::size_t KnowledgeBase::matrix_order(std::string_view tactic_id) const {
    return tactic(tactic_id).matrix_order;
}

std::vector<std::string> KnowledgeBase::feature_names(Granularity granularity) const {
    if (granularity == Granularity::technique) return technique_order_;
    std::vector<std::string> names;
    names.reserve(tactics_.size());
    for (const auto& t : tactics_) names.push_back(t.id);
    return names;
}

std::size_t KnowledgeBase::feature_count(Granularity granularity) const {
    return granularity == Granularity::technique ? technique_order_.size() : tactics_.size();
}

void KnowledgeBase::check_integrity() const {
    for (const auto& [id, technique] : techniques_) {
        if (technique.tactic_ids.empty())
            throw Error(ErrorCode::integrity, "technique " + id + " maps to no tactic");
        for (const auto& tactic_id : technique.tactic_ids)
            if (!find_tactic(tactic_id))
                throw Error(ErrorCode::integrity, "technique " + id + " references unknown tactic " + tactic_id);
    }
    for (const auto& [id, group] : groups_)
        for (const auto& technique_id : group.technique_ids)
            if (!find_technique(technique_id))
                throw Error(ErrorCode::integrity, "group " + id + " references unknown technique " + technique_id);
}

std::size_t TtpVector::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::vector<std::string> Dataset::labels() const {
    std::set<std::string> distinct;
    for (const auto& row : rows) distinct.insert(row.label);
    return {distinct.begin(), distinct.end()};
}

namespace {

bool flag(const json& object, const char* key) {
    auto it = object.find(key);
    return it != object.end() && it->is_boolean() && it->get<bool>();
}

std::string string_field(const json& object, const char* key) {
    auto it = object.find(key);
    return it != object.end() && it->is_string() ? it->get<std::string>() : std::string{};
}

std::string external_id(const json& object) {
    auto refs = object.find("external_references");
    if (refs == object.end() || !refs->is_array()) return {};
    for (const auto& ref : *refs) {
        const auto source = string_field(ref, "source_name");
        if (source.rfind("mitre", 0) == 0 && ref.contains("external_id")) return string_field(ref, "external_id");
    }
    return {};
}

std::string_view kill_chain_name(Domain domain) {
    return domain == Domain::ics ? "mitre-ics-attack" : "mitre-attack";
}

std::string_view matrix_external_id(Domain domain) {
    return domain == Domain::ics ? "ics-attack" : "enterprise-attack";
}

}  // namespace

KnowledgeBase load_bundle(std::string_view bundle_bytes, Domain domain) {
    json doc;
    try {
        doc = json::parse(bundle_bytes.begin(), bundle_bytes.end());
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::parse, "bundle parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::structural, "bundle root (/) is not an object");
    auto objects_it = doc.find("objects");
    if (objects_it == doc.end() || !objects_it->is_array())
        throw Error(ErrorCode::structural, "bundle has no /objects array");
    const json& objects = *objects_it;

    std::vector<std::string> warnings;
    std::unordered_map<std::string, const json*> by_stix_id;
    std::vector<const json*> matrices;
    std::string bundle_version;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const json& object = objects[i];
        if (!object.is_object() || !object.contains("type") || !object.contains("id"))
            throw Error(ErrorCode::structural, "/objects/" + std::to_string(i) + " lacks type or id");
        by_stix_id.emplace(string_field(object, "id"), &object);
        const auto type = string_field(object, "type");
        if (type == "x-mitre-matrix" && !flag(object, "revoked") && !flag(object, "x_mitre_deprecated"))
            matrices.push_back(&object);
        else if (type == "x-mitre-collection")
            bundle_version = string_field(object, "x_mitre_version");
    }

    const json* matrix = nullptr;
    for (const json* m : matrices)
        if (external_id(*m) == matrix_external_id(domain)) matrix = m;
    // A lone matrix without an ATT&CK external id is accepted; one naming the
    // other domain is not.
    const auto other = matrix_external_id(domain == Domain::ics ? Domain::enterprise : Domain::ics);
    if (!matrix && matrices.size() == 1 && external_id(*matrices.front()) != other) matrix = matrices.front();
    if (!matrix) throw Error(ErrorCode::structural, "bundle has no matrix object for domain " + std::string(to_string(domain)));
    if (bundle_version.empty()) bundle_version = string_field(*matrix, "modified");

    auto refs_it = matrix->find("tactic_refs");
    if (refs_it == matrix->end() || !refs_it->is_array())
        throw Error(ErrorCode::structural, "matrix object has no tactic_refs");
    std::vector<Tactic> tactics;
    std::unordered_map<std::string, std::string> tactic_by_shortname;
    for (const auto& ref : *refs_it) {
        auto found = by_stix_id.find(ref.get<std::string>());
        if (found == by_stix_id.end() || string_field(*found->second, "type") != "x-mitre-tactic")
            throw Error(ErrorCode::structural, "matrix tactic_ref " + ref.get<std::string>() + " does not resolve");
        const json& t = *found->second;
        Tactic tactic{external_id(t), string_field(t, "name"), string_field(t, "x_mitre_shortname"),
                      string_field(t, "description"), tactics.size()};
        tactic_by_shortname.emplace(tactic.shortname, tactic.id);
        tactics.push_back(std::move(tactic));
    }

    std::map<std::string, Technique> techniques;
    std::unordered_map<std::string, std::string> technique_by_stix_id;  // sub-techniques map to parent
    std::vector<std::pair<std::string, std::string>> subtechniques;
    std::set<std::string> excluded;  // revoked / deprecated stix ids
    for (const json& object : objects) {
        if (string_field(object, "type") != "attack-pattern") continue;
        const auto stix_id = string_field(object, "id");
        if (flag(object, "revoked") || flag(object, "x_mitre_deprecated")) {
            excluded.insert(stix_id);
            continue;
        }
        auto id = external_id(object);
        if (id.empty()) {
            warnings.push_back("attack-pattern " + stix_id + " has no ATT&CK id; skipped");
            continue;
        }
        if (flag(object, "x_mitre_is_subtechnique") || id.find('.') != std::string::npos) {
            subtechniques.emplace_back(stix_id, id.substr(0, id.find('.')));
            continue;
        }
        Technique technique{id, string_field(object, "name"), string_field(object, "description"), {}, domain};
        if (auto phases = object.find("kill_chain_phases"); phases != object.end() && phases->is_array()) {
            for (const auto& phase : *phases) {
                if (string_field(phase, "kill_chain_name") != kill_chain_name(domain)) continue;
                auto tactic = tactic_by_shortname.find(string_field(phase, "phase_name"));
                if (tactic != tactic_by_shortname.end() &&
                    std::find(technique.tactic_ids.begin(), technique.tactic_ids.end(), tactic->second) ==
                        technique.tactic_ids.end())
                    technique.tactic_ids.push_back(tactic->second);
            }
        }
        if (technique.tactic_ids.empty()) {
            warnings.push_back("technique " + id + " maps to no tactic of the matrix; skipped");
            continue;
        }
        if (techniques.count(id)) {
            warnings.push_back("duplicate technique id " + id + "; first kept");
            continue;
        }
        technique_by_stix_id.emplace(stix_id, id);
        techniques.emplace(id, std::move(technique));
    }
    for (const auto& [stix_id, parent] : subtechniques) {
        if (techniques.count(parent))
            technique_by_stix_id.emplace(stix_id, parent);
        else
            excluded.insert(stix_id);
    }

    std::map<std::string, ThreatGroup> groups;
    std::unordered_map<std::string, std::string> group_by_stix_id;
    for (const json& object : objects) {
        if (string_field(object, "type") != "intrusion-set") continue;
        const auto stix_id = string_field(object, "id");
        if (flag(object, "revoked") || flag(object, "x_mitre_deprecated")) {
            excluded.insert(stix_id);
            continue;
        }
        auto id = external_id(object);
        if (id.empty() || groups.count(id)) continue;
        ThreatGroup group{id, string_field(object, "name"), {}, {}};
        if (auto aliases = object.find("aliases"); aliases != object.end() && aliases->is_array())
            for (const auto& alias : *aliases)
                if (alias.is_string()) group.aliases.push_back(alias.get<std::string>());
        group_by_stix_id.emplace(stix_id, id);
        groups.emplace(id, std::move(group));
    }

    std::map<std::string, std::set<std::string>> uses;
    for (const json& object : objects) {
        if (string_field(object, "type") != "relationship" || string_field(object, "relationship_type") != "uses")
            continue;
        if (flag(object, "revoked") || flag(object, "x_mitre_deprecated")) continue;
        const auto source = string_field(object, "source_ref");
        const auto target = string_field(object, "target_ref");
        if (source.rfind("intrusion-set--", 0) != 0 || target.rfind("attack-pattern--", 0) != 0) continue;
        if (!by_stix_id.count(source) || !by_stix_id.count(target)) {
            warnings.push_back("dangling relationship " + string_field(object, "id") + " dropped");
            continue;
        }
        auto group = group_by_stix_id.find(source);
        auto technique = technique_by_stix_id.find(target);
        if (group == group_by_stix_id.end() || technique == technique_by_stix_id.end()) continue;
        uses[group->second].insert(technique->second);
    }
    for (auto& [id, technique_ids] : uses) groups[id].technique_ids.assign(technique_ids.begin(), technique_ids.end());

    for (const auto& w : warnings) spdlog::debug("bundle: {}", w);
    return KnowledgeBase(domain, std::move(tactics), std::move(techniques), std::move(groups),
                         std::move(bundle_version), std::move(warnings));
}

KnowledgeBase load_bundle_file(const std::filesystem::path& path, Domain domain) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open bundle " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return load_bundle(buffer.str(), domain);
}

TtpVector ttp_vector(const KnowledgeBase& kb, const std::vector<std::string>& technique_ids,
                     Granularity granularity) {
    TtpVector vector{granularity, std::vector<std::uint8_t>(kb.feature_count(granularity), 0)};
    const auto& order = kb.technique_order();
    for (const auto& id : technique_ids) {
        const Technique& technique = kb.technique(id);
        if (granularity == Granularity::technique) {
            auto pos = std::lower_bound(order.begin(), order.end(), technique.id);
            vector.bits[static_cast<std::size_t>(pos - order.begin())] = 1;
        } else {
            for (const auto& tactic_id : technique.tactic_ids) vector.bits[kb.matrix_order(tactic_id)] = 1;
        }
    }
    return vector;
}

TtpVector tactic_vector(const KnowledgeBase& kb, const std::vector<std::string>& tactic_ids) {
    TtpVector vector{Granularity::tactic, std::vector<std::uint8_t>(kb.tactics().size(), 0)};
    for (const auto& id : tactic_ids) vector.bits[kb.matrix_order(id)] = 1;
    return vector;
}

TtpVector group_profile(const KnowledgeBase& kb, std::string_view group_id, Granularity granularity) {
    return ttp_vector(kb, kb.group(group_id).technique_ids, granularity);
}

Dataset build_dataset(const KnowledgeBase& kb, Granularity granularity, const AugmentOptions& augment) {
    if (!(augment.noise_rate >= 0.0 && augment.noise_rate < 0.5))
        throw Error(ErrorCode::validation, "noise_rate must be in [0, 0.5)");
    Dataset dataset{granularity, kb.feature_names(granularity), {}};
    for (const auto& [id, group] : kb.groups()) {
        auto profile = group_profile(kb, id, granularity);
        if (profile.any()) dataset.rows.push_back({id, std::move(profile)});
    }
    if (dataset.rows.size() < 2)
        throw Error(ErrorCode::insufficient_classes,
                    "need at least 2 groups with non-empty profiles, found " + std::to_string(dataset.rows.size()));

    const std::size_t clean_rows = dataset.rows.size();
    detail::Rng rng(augment.seed);
    dataset.rows.reserve(clean_rows * (1 + augment.copies_per_group));
    for (std::size_t g = 0; g < clean_rows; ++g) {
        for (std::size_t c = 0; c < augment.copies_per_group; ++c) {
            LabeledRow copy = dataset.rows[g];
            if (augment.noise_rate > 0.0)
                for (auto& bit : copy.vector.bits)
                    if (detail::uniform01(rng) < augment.noise_rate) bit ^= 1;
            dataset.rows.push_back(std::move(copy));
        }
    }
    return dataset;
}

std::vector<std::string> remove_colliding_profiles(Dataset& dataset) {
    std::map<std::string, const TtpVector*> clean;
    for (const auto& row : dataset.rows) clean.emplace(row.label, &row.vector);
    std::set<std::string> colliding;
    for (auto a = clean.begin(); a != clean.end(); ++a)
        for (auto b = std::next(a); b != clean.end(); ++b)
            if (a->second->bits == b->second->bits) {
                colliding.insert(a->first);
                colliding.insert(b->first);
            }
    std::erase_if(dataset.rows, [&](const LabeledRow& row) { return colliding.count(row.label) > 0; });
    return {colliding.begin(), colliding.end()};
}

std::vector<Technique> techniques_for_tactic(const KnowledgeBase& kb, std::string_view tactic_id) {
    kb.tactic(tactic_id);
    std::vector<Technique> result;
    for (const auto& [id, technique] : kb.techniques())
        if (std::find(technique.tactic_ids.begin(), technique.tactic_ids.end(), tactic_id) != technique.tactic_ids.end())
            result.push_back(technique);
    return result;
}

}  // namespace icshunt
