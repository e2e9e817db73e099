#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace icshunt {

enum class Domain { ics, enterprise };
enum class Granularity { tactic, technique };

std::string_view to_string(Domain domain) noexcept;
std::string_view to_string(Granularity granularity) noexcept;
std::optional<Domain> parse_domain(std::string_view text) noexcept;
std::optional<Granularity> parse_granularity(std::string_view text) noexcept;

struct Tactic {
    std::string id;  // e.g. "TA0108"
    std::string name;
    std::string shortname;  // kill-chain phase name used by techniques
    std::string description;
    std::size_t matrix_order = 0;
};

struct Technique {
    std::string id;  // e.g. "T0846"
    std::string name;
    std::string description;
    std::vector<std::string> tactic_ids;
    Domain domain = Domain::ics;
};

struct ThreatGroup {
    std::string id;  // e.g. "G0034"
    std::string name;
    std::vector<std::string> aliases;
    std::vector<std::string> technique_ids;  // sorted, unique
};

/// Tactics, techniques and threat groups of one ATT&CK domain. Immutable
/// after loading; safe to share between reader threads.
class KnowledgeBase {
public:
    KnowledgeBase(Domain domain, std::vector<Tactic> tactics, std::map<std::string, Technique> techniques,
                  std::map<std::string, ThreatGroup> groups, std::string bundle_version,
                  std::vector<std::string> warnings = {});

    Domain domain() const noexcept { return domain_; }
    const std::vector<Tactic>& tactics() const noexcept { return tactics_; }
    const std::map<std::string, Technique>& techniques() const noexcept { return techniques_; }
    const std::map<std::string, ThreatGroup>& groups() const noexcept { return groups_; }
    const std::string& bundle_version() const noexcept { return bundle_version_; }
    /// Non-fatal findings from loading (dangling relationships and similar).
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }

    const Tactic* find_tactic(std::string_view id) const;
    const Tactic* find_tactic_by_name(std::string_view name) const;
    const Technique* find_technique(std::string_view id) const;
    const Technique* find_technique_by_name(std::string_view name) const;
    const ThreatGroup* find_group(std::string_view id) const;

    /// Throws not_found.
    const Tactic& tactic(std::string_view id) const;
    const Technique& technique(std::string_view id) const;
    const ThreatGroup& group(std::string_view id) const;

    /// Column index of a tactic in the domain matrix.
    std::size_t matrix_order(std::string_view tactic_id) const;

    /// Sorted technique ids: the feature order at technique granularity.
    const std::vector<std::string>& technique_order() const noexcept { return technique_order_; }
    std::vector<std::string> feature_names(Granularity granularity) const;
    std::size_t feature_count(Granularity granularity) const;

    /// Throws integrity when a reference does not resolve.
    void check_integrity() const;

private:
    Domain domain_;
    std::vector<Tactic> tactics_;
    std::map<std::string, Technique> techniques_;
    std::map<std::string, ThreatGroup> groups_;
    std::string bundle_version_;
    std::vector<std::string> warnings_;
    std::vector<std::string> technique_order_;
    std::map<std::string, std::size_t, std::less<>> tactic_index_;
};

/// Binary presence vector aligned to KnowledgeBase::feature_names().
struct TtpVector {
    Granularity granularity = Granularity::technique;
    std::vector<std::uint8_t> bits;

    std::size_t size() const noexcept { return bits.size(); }
    std::size_t count() const noexcept;
    bool any() const noexcept { return count() > 0; }
    bool operator==(const TtpVector&) const = default;
};

struct LabeledRow {
    std::string label;  // threat group id
    TtpVector vector;
    bool operator==(const LabeledRow&) const = default;
};

struct Dataset {
    Granularity granularity = Granularity::technique;
    std::vector<std::string> feature_names;
    std::vector<LabeledRow> rows;

    std::vector<std::string> labels() const;  // distinct, sorted
};

struct AugmentOptions {
    double noise_rate = 0.0;
    std::size_t copies_per_group = 0;
    std::uint64_t seed = 0;
};

/// Parses a STIX 2.x bundle. Revoked and deprecated objects are dropped and
/// sub-techniques are folded into their parent technique.
KnowledgeBase load_bundle(std::string_view bundle_bytes, Domain domain);
KnowledgeBase load_bundle_file(const std::filesystem::path& path, Domain domain);

/// Vector of technique ids (technique granularity) or of the tactics those
/// techniques map to (tactic granularity).
TtpVector ttp_vector(const KnowledgeBase& kb, const std::vector<std::string>& technique_ids,
                     Granularity granularity);
TtpVector tactic_vector(const KnowledgeBase& kb, const std::vector<std::string>& tactic_ids);

TtpVector group_profile(const KnowledgeBase& kb, std::string_view group_id, Granularity granularity);

/// One clean row per group with a non-empty profile (sorted by group id),
/// followed by `copies_per_group` noisy copies of each.
Dataset build_dataset(const KnowledgeBase& kb, Granularity granularity, const AugmentOptions& augment = {});

/// Removes every label whose clean profile equals another label's profile.
/// The clean profile of a label is its first row. Returns the removed labels.
std::vector<std::string> remove_colliding_profiles(Dataset& dataset);

std::vector<Technique> techniques_for_tactic(const KnowledgeBase& kb, std::string_view tactic_id);

}  // namespace icshunt
