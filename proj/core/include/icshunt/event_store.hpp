#pragma once

#include "icshunt/hypothesis_engine.hpp"
#include "icshunt/net.hpp"
#include "icshunt/records.hpp"
#include "icshunt/signature_engine.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace icshunt {

enum class EventKind { detection, hypothesis, model_run };

std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> parse_event_kind(std::string_view text) noexcept;

struct StoredEvent {
    std::uint64_t id = 0;
    EventKind kind = EventKind::detection;
    std::string payload;  // compact JSON document of the record
    Timestamp created_at;  // event time of the record
    bool operator==(const StoredEvent&) const = default;
};

struct QueryFilter {
    std::optional<EventKind> kind;
    std::optional<Timestamp> from;  // inclusive
    std::optional<Timestamp> to;    // inclusive
    std::optional<Ipv4Address> attacker_ip;
    std::optional<std::string> attack_type;
    std::optional<HypothesisStatus> status;
    bool latest_versions_only = false;  // hide superseded hypothesis versions
    std::size_t limit = 50;
    std::size_t offset = 0;
};

struct QueryResult {
    std::vector<StoredEvent> events;  // newest first
    std::size_t total = 0;            // matches before pagination
};

struct StoreOptions {
    std::size_t max_page_size = 500;
    bool sync = true;  // fdatasync after every append
};

/// Single-file append-only log with in-memory indexes rebuilt on open.
/// One writer and any number of concurrent readers.
class EventStore {
public:
    using Listener = std::function<void(const StoredEvent&)>;

    /// Creates the file when missing. A torn final record is discarded;
    /// damage before the tail throws Error{integrity}.
    static std::unique_ptr<EventStore> open(const std::filesystem::path& path, StoreOptions options = {});
    ~EventStore();
    EventStore(const EventStore&) = delete;
    EventStore& operator=(const EventStore&) = delete;

    /// Durable once this returns. Throws validation for a payload that does
    /// not parse as `kind`, durable_write when the write fails.
    std::uint64_t append(EventKind kind, std::string_view payload);
    std::uint64_t append(const Detection& detection);
    std::uint64_t append(const Hypothesis& hypothesis);
    std::uint64_t append(const ModelRun& run);

    /// Throws validation when limit exceeds the page size.
    QueryResult query(const QueryFilter& filter) const;
    /// Throws not_found.
    StoredEvent get(std::uint64_t id) const;
    std::optional<StoredEvent> find_detection(std::string_view detection_id) const;
    std::optional<StoredEvent> latest_hypothesis(std::string_view hypothesis_id) const;
    std::size_t hypothesis_versions(std::string_view hypothesis_id) const;
    /// Latest versions of the hypotheses citing a detection.
    std::vector<StoredEvent> hypotheses_for_detection(std::string_view detection_id) const;

    std::size_t size() const;
    std::uint64_t last_id() const;
    const std::filesystem::path& path() const noexcept { return path_; }
    const StoreOptions& options() const noexcept { return options_; }
    /// Bytes discarded from a torn tail when the store was opened.
    std::size_t recovered_bytes() const noexcept { return recovered_bytes_; }

    /// Listeners run on the appending thread, in append order, after the
    /// event is durable and visible to readers.
    std::size_t subscribe(Listener listener);
    void unsubscribe(std::size_t token);

private:
    struct Entry {
        StoredEvent event;
        std::optional<std::uint32_t> attacker;
        std::string attack_type;
        std::optional<HypothesisStatus> status;
        std::string record_id;  // detection or hypothesis id
    };

    EventStore(std::filesystem::path path, StoreOptions options, int fd);
    void load();
    void index(StoredEvent event);
    bool matches(const Entry& entry, const QueryFilter& filter) const;

    std::filesystem::path path_;
    StoreOptions options_;
    int fd_ = -1;
    std::size_t recovered_bytes_ = 0;

    mutable std::shared_mutex data_mutex_;
    std::vector<Entry> entries_;  // position i holds id i + 1
    std::map<std::uint32_t, std::vector<std::size_t>> by_attacker_;
    std::map<std::string, std::size_t, std::less<>> detection_index_;
    std::map<std::string, std::vector<std::size_t>, std::less<>> hypothesis_index_;  // versions in order
    std::map<std::string, std::vector<std::string>, std::less<>> hypotheses_by_detection_;

    std::mutex append_mutex_;
    std::mutex listener_mutex_;
    std::map<std::size_t, Listener> listeners_;
    std::size_t next_token_ = 1;
};

}  // namespace icshunt
