#pragma once

#include "icshunt/attack_knowledge.hpp"
#include "icshunt/event_store.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace icshunt {

inline constexpr int api_schema_version = 1;

struct ApiConfig {
    std::string bind_address = "127.0.0.1";
    std::uint16_t port = 8080;  // 0 picks a free port
    std::filesystem::path store_path = "hunt.db";
    std::filesystem::path ics_bundle;
    std::optional<std::filesystem::path> enterprise_bundle;
    std::string rules = "default";  // "default" or a rule file path
    std::optional<std::filesystem::path> model_path;  // trained on startup when absent
    Granularity granularity = Granularity::technique;
    std::vector<std::string> cors_allowlist;
    std::size_t subscriber_queue = 1024;  // events buffered per stream client
};

/// HTTP JSON API over the event store plus a server-sent event stream of
/// appended detections and hypotheses. No authentication; bind to loopback.
class HuntService {
public:
    /// Loads every dependency and starts listening. Throws Error{startup}
    /// naming the missing path or the store problem.
    static std::unique_ptr<HuntService> start(const ApiConfig& config);
    ~HuntService();
    HuntService(const HuntService&) = delete;
    HuntService& operator=(const HuntService&) = delete;

    std::uint16_t port() const noexcept;
    std::string base_url() const;
    EventStore& store() noexcept;

    /// Queues a stored detection or hypothesis for every stream subscriber.
    /// Returns the number of subscribers it was queued for.
    std::size_t publish_alert(const StoredEvent& event);
    std::size_t subscriber_count() const;

    /// Blocks until stop() is called from another thread or a signal handler.
    void wait();
    void stop();

private:
    struct Impl;
    explicit HuntService(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

}  // namespace icshunt
