#include "icshunt/hunt_service.hpp"
#include "icshunt/error.hpp"
#include "icshunt/hunt_pipeline.hpp"
#include "json_records.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <list>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace icshunt {

using nlohmann::json;

namespace {

struct Subscriber {
    std::mutex mutex;
    std::condition_variable ready;
    std::deque<StoredEvent> queue;
    bool closed = false;
    bool overflowed = false;
};

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::validation:
    case ErrorCode::parse:
    case ErrorCode::dimension:
    case ErrorCode::io:
    case ErrorCode::unsupported_format:
    case ErrorCode::insufficient_classes:
    case ErrorCode::empty_observation: return 400;
    default: return 500;
    }
}

void send(httplib::Response& res, int status, json body) {
    body["schema_version"] = api_schema_version;
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
    send(res, http_status(code), {{"error", {{"code", to_string(code)}, {"message", message}}}});
}

std::size_t size_param(const httplib::Request& req, const char* name, std::size_t fallback) {
    if (!req.has_param(name)) return fallback;
    const auto text = req.get_param_value(name);
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw Error(ErrorCode::validation, std::string("query parameter '") + name + "' must be a non-negative integer");
    return value;
}

std::optional<Timestamp> time_param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) return std::nullopt;
    try {
        std::size_t used = 0;
        const auto text = req.get_param_value(name);
        const double seconds = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(name);
        return Timestamp::from_seconds(seconds);
    } catch (const std::logic_error&) {
        throw Error(ErrorCode::validation, std::string("query parameter '") + name + "' must be epoch seconds");
    }
}

QueryFilter common_filter(const httplib::Request& req) {
    QueryFilter filter;
    filter.limit = size_param(req, "limit", 50);
    filter.offset = size_param(req, "offset", 0);
    filter.from = time_param(req, "from");
    filter.to = time_param(req, "to");
    if (req.has_param("attacker_ip")) {
        filter.attacker_ip = Ipv4Address::parse(req.get_param_value("attacker_ip"));
        if (!filter.attacker_ip) throw Error(ErrorCode::validation, "query parameter 'attacker_ip' is not IPv4");
    }
    return filter;
}

json page(const QueryResult& result, const QueryFilter& filter, const char* record_key) {
    json items = json::array();
    for (const auto& e : result.events)
        items.push_back({{"event_id", e.id}, {record_key, json::parse(e.payload)}});
    return {{"total", result.total}, {"limit", filter.limit}, {"offset", filter.offset}, {"items", items}};
}

json technique_json(const KnowledgeBase& kb, const std::string& id) {
    const auto* t = kb.find_technique(id);
    if (!t) return {{"id", id}};
    json tactics = json::array();
    for (const auto& tactic : t->tactic_ids) tactics.push_back({{"id", tactic}, {"name", kb.tactic(tactic).name}});
    return {{"id", t->id},
            {"name", t->name},
            {"description", t->description},
            {"tactics", tactics},
            {"url", "https://attack.mitre.org/techniques/" + t->id + "/"}};
}

std::string sse_frame(const StoredEvent& event) {
    const json data{{"schema_version", api_schema_version},
                    {"event_id", event.id},
                    {"kind", to_string(event.kind)},
                    {"record", json::parse(event.payload)}};
    return "id: " + std::to_string(event.id) + "\nevent: " + std::string(to_string(event.kind)) +
           "\ndata: " + data.dump() + "\n\n";
}

void require_path(const std::filesystem::path& path, const char* what) {
    if (!std::filesystem::exists(path))
        throw Error(ErrorCode::startup, std::string(what) + " not found: " + path.string());
}

}  // namespace

struct HuntService::Impl {
    ApiConfig config;
    std::unique_ptr<KnowledgeBase> ics;
    std::unique_ptr<KnowledgeBase> enterprise;
    RuleSet rules;
    std::unique_ptr<EventStore> store;
    std::size_t listener_token = 0;

    mutable std::mutex model_mutex;
    std::shared_ptr<const TrainedModel> model;
    std::mutex ingest_mutex;

    mutable std::mutex subscribers_mutex;
    std::list<std::shared_ptr<Subscriber>> subscribers;

    httplib::Server server;
    std::thread thread;
    std::uint16_t port = 0;
    std::atomic<bool> stopped{false};

    std::shared_ptr<const TrainedModel> current_model() const {
        std::lock_guard lock(model_mutex);
        return model;
    }

    std::size_t publish(const StoredEvent& event) {
        std::lock_guard lock(subscribers_mutex);
        std::size_t delivered = 0;
        for (const auto& sub : subscribers) {
            std::lock_guard sub_lock(sub->mutex);
            if (sub->closed) continue;
            if (sub->queue.size() >= config.subscriber_queue) {
                sub->overflowed = true;
                sub->closed = true;
                spdlog::warn("stream subscriber fell {} events behind; disconnecting", sub->queue.size());
            } else {
                sub->queue.push_back(event);
                ++delivered;
            }
            sub->ready.notify_all();
        }
        return delivered;
    }

    void close_subscribers() {
        std::lock_guard lock(subscribers_mutex);
        for (const auto& sub : subscribers) {
            std::lock_guard sub_lock(sub->mutex);
            sub->closed = true;
            sub->ready.notify_all();
        }
    }

    void routes();
    void stream(const httplib::Request& req, httplib::Response& res);
};

void HuntService::Impl::routes() {
    server.new_task_queue = [] { return new httplib::ThreadPool(16); };

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const Error& e) {
            send_error(res, e.code(), e.what());
        } catch (const json::exception& e) {
            send_error(res, ErrorCode::validation, std::string("request body: ") + e.what());
        } catch (const std::exception& e) {
            send_error(res, ErrorCode::startup, e.what());
            res.status = 500;
        }
    });

    server.set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
        const auto origin = req.get_header_value("Origin");
        if (origin.empty()) return;
        for (const auto& allowed : config.cors_allowlist)
            if (allowed == "*" || allowed == origin) {
                res.set_header("Access-Control-Allow-Origin", allowed == "*" ? "*" : origin);
                res.set_header("Vary", "Origin");
                return;
            }
    });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });

    server.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
        const auto m = current_model();
        json components{
            {"store", {{"ready", true}, {"events", store->size()}, {"path", store->path().string()}}},
            {"knowledge",
             {{"ready", true},
              {"ics_techniques", ics->techniques().size()},
              {"ics_groups", ics->groups().size()},
              {"enterprise_loaded", enterprise != nullptr}}},
            {"rules", {{"ready", true}, {"count", rules.size()}}},
            {"model", {{"ready", m != nullptr}, {"classes", m ? m->classes.size() : 0}}},
            {"stream", {{"subscribers", [this] {
                             std::lock_guard lock(subscribers_mutex);
                             return subscribers.size();
                         }()}}}};
        send(res, 200, {{"status", "ready"}, {"components", components}});
    });

    server.Get("/api/attacks", [this](const httplib::Request& req, httplib::Response& res) {
        auto filter = common_filter(req);
        filter.kind = EventKind::detection;
        if (req.has_param("attack_type")) filter.attack_type = req.get_param_value("attack_type");
        send(res, 200, page(store->query(filter), filter, "detection"));
    });

    server.Get(R"(/api/attacks/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string key = req.matches[1];
        std::optional<StoredEvent> event;
        if (!key.empty() && key.find_first_not_of("0123456789") == std::string::npos) {
            event = store->get(std::stoull(key));
            if (event->kind != EventKind::detection)
                throw Error(ErrorCode::not_found, "event " + key + " is not a detection");
        } else {
            event = store->find_detection(key);
        }
        if (!event) throw Error(ErrorCode::not_found, "no detection " + key);
        const auto detection = json::parse(event->payload);
        json hypotheses = json::array();
        for (const auto& h : store->hypotheses_for_detection(detection.at("id").get<std::string>()))
            hypotheses.push_back({{"event_id", h.id}, {"hypothesis", json::parse(h.payload)}});
        json techniques = json::array();
        for (const auto& id : detection.at("technique_ids")) techniques.push_back(technique_json(*ics, id));
        send(res, 200,
             {{"event_id", event->id}, {"detection", detection}, {"hypotheses", hypotheses}, {"techniques", techniques}});
    });

    server.Get("/api/hypotheses", [this](const httplib::Request& req, httplib::Response& res) {
        auto filter = common_filter(req);
        filter.kind = EventKind::hypothesis;
        filter.latest_versions_only = true;
        if (req.has_param("status")) {
            filter.status = parse_hypothesis_status(req.get_param_value("status"));
            if (!filter.status) throw Error(ErrorCode::validation, "query parameter 'status' is not a hypothesis status");
        }
        send(res, 200, page(store->query(filter), filter, "hypothesis"));
    });

    server.Get(R"(/api/hypotheses/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto event = store->latest_hypothesis(id);
        if (!event) throw Error(ErrorCode::not_found, "no hypothesis " + id);
        send(res, 200,
             {{"event_id", event->id}, {"versions", store->hypothesis_versions(id)}, {"hypothesis", json::parse(event->payload)}});
    });

    server.Get(R"(/api/predictions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto event = store->latest_hypothesis(id);
        if (!event) throw Error(ErrorCode::not_found, "no hypothesis " + id);
        const auto h = detail::hypothesis_from(json::parse(event->payload));
        json candidates = json::array();
        json chart = json::array();
        std::vector<Candidate> by_score = h.candidates;
        std::stable_sort(by_score.begin(), by_score.end(),
                         [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
        auto group_json = [&](const Candidate& c) {
            const auto* g = ics->find_group(c.group_id);
            return json{{"group_id", c.group_id},
                        {"name", g ? g->name : c.group_id},
                        {"score", c.score},
                        {"in_candidate_set", c.in_candidate_set},
                        {"url", "https://attack.mitre.org/groups/" + c.group_id + "/"}};
        };
        for (const auto& c : h.candidates) candidates.push_back(group_json(c));
        for (const auto& c : by_score) chart.push_back(group_json(c));
        json future = json::array();
        for (const auto& p : h.predicted_future) {
            const auto* t = ics->find_technique(p.technique_id);
            const auto* tactic = ics->find_tactic(p.tactic_id);
            future.push_back({{"technique_id", p.technique_id},
                              {"name", t ? t->name : p.technique_id},
                              {"tactic_id", p.tactic_id},
                              {"tactic_name", tactic ? tactic->name : p.tactic_id}});
        }
        send(res, 200,
             {{"hypothesis_id", h.id},
              {"status", to_string(h.status)},
              {"low_confidence", h.candidates.empty() || h.candidates.front().score < 0},
              {"candidates", candidates},
              {"chart", chart},
              {"predicted_future", future}});
    });

    server.Post("/api/ingest", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body.empty() ? "{}" : req.body);
        if (!body.contains("capture_path") || !body.at("capture_path").is_string())
            throw Error(ErrorCode::validation, "request needs a capture_path string");
        CaptureSource source{SourceKind::file, body.at("capture_path").get<std::string>()};
        json warnings = json::array();
        std::vector<PacketRecord> records;
        try {
            records = read_capture(source);
        } catch (const PartialReadError& e) {
            records = e.records();
            warnings.push_back(e.what());
        }
        std::lock_guard lock(ingest_mutex);
        const auto model_now = current_model();
        const auto report = run_hunt(records, rules, *ics, *model_now, store.get());
        json detection_ids = json::array();
        json detection_events = json::array();
        json hypothesis_ids = json::array();
        for (const auto& d : report.detections) detection_ids.push_back(d.id);
        for (auto id : report.event_ids)
            if (store->get(id).kind == EventKind::detection) detection_events.push_back(id);
        for (const auto& h : report.hypotheses) hypothesis_ids.push_back(h.id);
        send(res, 200,
             {{"packets", report.packets},
              {"frames", report.frames},
              {"detection_ids", detection_ids},
              {"detection_event_ids", detection_events},
              {"hypothesis_ids", hypothesis_ids},
              {"warnings", warnings}});
    });

    server.Post("/api/classifier/train", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body.empty() ? "{}" : req.body);
        TrainingRequest request;
        request.granularity = config.granularity;
        if (body.contains("domain")) {
            auto d = parse_domain(body.at("domain").get<std::string>());
            if (!d) throw Error(ErrorCode::validation, "domain must be ics or enterprise");
            request.domain = *d;
        }
        if (body.contains("granularity")) {
            auto g = parse_granularity(body.at("granularity").get<std::string>());
            if (!g) throw Error(ErrorCode::validation, "granularity must be tactic or technique");
            request.granularity = *g;
        }
        request.seed = body.value("seed", request.seed);
        request.noise = body.value("noise", request.noise);
        request.copies = body.value("copies", request.copies);
        if (!(request.noise >= 0.0 && request.noise < 0.5)) throw Error(ErrorCode::validation, "noise must be in [0, 0.5)");
        if (request.copies > 1000) throw Error(ErrorCode::validation, "copies must be at most 1000");
        const KnowledgeBase* kb = request.domain == Domain::ics ? ics.get() : enterprise.get();
        if (!kb) throw Error(ErrorCode::validation, "the enterprise bundle is not loaded");

        auto outcome = run_training(*kb, request);
        const auto event_id = store->append(outcome.run);
        const bool activate = request.domain == Domain::ics;
        if (activate) {
            std::lock_guard lock(model_mutex);
            model = std::make_shared<const TrainedModel>(std::move(outcome.model));
        }
        send(res, 200, {{"event_id", event_id}, {"run", detail::model_run_json(outcome.run)}, {"active", activate}});
    });

    server.Get("/api/stream", [this](const httplib::Request& req, httplib::Response& res) { stream(req, res); });
}

void HuntService::Impl::stream(const httplib::Request&, httplib::Response& res) {
    auto sub = std::make_shared<Subscriber>();
    {
        std::lock_guard lock(subscribers_mutex);
        subscribers.push_back(sub);
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_header("X-Accel-Buffering", "no");
    auto greeted = std::make_shared<bool>(false);
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, sub, greeted](std::size_t, httplib::DataSink& sink) {
            if (!*greeted) {
                *greeted = true;
                const std::string hello = ": connected\n\n";
                return sink.write(hello.data(), hello.size());
            }
            std::unique_lock lock(sub->mutex);
            sub->ready.wait_for(lock, std::chrono::milliseconds(500),
                                [&] { return !sub->queue.empty() || sub->closed; });
            while (!sub->queue.empty()) {
                const auto frame = sse_frame(sub->queue.front());
                sub->queue.pop_front();
                lock.unlock();
                if (!sink.write(frame.data(), frame.size())) return false;
                lock.lock();
            }
            if (sub->closed) {
                if (sub->overflowed) {
                    const std::string notice = "event: overflow\ndata: {\"schema_version\":1,\"disconnected\":true}\n\n";
                    sink.write(notice.data(), notice.size());
                }
                sink.done();
                return true;
            }
            if (stopped) {
                sink.done();
                return true;
            }
            const std::string keepalive = ": keepalive\n\n";
            return sink.is_writable() && sink.write(keepalive.data(), keepalive.size());
        },
        [this, sub](bool) {
            std::lock_guard lock(subscribers_mutex);
            subscribers.remove(sub);
        });
}

HuntService::HuntService(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}

HuntService::~HuntService() {
    stop();
    if (impl_->thread.joinable()) impl_->thread.join();
    if (impl_->store) impl_->store->unsubscribe(impl_->listener_token);
}

std::unique_ptr<HuntService> HuntService::start(const ApiConfig& config) {
    auto impl = std::make_unique<Impl>();
    impl->config = config;
    require_path(config.ics_bundle, "ICS bundle");
    if (config.enterprise_bundle) require_path(*config.enterprise_bundle, "enterprise bundle");
    if (config.rules != "default") require_path(config.rules, "rule file");
    if (config.model_path) require_path(*config.model_path, "model file");
    if (config.store_path.has_parent_path() && !std::filesystem::exists(config.store_path.parent_path()))
        throw Error(ErrorCode::startup, "store directory not found: " + config.store_path.parent_path().string());

    try {
        impl->ics = std::make_unique<KnowledgeBase>(load_bundle_file(config.ics_bundle, Domain::ics));
        if (config.enterprise_bundle)
            impl->enterprise =
                std::make_unique<KnowledgeBase>(load_bundle_file(*config.enterprise_bundle, Domain::enterprise));
        impl->rules = config.rules == "default" ? load_default_rules(*impl->ics) : load_rules_file(config.rules, *impl->ics);
        if (config.model_path) {
            impl->model = std::make_shared<const TrainedModel>(load_model_file(*config.model_path));
        } else {
            TrainingRequest request;
            request.granularity = config.granularity;
            impl->model = std::make_shared<const TrainedModel>(run_training(*impl->ics, request).model);
        }
    } catch (const Error& e) {
        throw Error(ErrorCode::startup, std::string("cannot load dependencies: ") + e.what());
    }
    try {
        impl->store = EventStore::open(config.store_path);
    } catch (const Error& e) {
        throw Error(ErrorCode::startup, std::string("cannot open store: ") + e.what() +
                                            " (move the file aside to start with an empty store)");
    }

    auto* raw = impl.get();
    impl->listener_token = impl->store->subscribe([raw](const StoredEvent& event) {
        if (event.kind != EventKind::model_run) raw->publish(event);
    });
    impl->routes();

    if (config.port == 0) {
        const int port = impl->server.bind_to_any_port(config.bind_address);
        if (port <= 0) throw Error(ErrorCode::startup, "cannot bind " + config.bind_address);
        impl->port = static_cast<std::uint16_t>(port);
    } else {
        if (!impl->server.bind_to_port(config.bind_address, config.port))
            throw Error(ErrorCode::startup,
                        "cannot bind " + config.bind_address + ":" + std::to_string(config.port) + " (port in use?)");
        impl->port = config.port;
    }
    impl->thread = std::thread([raw] { raw->server.listen_after_bind(); });
    impl->server.wait_until_ready();
    spdlog::info("hunt service listening on {}:{}", config.bind_address, impl->port);
    return std::unique_ptr<HuntService>(new HuntService(std::move(impl)));
}

std::uint16_t HuntService::port() const noexcept { return impl_->port; }

std::string HuntService::base_url() const {
    return "http://" + impl_->config.bind_address + ":" + std::to_string(impl_->port);
}

EventStore& HuntService::store() noexcept { return *impl_->store; }

std::size_t HuntService::publish_alert(const StoredEvent& event) { return impl_->publish(event); }

std::size_t HuntService::subscriber_count() const {
    std::lock_guard lock(impl_->subscribers_mutex);
    return impl_->subscribers.size();
}

void HuntService::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

void HuntService::stop() {
    if (impl_->stopped.exchange(true)) return;
    impl_->close_subscribers();
    impl_->server.stop();
}

}  // namespace icshunt
