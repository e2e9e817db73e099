#include "icshunt/error.hpp"
#include "icshunt/hunt_service.hpp"
#include "icshunt/traffic_lab.hpp"

#include "toy_kb.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <regex>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

using namespace icshunt;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static const auto dir = [] {
        auto d = fs::temp_directory_path() / "icshunt-service-test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

ApiConfig config(const std::string& store_name) {
    ApiConfig c;
    c.port = 0;
    c.store_path = temp_dir() / store_name;
    c.ics_bundle = testkit::data_file("attack/ics-attack.json");
    c.cors_allowlist = {"http://localhost:5173"};
    return c;
}

StoredEvent sample_event(std::uint64_t id) {
    Detection d;
    d.id = "det-" + std::to_string(id);
    d.attacker_ip = *Ipv4Address::parse("10.0.0.1");
    d.victim_ip = *Ipv4Address::parse("10.0.0.2");
    d.attack_type = "Network Scan";
    d.rule_id = "R";
    return {id, EventKind::detection, to_json(d), d.timestamp};
}

bool wait_for_subscribers(const HuntService& service, std::size_t n) {
    for (int i = 0; i < 300; ++i) {
        if (service.subscriber_count() == n) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return false;
}

struct StreamReader {
    std::future<void> connected;
    std::future<std::vector<std::uint64_t>> ids;
};

// Reads the event stream until `count` ids arrived or the stream ends.
// `connected` is ready once the server has registered the subscriber.
StreamReader read_stream(int port, std::size_t count) {
    auto connected = std::make_shared<std::promise<void>>();
    StreamReader reader;
    reader.connected = connected->get_future();
    reader.ids = std::async(std::launch::async, [port, count, connected] {
        httplib::Client client("127.0.0.1", port);
        client.set_read_timeout(10, 0);
        std::vector<std::uint64_t> ids;
        std::string buffer;
        bool greeted = false;
        const std::regex id_line(R"(^id: (\d+)$)");
        client.Get("/api/stream", [&](const char* data, std::size_t len) {
            buffer.append(data, len);
            std::size_t pos;
            while ((pos = buffer.find('\n')) != std::string::npos) {
                const auto line = buffer.substr(0, pos);
                buffer.erase(0, pos + 1);
                std::smatch m;
                if (!greeted && line == ": connected") {
                    greeted = true;
                    connected->set_value();
                }
                if (std::regex_match(line, m, id_line)) ids.push_back(std::stoull(m[1]));
            }
            return ids.size() < count;
        });
        if (!greeted) connected->set_value();
        return ids;
    });
    return reader;
}

class HuntServiceTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        fs::remove(temp_dir() / "shared.db");
        service_ = HuntService::start(config("shared.db")).release();
        client_ = new httplib::Client("127.0.0.1", service_->port());
        client_->set_read_timeout(60, 0);
    }
    static void TearDownTestSuite() {
        delete client_;
        delete service_;
    }

    static json get(const std::string& path, int expected = 200) {
        auto res = client_->Get(path);
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, expected) << path << ": " << res->body;
        return json::parse(res->body);
    }

    static json post(const std::string& path, const json& body, int expected = 200) {
        auto res = client_->Post(path, body.dump(), "application/json");
        EXPECT_TRUE(res);
        if (!res) return {};
        EXPECT_EQ(res->status, expected) << path << ": " << res->body;
        return json::parse(res->body);
    }

    static json ingest_scenario() {
        const auto path = temp_dir() / "scenario.pcap";
        const auto scenario = generate_scenario({});
        write_capture(scenario.records, path);
        return post("/api/ingest", {{"capture_path", path.string()}});
    }

    static HuntService* service_;
    static httplib::Client* client_;
};

HuntService* HuntServiceTest::service_ = nullptr;
httplib::Client* HuntServiceTest::client_ = nullptr;

}  // namespace

TEST_F(HuntServiceTest, HealthReportsReadyComponents) {
    const auto body = get("/api/health");
    EXPECT_EQ(body.at("schema_version"), api_schema_version);
    EXPECT_EQ(body.at("status"), "ready");
    const auto& c = body.at("components");
    for (const auto* name : {"store", "knowledge", "rules", "model"}) EXPECT_TRUE(c.at(name).at("ready")) << name;
    EXPECT_GT(c.at("model").at("classes").get<int>(), 1);
}

TEST_F(HuntServiceTest, IngestThenBrowseAttacks) {
    const auto report = ingest_scenario();
    EXPECT_EQ(report.at("packets"), 102);
    EXPECT_GE(report.at("detection_ids").size(), 4u);

    const auto attacks = get("/api/attacks?limit=100");
    EXPECT_GE(attacks.at("total").get<int>(), 4);
    std::set<std::string> types;
    for (const auto& item : attacks.at("items")) {
        const auto& d = item.at("detection");
        EXPECT_EQ(d.at("attacker_ip"), "192.168.56.101");
        EXPECT_EQ(d.at("victim_ip"), "192.168.56.20");
        types.insert(d.at("attack_type").get<std::string>());
    }
    EXPECT_EQ(types.size(), 4u);

    const auto first = attacks.at("items").at(0);
    const auto by_event = get("/api/attacks/" + std::to_string(first.at("event_id").get<int>()));
    EXPECT_EQ(by_event.at("detection"), first.at("detection"));
    EXPECT_FALSE(by_event.at("techniques").empty());
    EXPECT_TRUE(by_event.at("techniques").at(0).contains("name"));
    const auto by_id = get("/api/attacks/" + first.at("detection").at("id").get<std::string>());
    EXPECT_EQ(by_id.at("event_id"), first.at("event_id"));

    const auto filtered = get("/api/attacks?attack_type=Network%20Scan");
    for (const auto& item : filtered.at("items")) EXPECT_EQ(item.at("detection").at("attack_type"), "Network Scan");
    EXPECT_EQ(get("/api/attacks?attacker_ip=1.2.3.4").at("total"), 0);
}

TEST_F(HuntServiceTest, HypothesesAndPredictions) {
    const auto report = ingest_scenario();
    const auto hypotheses = get("/api/hypotheses");
    ASSERT_FALSE(hypotheses.at("items").empty());
    std::set<std::string> ids;
    for (const auto& item : hypotheses.at("items")) EXPECT_TRUE(ids.insert(item.at("hypothesis").at("id").get<std::string>()).second);

    const auto id = hypotheses.at("items").at(0).at("hypothesis").at("id").get<std::string>();
    const auto one = get("/api/hypotheses/" + id);
    EXPECT_GE(one.at("versions").get<int>(), 1);
    const auto prediction = get("/api/predictions/" + id);
    EXPECT_EQ(prediction.at("hypothesis_id"), id);
    ASSERT_FALSE(prediction.at("chart").empty());
    double previous = prediction.at("chart").at(0).at("score");
    for (const auto& entry : prediction.at("chart")) {
        EXPECT_LE(entry.at("score").get<double>(), previous);
        previous = entry.at("score");
        EXPECT_FALSE(entry.at("name").get<std::string>().empty());
    }
    for (const auto& p : prediction.at("predicted_future")) EXPECT_TRUE(p.contains("tactic_name"));

    EXPECT_TRUE(get("/api/hypotheses?status=maybe", 400).at("error").contains("message"));
}

TEST_F(HuntServiceTest, ErrorsAreJson) {
    auto body = get("/api/hypotheses/hyp-missing", 404);
    EXPECT_EQ(body.at("error").at("code"), "not_found");
    get("/api/predictions/hyp-missing", 404);
    get("/api/attacks/999999", 404);
    get("/api/attacks?limit=abc", 400);
    get("/api/attacks?limit=100000", 400);
    post("/api/ingest", json::object(), 400);
    post("/api/ingest", {{"capture_path", (temp_dir() / "nope.pcap").string()}}, 400);
    post("/api/classifier/train", {{"noise", 0.7}}, 400);
    post("/api/classifier/train", {{"domain", "enterprise"}}, 400);
}

TEST_F(HuntServiceTest, CorsForAllowedOriginsOnly) {
    httplib::Headers allowed{{"Origin", "http://localhost:5173"}};
    auto res = client_->Get("/api/health", allowed);
    ASSERT_TRUE(res);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
    res = client_->Get("/api/health", httplib::Headers{{"Origin", "http://evil.example"}});
    ASSERT_TRUE(res);
    EXPECT_FALSE(res->has_header("Access-Control-Allow-Origin"));
    res = client_->Options("/api/attacks", allowed);
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 204);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
}

TEST_F(HuntServiceTest, TrainingSwapsTheModel) {
    const auto body = post("/api/classifier/train", {{"seed", 7}});
    EXPECT_TRUE(body.at("active"));
    EXPECT_GT(body.at("event_id").get<int>(), 0);
    EXPECT_EQ(body.at("run").at("clean_accuracy"), 1.0);
    EXPECT_EQ(service_->store().get(body.at("event_id")).kind, EventKind::model_run);
}

TEST_F(HuntServiceTest, PublishWithoutSubscribersDeliversNothing) {
    // Streams from other tests close at their next write.
    ASSERT_TRUE(wait_for_subscribers(*service_, 0));
    EXPECT_EQ(service_->publish_alert(sample_event(1)), 0u);
}

TEST_F(HuntServiceTest, SubscriberReceivesPublishedEvent) {
    ASSERT_TRUE(wait_for_subscribers(*service_, 0));
    auto reader = read_stream(service_->port(), 1);
    reader.connected.get();
    EXPECT_EQ(service_->publish_alert(sample_event(77)), 1u);
    EXPECT_EQ(reader.ids.get(), (std::vector<std::uint64_t>{77}));
}

TEST_F(HuntServiceTest, SubscribersSeeEventsInPublishOrder) {
    ASSERT_TRUE(wait_for_subscribers(*service_, 0));
    auto a = read_stream(service_->port(), 10);
    auto b = read_stream(service_->port(), 10);
    a.connected.get();
    b.connected.get();
    std::vector<std::uint64_t> expected;
    for (std::uint64_t id = 100; id < 110; ++id) {
        EXPECT_EQ(service_->publish_alert(sample_event(id)), 2u);
        expected.push_back(id);
    }
    EXPECT_EQ(a.ids.get(), expected);
    EXPECT_EQ(b.ids.get(), expected);
}

TEST_F(HuntServiceTest, StoredDetectionsAreStreamed) {
    auto reader = read_stream(service_->port(), 1);
    reader.connected.get();
    Detection d;
    d.id = "det-streamed";
    d.attacker_ip = *Ipv4Address::parse("10.0.0.9");
    d.victim_ip = *Ipv4Address::parse("10.0.0.2");
    d.attack_type = "Network Scan";
    d.rule_id = "R";
    const auto event_id = service_->store().append(d);
    EXPECT_EQ(reader.ids.get(), (std::vector<std::uint64_t>{event_id}));
}

TEST(HuntServiceStartup, MissingBundleIsNamed) {
    auto c = config("missing.db");
    c.ics_bundle = temp_dir() / "no-such-bundle.json";
    try {
        HuntService::start(c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::startup);
        EXPECT_NE(std::string(e.what()).find("no-such-bundle.json"), std::string::npos);
    }
}

TEST(HuntServiceStartup, CorruptStoreIsAStartupError) {
    const auto path = temp_dir() / "corrupt.db";
    std::ofstream(path) << "garbage that is not a store";
    auto c = config("corrupt.db");
    try {
        HuntService::start(c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::startup);
    }
}
