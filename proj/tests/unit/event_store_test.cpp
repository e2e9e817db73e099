#include "icshunt/error.hpp"
#include "icshunt/event_store.hpp"
#include "icshunt/records.hpp"

#include "oracles.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <gtest/gtest.h>

using namespace icshunt;
namespace fs = std::filesystem;

namespace {

class EventStoreTest : public ::testing::Test {
protected:
    void SetUp() override {
        path_ = fs::temp_directory_path() /
                ("icshunt-store-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + ".db");
        fs::remove(path_);
    }
    void TearDown() override { fs::remove(path_); }

    std::unique_ptr<EventStore> open(StoreOptions options = {}) { return EventStore::open(path_, options); }

    fs::path path_;
};

Detection detection(int n, const std::string& attacker, const std::string& type) {
    Detection d;
    d.id = "det-" + std::to_string(n);
    d.timestamp = Timestamp::from_parts(1000 + n, 0);
    d.attacker_ip = *Ipv4Address::parse(attacker);
    d.victim_ip = *Ipv4Address::parse("10.0.1.1");
    d.attack_type = type;
    d.rule_id = "R";
    d.technique_ids = {"T0841"};
    d.tactic_ids = {"TA0102"};
    return d;
}

Hypothesis hypothesis(const std::string& id, std::uint64_t version, HypothesisStatus status,
                      std::vector<std::string> detections, std::int64_t t) {
    Hypothesis h;
    h.id = id;
    h.version = version;
    h.attacker_ip = *Ipv4Address::parse("10.0.0.1");
    h.victim_ip = *Ipv4Address::parse("10.0.1.1");
    h.detection_ids = std::move(detections);
    h.status = status;
    h.created_at = Timestamp::from_parts(t, 0);
    h.updated_at = Timestamp::from_parts(t + static_cast<std::int64_t>(version), 0);
    return h;
}

std::vector<StoredEvent> all_events(const EventStore& store) {
    std::vector<StoredEvent> out;
    for (std::uint64_t id = 1; id <= store.last_id(); ++id) out.push_back(store.get(id));
    return out;
}

}  // namespace

TEST_F(EventStoreTest, FirstIdIsOneAndIdsIncrease) {
    auto store = open();
    EXPECT_EQ(store->size(), 0u);
    EXPECT_EQ(store->append(detection(1, "10.0.0.1", "Network Scan")), 1u);
    EXPECT_EQ(store->append(detection(2, "10.0.0.1", "Network Scan")), 2u);
    EXPECT_EQ(store->last_id(), 2u);
}

TEST_F(EventStoreTest, GetReturnsPayloadAndMissingIdsAreNotFound) {
    auto store = open();
    try {
        store->get(0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::not_found);
    }
    const auto d = detection(1, "10.0.0.1", "Network Scan");
    const auto id = store->append(d);
    const auto e = store->get(id);
    EXPECT_EQ(e.kind, EventKind::detection);
    EXPECT_EQ(e.created_at, d.timestamp);
    EXPECT_EQ(detection_from_json(e.payload), d);
    EXPECT_THROW(store->get(id + 1), Error);
}

TEST_F(EventStoreTest, AppendRejectsPayloadsOfTheWrongKind) {
    auto store = open();
    EXPECT_THROW(store->append(EventKind::detection, "{}"), Error);
    EXPECT_THROW(store->append(EventKind::hypothesis, to_json(detection(1, "10.0.0.1", "X"))), Error);
    EXPECT_EQ(store->size(), 0u);
}

TEST_F(EventStoreTest, ReopenRestoresEverything) {
    std::vector<std::string> payloads;
    {
        auto store = open();
        for (int i = 0; i < 100; ++i) {
            const auto d = detection(i, "10.0.0." + std::to_string(i % 5 + 1), i % 2 ? "Network Scan" : "Unauthorized Write");
            store->append(d);
            payloads.push_back(store->get(store->last_id()).payload);
        }
    }
    auto store = open();
    ASSERT_EQ(store->size(), 100u);
    std::mt19937_64 rng(4);
    for (int i = 0; i < 100; ++i) {
        const auto id = rng() % 100 + 1;
        EXPECT_EQ(store->get(id).payload, payloads[id - 1]);
    }
    EXPECT_TRUE(store->find_detection("det-42"));
    EXPECT_EQ(store->append(detection(200, "10.0.0.1", "X")), 101u);
}

TEST_F(EventStoreTest, TornTailIsDiscarded) {
    {
        auto store = open();
        store->append(detection(1, "10.0.0.1", "X"));
        store->append(detection(2, "10.0.0.1", "X"));
    }
    const auto full = fs::file_size(path_);
    fs::resize_file(path_, full - 7);
    auto store = open();
    EXPECT_EQ(store->size(), 1u);
    EXPECT_GT(store->recovered_bytes(), 0u);
    EXPECT_EQ(store->append(detection(3, "10.0.0.1", "X")), 2u);
    store.reset();
    EXPECT_EQ(open()->size(), 2u);
}

TEST_F(EventStoreTest, CorruptionBeforeTheTailIsAnIntegrityError) {
    {
        auto store = open();
        store->append(detection(1, "10.0.0.1", "X"));
        store->append(detection(2, "10.0.0.1", "X"));
    }
    {
        std::fstream f(path_, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(30);
        f.put('#');
    }
    try {
        open();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::integrity);
    }
}

TEST_F(EventStoreTest, RejectsForeignFiles) {
    std::ofstream(path_) << "hello world, not a store";
    EXPECT_THROW(open(), Error);
}

TEST_F(EventStoreTest, QueriesEqualFullScan) {
    auto store = open();
    const std::vector<std::string> attackers{"10.0.0.1", "10.0.0.2", "10.0.0.3"};
    const std::vector<std::string> types{"Network Scan", "Unauthorized Write"};
    std::mt19937_64 rng(8);
    for (int i = 0; i < 60; ++i) {
        if (i % 4 == 3) {
            const auto id = "hyp-" + std::to_string(i % 3);
            const auto version = store->hypothesis_versions(id) + 1;
            store->append(hypothesis(id, version, version % 2 ? HypothesisStatus::generated : HypothesisStatus::validated,
                                     {"det-" + std::to_string(i - 1)}, 1000 + i));
        } else {
            store->append(detection(i, attackers[rng() % 3], types[rng() % 2]));
        }
    }
    const auto events = all_events(*store);
    std::vector<QueryFilter> filters(12);
    filters[1].kind = EventKind::detection;
    filters[2].attacker_ip = *Ipv4Address::parse("10.0.0.2");
    filters[3].attack_type = "Unauthorized Write";
    filters[4].kind = EventKind::hypothesis, filters[4].latest_versions_only = true;
    filters[5].status = HypothesisStatus::validated;
    filters[6].from = Timestamp::from_parts(1010, 0), filters[6].to = Timestamp::from_parts(1030, 0);
    filters[7].limit = 5, filters[7].offset = 3;
    filters[8].attacker_ip = *Ipv4Address::parse("10.0.0.1"), filters[8].kind = EventKind::hypothesis;
    filters[9].offset = 1000;
    filters[10].attacker_ip = *Ipv4Address::parse("10.9.9.9");
    filters[11].limit = 0;
    for (std::size_t i = 0; i < filters.size(); ++i) {
        const auto got = store->query(filters[i]);
        const auto want = testkit::scan_query(events, filters[i]);
        EXPECT_EQ(got.total, want.total) << "filter " << i;
        EXPECT_EQ(got.events, want.events) << "filter " << i;
    }
}

TEST_F(EventStoreTest, PaginationAndLimits) {
    auto store = open();
    EXPECT_EQ(store->query({}).total, 0u);
    for (int i = 0; i < 5; ++i) store->append(detection(i, "10.0.0.1", "X"));
    QueryFilter page;
    page.limit = 2;
    const auto r = store->query(page);
    EXPECT_EQ(r.total, 5u);
    ASSERT_EQ(r.events.size(), 2u);
    EXPECT_EQ(r.events[0].id, 5u);
    page.limit = 501;
    EXPECT_THROW(store->query(page), Error);
    QueryFilter reversed;
    reversed.from = Timestamp::from_parts(10, 0);
    reversed.to = Timestamp::from_parts(5, 0);
    EXPECT_THROW(store->query(reversed), Error);
}

TEST_F(EventStoreTest, HypothesisVersionsAndLinks) {
    auto store = open();
    store->append(detection(1, "10.0.0.1", "X"));
    store->append(hypothesis("hyp-a", 1, HypothesisStatus::generated, {"det-1"}, 5));
    store->append(detection(2, "10.0.0.1", "X"));
    store->append(hypothesis("hyp-a", 2, HypothesisStatus::validated, {"det-1", "det-2"}, 5));
    EXPECT_EQ(store->hypothesis_versions("hyp-a"), 2u);
    EXPECT_EQ(hypothesis_from_json(store->latest_hypothesis("hyp-a")->payload).version, 2u);
    const auto linked = store->hypotheses_for_detection("det-1");
    ASSERT_EQ(linked.size(), 1u);
    EXPECT_EQ(linked[0].id, 4u);
    EXPECT_EQ(store->hypotheses_for_detection("det-2").size(), 1u);
    EXPECT_FALSE(store->latest_hypothesis("hyp-b"));
    EXPECT_EQ(store->hypothesis_versions("hyp-b"), 0u);
}

TEST_F(EventStoreTest, ListenersSeeAppendsInOrder) {
    auto store = open();
    std::vector<std::uint64_t> seen;
    const auto token = store->subscribe([&](const StoredEvent& e) { seen.push_back(e.id); });
    for (int i = 0; i < 3; ++i) store->append(detection(i, "10.0.0.1", "X"));
    store->unsubscribe(token);
    store->append(detection(9, "10.0.0.1", "X"));
    EXPECT_EQ(seen, (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST_F(EventStoreTest, ConcurrentReadersDuringAppends) {
    auto store = open({500, false});
    std::atomic<bool> done{false};
    std::thread reader([&] {
        while (!done) {
            const auto r = store->query({});
            for (std::size_t i = 1; i < r.events.size(); ++i) ASSERT_GT(r.events[i - 1].id, r.events[i].id);
        }
    });
    for (int i = 0; i < 300; ++i) store->append(detection(i, "10.0.0.1", "X"));
    done = true;
    reader.join();
    EXPECT_EQ(store->size(), 300u);
}
