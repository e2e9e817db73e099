#include "icshunt/event_store.hpp"

#include <filesystem>

#include <benchmark/benchmark.h>

using namespace icshunt;
namespace fs = std::filesystem;

namespace {

Detection detection(std::int64_t n) {
    Detection d;
    d.id = "det-" + std::to_string(n);
    d.timestamp = Timestamp::from_parts(1609459200 + n, 0);
    d.attacker_ip = Ipv4Address{0x0A000001u + static_cast<std::uint32_t>(n % 8)};
    d.victim_ip = Ipv4Address{0x0A000101u};
    d.attack_type = n % 2 ? "Network Scan" : "Unauthorized Write";
    d.rule_id = "R";
    d.technique_ids = {"T0846"};
    return d;
}

fs::path bench_path() {
    const auto path = fs::temp_directory_path() / "icshunt-bench.db";
    fs::remove(path);
    return path;
}

void BM_StoreAppend(benchmark::State& state) {
    const auto path = bench_path();
    auto store = EventStore::open(path, {500, state.range(0) != 0});
    std::int64_t n = 0;
    for (auto _ : state) benchmark::DoNotOptimize(store->append(detection(n++)));
    store.reset();
    fs::remove(path);
}
BENCHMARK(BM_StoreAppend)->Arg(0)->Arg(1);

void BM_StoreQuery(benchmark::State& state) {
    const auto path = bench_path();
    auto store = EventStore::open(path, {500, false});
    for (std::int64_t n = 0; n < state.range(0); ++n) store->append(detection(n));
    QueryFilter filter;
    filter.attacker_ip = Ipv4Address{0x0A000003u};
    filter.attack_type = "Network Scan";
    for (auto _ : state) benchmark::DoNotOptimize(store->query(filter));
    store.reset();
    fs::remove(path);
}
BENCHMARK(BM_StoreQuery)->Arg(1000)->Arg(20000);

void BM_StoreReopen(benchmark::State& state) {
    const auto path = bench_path();
    {
        auto store = EventStore::open(path, {500, false});
        for (std::int64_t n = 0; n < 10000; ++n) store->append(detection(n));
    }
    for (auto _ : state) benchmark::DoNotOptimize(EventStore::open(path));
    fs::remove(path);
}
BENCHMARK(BM_StoreReopen)->Unit(benchmark::kMillisecond);

}  // namespace
