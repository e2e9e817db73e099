#include "icshunt/attack_knowledge.hpp"
#include "icshunt/hunt_pipeline.hpp"
#include "icshunt/signature_engine.hpp"
#include "icshunt/traffic_lab.hpp"

#include <benchmark/benchmark.h>

using namespace icshunt;

namespace {

const KnowledgeBase& ics() {
    static const auto kb = load_bundle_file(ICSHUNT_BENCH_DATA_DIR "/attack/ics-attack.json", Domain::ics);
    return kb;
}

std::vector<PacketRecord> traffic(std::size_t polls) {
    ScenarioSpec spec;
    spec.background_traffic = polls;
    return generate_scenario(spec).records;
}

void BM_SignatureEngine(benchmark::State& state) {
    const auto rules = load_default_rules(ics());
    const auto records = traffic(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        EngineState engine;
        std::size_t n = 0;
        for (const auto& r : records) n += process_packet(engine, rules, r, extract_modbus(r)).size();
        benchmark::DoNotOptimize(n);
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * records.size()));
}
BENCHMARK(BM_SignatureEngine)->Arg(100)->Arg(5000);

void BM_HuntScenario(benchmark::State& state) {
    const auto rules = load_default_rules(ics());
    const auto model = run_training(ics(), {}).model;
    const auto records = traffic(20);
    for (auto _ : state) benchmark::DoNotOptimize(run_hunt(records, rules, ics(), model));
}
BENCHMARK(BM_HuntScenario);

}  // namespace
