#include "cli.hpp"

#include "icshunt/error.hpp"
#include "icshunt/hunt_pipeline.hpp"
#include "icshunt/hunt_service.hpp"
#include "icshunt/traffic_lab.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace icshunt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path data_dir = ICSHUNT_DEFAULT_DATA_DIR;

struct Common {
    std::string bundle_ics = (data_dir / "attack" / "ics-attack.json").string();
    std::string bundle_enterprise;
    std::string granularity = "technique";
    std::string format = "table";
    bool verbose = false;
};

void add_common(CLI::App& cmd, Common& common) {
    cmd.add_option("--bundle-ics", common.bundle_ics, "ICS ATT&CK STIX bundle")
        ->envname("ICSHUNT_BUNDLE_ICS")
        ->capture_default_str();
    cmd.add_option("--granularity", common.granularity, "Feature granularity")
        ->envname("ICSHUNT_GRANULARITY")
        ->check(CLI::IsMember({"tactic", "technique"}))
        ->capture_default_str();
    cmd.add_option("--format", common.format, "Output format")
        ->envname("ICSHUNT_FORMAT")
        ->check(CLI::IsMember({"table", "record-stream"}))
        ->capture_default_str();
    cmd.add_flag("-v,--verbose", common.verbose, "Log progress to stderr");
}

Granularity granularity_of(const Common& common) { return *parse_granularity(common.granularity); }

std::string enterprise_path(const Common& common) {
    if (!common.bundle_enterprise.empty()) return common.bundle_enterprise;
    const auto fallback = data_dir / "attack" / "enterprise-attack.json";
    return fs::exists(fallback) ? fallback.string() : std::string{};
}

std::string join(const std::vector<std::string>& items, std::string_view sep = ",") {
    std::string out;
    for (const auto& item : items) {
        if (!out.empty()) out += sep;
        out += item;
    }
    return out;
}

void emit(std::ostream& out, std::string_view kind, const std::string& record) {
    out << R"({"kind":")" << kind << R"(","record":)" << record << "}\n";
}

int ingest_knowledge(const Common& common, std::ostream& out) {
    std::vector<std::pair<Domain, std::string>> bundles{{Domain::ics, common.bundle_ics}};
    if (const auto enterprise = enterprise_path(common); !enterprise.empty())
        bundles.emplace_back(Domain::enterprise, enterprise);

    if (common.format == "table")
        out << fmt::format("{:<11} {:<10} {:>7} {:>10} {:>6} {:>8}  {}\n", "DOMAIN", "VERSION", "TACTICS",
                           "TECHNIQUES", "GROUPS", "WARNINGS", "BUNDLE");
    for (const auto& [domain, path] : bundles) {
        const auto kb = load_bundle_file(path, domain);
        kb.check_integrity();
        for (const auto& warning : kb.warnings()) spdlog::warn("{}: {}", path, warning);
        if (common.format == "table") {
            out << fmt::format("{:<11} {:<10} {:>7} {:>10} {:>6} {:>8}  {}\n", to_string(domain), kb.bundle_version(),
                               kb.tactics().size(), kb.techniques().size(), kb.groups().size(), kb.warnings().size(),
                               path);
        } else {
            json tactics = json::array();
            for (const auto& t : kb.tactics()) tactics.push_back({{"id", t.id}, {"name", t.name}});
            emit(out, "knowledge",
                 json{{"domain", to_string(domain)},
                      {"bundle_version", kb.bundle_version()},
                      {"tactics", tactics},
                      {"techniques", kb.techniques().size()},
                      {"groups", kb.groups().size()},
                      {"warnings", kb.warnings()}}
                     .dump());
        }
    }
    return 0;
}

struct TrafficArgs {
    std::string out_path;
    std::string truth_path;
    std::uint64_t seed = 42;
    std::vector<std::string> steps;
    std::size_t background = 20;
    double gap = 0.2;
    std::uint16_t port = 5300;
};

int generate_traffic(const Common& common, const TrafficArgs& args, std::ostream& out) {
    ScenarioSpec spec;
    spec.seed = args.seed;
    spec.background_traffic = args.background;
    spec.inter_packet_gap = args.gap;
    spec.victim_port = args.port;
    if (!args.steps.empty()) {
        spec.steps.clear();
        for (const auto& name : args.steps) {
            if (name == "none") continue;
            const auto step = parse_attack_step(name);
            if (!step) throw Error(ErrorCode::validation, "unknown attack step '" + name + "'");
            spec.steps.push_back(*step);
        }
    }
    const auto scenario = generate_scenario(spec);
    const auto bytes = write_capture(scenario.records, args.out_path);
    const auto truth = ground_truth_to_json(scenario.truth);
    if (!args.truth_path.empty()) {
        std::ofstream file(args.truth_path, std::ios::binary | std::ios::trunc);
        file << truth << '\n';
        if (!file) throw Error(ErrorCode::io, "cannot write " + args.truth_path);
    }
    if (common.format == "record-stream") {
        emit(out, "ground_truth", truth);
        return 0;
    }
    out << fmt::format("wrote {} packets ({} bytes) to {}\n", scenario.records.size(), bytes, args.out_path);
    out << fmt::format("{:<24} {:>6} {:>6}  {}\n", "STEP", "FIRST", "LAST", "TECHNIQUES");
    for (const auto& step : scenario.truth.steps)
        out << fmt::format("{:<24} {:>6} {:>6}  {}\n", step.attack_type, step.first_packet, step.last_packet,
                           join(step.technique_ids));
    return 0;
}

struct HuntArgs {
    std::string capture;
    std::string live;
    std::string rules = "default";
    std::string store;
    std::string model;
    std::uint64_t seed = 42;
};

TrainedModel load_or_train(const KnowledgeBase& kb, const std::string& model_path, Granularity granularity,
                           std::uint64_t seed) {
    if (!model_path.empty()) return load_model_file(model_path);
    TrainingRequest request;
    request.granularity = granularity;
    request.seed = seed;
    return run_training(kb, request).model;
}

int hunt(const Common& common, const HuntArgs& args, std::ostream& out) {
    const auto kb = load_bundle_file(common.bundle_ics, Domain::ics);
    const auto rules = args.rules == "default" ? load_default_rules(kb) : load_rules_file(args.rules, kb);
    const auto model = load_or_train(kb, args.model, granularity_of(common), args.seed);

    CaptureSource source{args.live.empty() ? SourceKind::file : SourceKind::live,
                         args.live.empty() ? args.capture : args.live};
    std::vector<PacketRecord> records;
    try {
        records = read_capture(source);
    } catch (const PartialReadError& e) {
        spdlog::warn("{}; hunting over the {} packets read", e.what(), e.records().size());
        records = e.records();
    }

    std::unique_ptr<EventStore> store;
    if (!args.store.empty()) store = EventStore::open(args.store);
    const auto report = run_hunt(records, rules, kb, model, store.get());

    if (common.format == "record-stream") {
        for (const auto& d : report.detections) emit(out, "detection", to_json(d));
        for (const auto& h : report.hypotheses) emit(out, "hypothesis", to_json(h));
        return 0;
    }

    out << fmt::format("packets {}  modbus frames {}  detections {}  hypotheses {}\n\n", report.packets,
                       report.frames, report.detections.size(), report.hypotheses.size());
    out << fmt::format("{:<27} {:<15} {:<15} {:<22} {:<10} {:<7} {}\n", "TIME", "ATTACKER", "VICTIM", "ATTACK TYPE",
                       "RULE", "SEV", "TECHNIQUES");
    std::map<std::string, std::size_t> per_type;
    for (const auto& d : report.detections) {
        ++per_type[d.attack_type];
        out << fmt::format("{:<27} {:<15} {:<15} {:<22} {:<10} {:<7} {}\n", d.timestamp.to_iso8601(),
                           d.attacker_ip.to_string(), d.victim_ip.to_string(), d.attack_type, d.rule_id,
                           to_string(d.severity), join(d.technique_ids));
    }
    out << '\n'
        << fmt::format("{:<21} {:>3} {:<9} {:<15} {:<15} {:<24} {:>9}\n", "HYPOTHESIS", "VER", "STATUS", "ATTACKER",
                       "VICTIM", "TOP CANDIDATE", "PREDICTED");
    for (const auto& h : report.hypotheses) {
        std::string top = "-";
        if (!h.candidates.empty()) {
            const auto* group = kb.find_group(h.candidates.front().group_id);
            top = h.candidates.front().group_id + (group ? " " + group->name : "");
        }
        out << fmt::format("{:<21} {:>3} {:<9} {:<15} {:<15} {:<24} {:>9}\n", h.id, h.version, to_string(h.status),
                           h.attacker_ip.to_string(), h.victim_ip.to_string(), top, h.predicted_future.size());
    }
    out << "\nattack types:";
    for (const auto& [type, count] : per_type) out << fmt::format(" {} ({})", type, count);
    out << (per_type.empty() ? " none\n" : "\n");
    if (store) out << fmt::format("stored {} events in {}\n", report.event_ids.size(), args.store);
    return 0;
}

struct TrainArgs {
    std::string domain = "ics";
    std::uint64_t seed = 42;
    double noise = 0.0;
    std::size_t copies = 0;
    std::string store;
    std::string model_out;
};

int train_command(Common common, const TrainArgs& args, std::ostream& out) {
    TrainingRequest request;
    request.domain = *parse_domain(args.domain);
    request.granularity = granularity_of(common);
    request.seed = args.seed;
    request.noise = args.noise;
    request.copies = args.copies;
    if (!(args.noise >= 0.0 && args.noise < 0.5)) throw Error(ErrorCode::validation, "--noise must be in [0, 0.5)");

    std::string bundle = common.bundle_ics;
    if (request.domain == Domain::enterprise) {
        bundle = enterprise_path(common);
        if (bundle.empty()) throw Error(ErrorCode::validation, "--bundle-enterprise is required for this domain");
    }
    const auto kb = load_bundle_file(bundle, request.domain);
    const auto outcome = run_training(kb, request);
    if (!args.model_out.empty()) save_model_file(outcome.model, args.model_out);
    if (!args.store.empty()) EventStore::open(args.store)->append(outcome.run);

    const auto& run = outcome.run;
    if (common.format == "record-stream") {
        emit(out, "model_run",
             json{{"id", run.id},
                  {"domain", to_string(run.domain)},
                  {"granularity", to_string(run.granularity)},
                  {"seed", run.seed},
                  {"noise", run.noise},
                  {"copies", run.copies},
                  {"classes", run.classes},
                  {"features", run.features},
                  {"train_rows", run.train_rows},
                  {"test_rows", run.test_rows},
                  {"epochs", run.epochs},
                  {"final_loss", run.final_loss},
                  {"clean_accuracy", run.clean_accuracy},
                  {"test_accuracy", run.test_accuracy},
                  {"excluded_groups", run.excluded_groups}}
                 .dump());
        return 0;
    }
    out << fmt::format("run             {}\n", run.id);
    out << fmt::format("domain          {} ({} granularity)\n", to_string(run.domain), to_string(run.granularity));
    out << fmt::format("classes         {}\n", run.classes);
    out << fmt::format("features        {}\n", run.features);
    out << fmt::format("rows            {} train, {} test\n", run.train_rows, run.test_rows);
    out << fmt::format("epochs          {}  final loss {:.6f}\n", run.epochs, run.final_loss);
    out << fmt::format("clean accuracy  {:.4f}\n", run.clean_accuracy);
    out << fmt::format("test accuracy   {:.4f}\n", run.test_accuracy);
    if (!run.excluded_groups.empty()) out << fmt::format("excluded        {}\n", join(run.excluded_groups));
    if (!args.model_out.empty()) out << fmt::format("model written to {}\n", args.model_out);
    return 0;
}

struct ServeArgs {
    std::string bind = "127.0.0.1:8080";
    std::string store = "hunt.db";
    std::string rules = "default";
    std::string model;
    std::vector<std::string> cors;
};

int serve(const Common& common, const ServeArgs& args, std::ostream& out) {
    const auto colon = args.bind.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::validation, "--bind must be ADDR:PORT");
    ApiConfig config;
    config.bind_address = args.bind.substr(0, colon);
    try {
        const auto port = std::stoul(args.bind.substr(colon + 1));
        if (port > 65535) throw std::out_of_range("port");
        config.port = static_cast<std::uint16_t>(port);
    } catch (const std::logic_error&) {
        throw Error(ErrorCode::validation, "--bind port must be 0-65535");
    }
    config.store_path = args.store;
    config.ics_bundle = common.bundle_ics;
    if (const auto enterprise = enterprise_path(common); !enterprise.empty()) config.enterprise_bundle = enterprise;
    config.rules = args.rules;
    if (!args.model.empty()) config.model_path = args.model;
    config.granularity = granularity_of(common);
    config.cors_allowlist = args.cors;

    // Block the shutdown signals before any server thread starts so only
    // sigwait below receives them.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    auto service = HuntService::start(config);
    out << fmt::format("listening on {}\n", service->base_url()) << std::flush;
    int received = 0;
    sigwait(&signals, &received);
    spdlog::info("received signal {}, shutting down", received);
    service->stop();
    service->wait();
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Threat hunting for Modbus/TCP networks using ATT&CK for ICS", "icshunt"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", "icshunt 0.1.0");

    Common common;
    auto* knowledge = app.add_subcommand("ingest-knowledge", "Load and check the ATT&CK bundles");
    add_common(*knowledge, common);
    knowledge->add_option("--bundle-enterprise", common.bundle_enterprise, "Enterprise ATT&CK STIX bundle")
        ->envname("ICSHUNT_BUNDLE_ENTERPRISE");

    TrafficArgs traffic;
    auto* generate = app.add_subcommand("generate-traffic", "Write a synthetic Modbus attack capture");
    add_common(*generate, common);
    generate->add_option("-o,--out", traffic.out_path, "Capture file to write")->required();
    generate->add_option("--truth", traffic.truth_path, "Ground-truth JSON file to write");
    generate->add_option("--seed", traffic.seed, "Scenario seed")->capture_default_str();
    generate->add_option("--steps", traffic.steps, "Attack steps in order, or none")
        ->delimiter(',')
        ->check(CLI::IsMember({"scan", "device_identification", "uid_enumeration", "state_modification", "none"}));
    generate->add_option("--background", traffic.background, "Benign poll pairs")->capture_default_str();
    generate->add_option("--gap", traffic.gap, "Seconds between attack packets")->capture_default_str();
    generate->add_option("--port", traffic.port, "Victim Modbus port")->capture_default_str();

    HuntArgs hunt_args;
    auto* hunt_cmd = app.add_subcommand("hunt", "Run the detection engine and hypothesis tracker over a capture");
    add_common(*hunt_cmd, common);
    auto* source = hunt_cmd->add_option_group("source", "Packet source");
    source->add_option("--capture", hunt_args.capture, "Capture file to read")->envname("ICSHUNT_CAPTURE");
    source->add_option("--live", hunt_args.live, "Network interface to capture from");
    source->require_option(1);
    hunt_cmd->add_option("--rules", hunt_args.rules, "Rule file, or default")
        ->envname("ICSHUNT_RULES")
        ->capture_default_str();
    hunt_cmd->add_option("--store", hunt_args.store, "Event store to append to")->envname("ICSHUNT_STORE");
    hunt_cmd->add_option("--model", hunt_args.model, "Trained model file (trained on the fly when absent)")
        ->envname("ICSHUNT_MODEL");
    hunt_cmd->add_option("--seed", hunt_args.seed, "Seed for on-the-fly training")->capture_default_str();

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train the group classifier and report accuracy");
    add_common(*train_cmd, common);
    train_cmd->add_option("--bundle-enterprise", common.bundle_enterprise, "Enterprise ATT&CK STIX bundle")
        ->envname("ICSHUNT_BUNDLE_ENTERPRISE");
    train_cmd->add_option("--domain", train_args.domain, "ATT&CK domain")
        ->check(CLI::IsMember({"ics", "enterprise"}))
        ->capture_default_str();
    train_cmd->add_option("--seed", train_args.seed, "Training and augmentation seed")->capture_default_str();
    train_cmd->add_option("--noise", train_args.noise, "Bit-flip rate for augmented copies")->capture_default_str();
    train_cmd->add_option("--copies", train_args.copies, "Noisy copies per group")->capture_default_str();
    train_cmd->add_option("--store", train_args.store, "Event store to record the run in")->envname("ICSHUNT_STORE");
    train_cmd->add_option("--model-out", train_args.model_out, "File to save the trained model to");

    ServeArgs serve_args;
    auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API and alert stream");
    add_common(*serve_cmd, common);
    serve_cmd->add_option("--bundle-enterprise", common.bundle_enterprise, "Enterprise ATT&CK STIX bundle")
        ->envname("ICSHUNT_BUNDLE_ENTERPRISE");
    serve_cmd->add_option("--bind", serve_args.bind, "ADDR:PORT to listen on (port 0 picks one)")
        ->envname("ICSHUNT_BIND")
        ->capture_default_str();
    serve_cmd->add_option("--store", serve_args.store, "Event store")->envname("ICSHUNT_STORE")->capture_default_str();
    serve_cmd->add_option("--rules", serve_args.rules, "Rule file, or default")
        ->envname("ICSHUNT_RULES")
        ->capture_default_str();
    serve_cmd->add_option("--model", serve_args.model, "Trained model file")->envname("ICSHUNT_MODEL");
    serve_cmd->add_option("--cors", serve_args.cors, "Allowed browser origins")->envname("ICSHUNT_CORS")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        err << "icshunt: " << e.what() << "\n";
        if (argc <= 1) err << "\n" << app.help();
        else err << "Run 'icshunt --help' for usage.\n";
        return 2;
    }

    auto logger = spdlog::stderr_color_mt("icshunt-cli");
    logger->set_level(common.verbose ? spdlog::level::info : spdlog::level::warn);
    auto previous = spdlog::default_logger();
    spdlog::set_default_logger(logger);
    struct Restore {
        std::shared_ptr<spdlog::logger> previous;
        ~Restore() {
            spdlog::drop("icshunt-cli");
            spdlog::set_default_logger(previous);
        }
    } restore{previous};

    try {
        if (knowledge->parsed()) return ingest_knowledge(common, out);
        if (generate->parsed()) return generate_traffic(common, traffic, out);
        if (hunt_cmd->parsed()) return hunt(common, hunt_args, out);
        if (train_cmd->parsed()) return train_command(common, train_args, out);
        return serve(common, serve_args, out);
    } catch (const Error& e) {
        err << "icshunt: error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    } catch (const std::exception& e) {
        err << "icshunt: error: " << e.what() << '\n';
    }
    return 1;
}

}  // namespace icshunt::cli
