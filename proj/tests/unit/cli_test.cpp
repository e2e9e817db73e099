#include "cli.hpp"

#include "toy_kb.hpp"

#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "icshunt");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = icshunt::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path temp(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "icshunt-cli-test";
    fs::create_directories(dir);
    return dir / name;
}

const std::string bundle = icshunt::testkit::data_file("attack/ics-attack.json");

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"hunt", "--no-such-flag"}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    const auto r = run({"hunt", "--bundle-ics", bundle});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());
}

TEST(Cli, HelpExitsWithZero) {
    const auto r = run({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("hunt"), std::string::npos);
}

TEST(Cli, IngestKnowledgeSummarisesTheBundle) {
    const auto r = run({"ingest-knowledge", "--bundle-ics", bundle});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("ics"), std::string::npos);
}

TEST(Cli, GenerateThenHuntFindsEveryAttackType) {
    const auto capture = temp("scenario.pcap");
    const auto store = temp("hunt.db");
    fs::remove(store);
    ASSERT_EQ(run({"generate-traffic", "-o", capture.string(), "--seed", "42"}).code, 0);
    const auto r = run({"hunt", "--bundle-ics", bundle, "--capture", capture.string(), "--store", store.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const auto* type : {"Network Scan", "Device Identification", "UID Enumeration", "Unauthorized Write"})
        EXPECT_NE(r.out.find(type), std::string::npos) << type << "\n" << r.out;
    EXPECT_TRUE(fs::exists(store));
}

TEST(Cli, RecordStreamIsJsonLines) {
    const auto capture = temp("stream.pcap");
    ASSERT_EQ(run({"generate-traffic", "-o", capture.string()}).code, 0);
    const auto r = run({"hunt", "--bundle-ics", bundle, "--capture", capture.string(), "--format", "record-stream"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream lines(r.out);
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) {
        EXPECT_EQ(line.rfind("{\"kind\":", 0), 0u) << line;
        ++count;
    }
    EXPECT_GT(count, 4);
}

TEST(Cli, TrainingIsDeterministic) {
    const std::vector<std::string> args{"train", "--bundle-ics", bundle, "--seed", "7", "--format", "record-stream"};
    const auto a = run(args);
    const auto b = run(args);
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
}

TEST(Cli, RuntimeFailuresExitWithOne) {
    const auto r = run({"hunt", "--bundle-ics", bundle, "--capture", temp("absent.pcap").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("error"), std::string::npos);
    EXPECT_EQ(run({"ingest-knowledge", "--bundle-ics", temp("absent.json").string()}).code, 1);
}
