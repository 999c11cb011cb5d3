#include <set>

#include <gtest/gtest.h>

#include "auditforge/distiller.hpp"
#include "fixtures.hpp"

namespace af = auditforge;
namespace ds = af::distiller;
namespace gw = af::gateway;
using af::testing::TempDir;

TEST(Catalog, DefaultHasTenUniqueScenarios) {
    const auto& c = ds::default_catalog();
    ASSERT_EQ(c.size(), 10u);
    std::set<std::string> ids;
    for (const auto& s : c) ids.insert(s.scenario_id);
    EXPECT_EQ(ids.size(), 10u);
}

TEST(Catalog, FileRoundTripAndDuplicates) {
    TempDir dir;
    ds::write_catalog(ds::default_catalog(), dir / "c.jsonl");
    EXPECT_EQ(ds::load_catalog(dir / "c.jsonl"), ds::default_catalog());

    af::testing::write_file(dir / "dup.jsonl",
                            "{\"scenario_id\":\"a\",\"title\":\"A\",\"description\":\"x\"}\n"
                            "{\"scenario_id\":\"a\",\"title\":\"B\",\"description\":\"y\"}\n");
    EXPECT_THROW(ds::load_catalog(dir / "dup.jsonl"), af::FormatError);
}

TEST(Policy, Parse) {
    EXPECT_EQ(ds::parse_policy("round-robin").kind, ds::ScenarioPolicy::Kind::RoundRobin);
    const auto p = ds::parse_policy("seeded-random:42");
    EXPECT_EQ(p.kind, ds::ScenarioPolicy::Kind::SeededRandom);
    EXPECT_EQ(p.seed, 42u);
    EXPECT_THROW(ds::parse_policy("shuffle"), af::ConfigError);
}

TEST(Selector, RoundRobinCyclesAndSeededIsReproducible) {
    const auto& cat = ds::default_catalog();
    ds::ScenarioSelector rr(cat, ds::ScenarioPolicy::round_robin());
    for (std::size_t i = 0; i < 2 * cat.size(); ++i) {
        EXPECT_EQ(rr.next().scenario_id, cat[i % cat.size()].scenario_id);
    }
    ds::ScenarioSelector a(cat, ds::ScenarioPolicy::seeded_random(7));
    ds::ScenarioSelector b(cat, ds::ScenarioPolicy::seeded_random(7));
    for (int i = 0; i < 50; ++i) EXPECT_EQ(a.next().scenario_id, b.next().scenario_id);
    EXPECT_THROW(ds::ScenarioSelector({}, ds::ScenarioPolicy::round_robin()), af::ValidationError);
}

TEST(Report, ParsesWrappedJsonAndNormalizesLabels) {
    const auto r = ds::parse_agent_report(
        "Here you go:\n```json\n{\"labels\":[{\"label_id\":\"Integer Overflow\",\"rationale\":\"x\",\"span\":[3,4]}],"
        "\"code\":\"pragma solidity ^0.8.0;\"}\n```");
    ASSERT_EQ(r.labels.size(), 1u);
    EXPECT_EQ(r.labels[0].label_id, "integer-overflow");
    EXPECT_EQ(r.labels[0].span, (af::corpus::LineSpan{3, 4}));
    EXPECT_TRUE(r.code.has_value());
    EXPECT_THROW(ds::parse_agent_report("nothing useful"), ds::ReportParseError);
}

TEST(Syntax, Checks) {
    EXPECT_NO_THROW(ds::check_contract_syntax("pragma solidity ^0.8.0;\ncontract A { string s = \"}\"; // }\n}\n"));
    EXPECT_THROW(ds::check_contract_syntax("pragma solidity ^0.8.0;\ncontract A {\n"), af::ValidationError);
    EXPECT_THROW(ds::check_contract_syntax("contract A {}\n"), af::ValidationError);
    EXPECT_THROW(ds::check_contract_syntax(""), af::ValidationError);
}

TEST(Distill, EachSeedYieldsVulnerableAndSecureEntries) {
    const auto seeds = af::testing::seed_entries(3);
    const auto& cat = ds::default_catalog();
    auto stub = af::testing::script_distillation(seeds, cat, ds::ScenarioPolicy::round_robin(), "teacher");
    const auto agents = ds::Agents::with_defaults(stub, "teacher");
    const auto result = ds::distill(seeds, agents, cat, ds::ScenarioPolicy::round_robin());

    EXPECT_TRUE(result.failures.empty());
    ASSERT_EQ(result.combined.size(), 6u);
    EXPECT_EQ(result.combined[0].entry_id, "seed-01-vuln");
    EXPECT_EQ(result.combined[3].entry_id, "seed-01-secure");
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& v = result.combined[i];
        const auto& s = result.combined[i + 3];
        EXPECT_EQ(v.provenance, af::corpus::Provenance::DistilledVulnerable);
        EXPECT_EQ(v.annotations.at(0).label_id, "reentrancy");
        EXPECT_EQ(v.annotations.at(0).span, af::testing::kBankVulnSpan);
        EXPECT_EQ(s.provenance, af::corpus::Provenance::DistilledSecure);
        EXPECT_EQ(s.source_entry_id, v.entry_id);
        EXPECT_TRUE(s.secure_rationale.has_value());
        EXPECT_NE(s.contract.source_text(), v.contract.source_text());
    }
}

TEST(Distill, ParallelismDoesNotChangeOutput) {
    const auto seeds = af::testing::seed_entries(4);
    const auto& cat = ds::default_catalog();
    const auto policy = ds::ScenarioPolicy::seeded_random(3);
    auto stub = af::testing::script_distillation(seeds, cat, policy, "teacher");
    const auto agents = ds::Agents::with_defaults(stub, "teacher");
    const auto serial = ds::distill(seeds, agents, cat, policy, {1});
    const auto parallel = ds::distill(seeds, agents, cat, policy, {4});
    EXPECT_EQ(serial.combined, parallel.combined);
}

TEST(Distill, FailuresAreRecordedPerSeedAndStage) {
    const auto seeds = af::testing::seed_entries(2);
    const auto& cat = ds::default_catalog();
    // Script only the first seed; the second misses at the distillation stage.
    auto stub = af::testing::script_distillation(std::span(seeds).first(1), cat, ds::ScenarioPolicy::round_robin(),
                                                 "teacher");
    const auto agents = ds::Agents::with_defaults(stub, "teacher");
    const auto result = ds::distill(seeds, agents, cat, ds::ScenarioPolicy::round_robin());
    ASSERT_EQ(result.failures.size(), 1u);
    EXPECT_EQ(result.failures[0].seed_id, "seed-02");
    EXPECT_EQ(result.failures[0].stage, ds::Stage::Distillation);
    EXPECT_EQ(result.combined.size(), 2u);

    TempDir dir;
    ds::write_failures(result.failures, dir / "f.jsonl");
    const auto line = af::Json::parse(af::read_text_file(dir / "f.jsonl"));
    EXPECT_EQ(line["stage"], "distillation");
}

TEST(Distill, SecureAgentMustChangeTheCode) {
    auto stub = std::make_shared<gw::StubBackend>();
    const auto agents = ds::Agents::with_defaults(stub, "teacher");
    const auto vuln = af::testing::vulnerable_entry("v", af::testing::bank_contract("B"),
                                                    {af::testing::annotation("reentrancy", af::testing::kBankVulnSpan)});
    stub->add(gw::stub_key(ds::security_request(agents, vuln)),
              {af::Json{{"code", vuln.contract.source_text()}, {"notes", "n"}}.dump()});
    EXPECT_THROW(ds::secure_variant(agents, vuln, ""), af::ValidationError);
}

TEST(Distill, TruncatedCompletionIsAnError) {
    auto stub = std::make_shared<gw::StubBackend>();
    const auto agents = ds::Agents::with_defaults(stub, "teacher");
    const af::corpus::ContractDocument doc("d", af::testing::bank_contract("B"), {});
    stub->add(gw::stub_key(ds::distillation_request(agents, doc)), {"{\"labels\":[", gw::FinishReason::Length});
    EXPECT_THROW(ds::analyze_seed(agents, doc), af::Error);
}
