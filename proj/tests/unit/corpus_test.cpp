#include <random>

#include <gtest/gtest.h>

#include "auditforge/corpus.hpp"
#include "auditforge/error.hpp"
#include "fixtures.hpp"

namespace af = auditforge;
namespace corpus = af::corpus;
using af::testing::TempDir;

TEST(Category, CodesAndNames) {
    EXPECT_EQ(corpus::category_code(corpus::Category::Reentrancy), "V2");
    EXPECT_EQ(corpus::category_code(corpus::Category::TimeManipulation), "V9");
    EXPECT_EQ(corpus::parse_category("V8"), corpus::Category::Arithmetic);
    EXPECT_EQ(corpus::parse_category("front-running"), corpus::Category::FrontRunning);
    EXPECT_EQ(corpus::parse_category("nonsense"), std::nullopt);
}

TEST(Category, AliasesResolveToolSpellings) {
    const auto& a = corpus::CategoryAliases::builtin();
    EXPECT_EQ(a.resolve("reentrancy-eth"), corpus::Category::Reentrancy);
    EXPECT_EQ(a.resolve("SWC-101"), corpus::Category::Arithmetic);
    EXPECT_EQ(a.resolve("tx.origin"), corpus::Category::AccessControl);
    EXPECT_EQ(a.resolve("Bad Randomness"), corpus::Category::BadRandomness);
    EXPECT_EQ(a.resolve("something-new"), corpus::Category::Uncategorized);

    corpus::CategoryAliases custom;
    custom.add("flash loan", corpus::Category::Other);
    EXPECT_EQ(custom.resolve("Flash-Loan"), corpus::Category::Other);
}

TEST(Document, RejectsControlCharacters) {
    EXPECT_THROW(corpus::ContractDocument("x", "a\x01b", {}), af::ValidationError);
    EXPECT_THROW(corpus::ContractDocument("x", "bad \xC3", {}), af::ValidationError);
    corpus::ContractDocument ok("x", "line1\n\tline2\n", {});
    EXPECT_EQ(ok.line_count(), 2u);
}

TEST(Entry, ValidateInvariants) {
    auto v = af::testing::vulnerable_entry("v", af::testing::bank_contract("B"),
                                           {af::testing::annotation("reentrancy", af::testing::kBankVulnSpan)});
    EXPECT_NO_THROW(corpus::validate(v));

    auto no_ann = v;
    no_ann.annotations.clear();
    EXPECT_THROW(corpus::validate(no_ann), af::ValidationError);

    auto out_of_range = v;
    out_of_range.annotations[0].span = corpus::LineSpan{10, 400};
    EXPECT_THROW(corpus::validate(out_of_range), af::ValidationError);

    auto s = af::testing::secure_entry("s", af::testing::fixed_bank_contract("B"));
    EXPECT_NO_THROW(corpus::validate(s));
    s.secure_rationale.reset();
    EXPECT_THROW(corpus::validate(s), af::ValidationError);

    auto s2 = af::testing::secure_entry("s2", af::testing::fixed_bank_contract("B"));
    s2.annotations.push_back(af::testing::annotation("reentrancy", std::nullopt));
    try {
        corpus::validate(s2);
        FAIL() << "expected rejection";
    } catch (const af::ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("s2"), std::string::npos);
    }
}

TEST(Entry, JsonRoundTrip) {
    auto v = af::testing::vulnerable_entry("v1", af::testing::bank_contract("B"),
                                           {af::testing::annotation("reentrancy", af::testing::kBankVulnSpan, "withdraw")});
    v.annotations[0].detectable = true;
    const auto back = corpus::entry_from_json(corpus::to_json(v), "test");
    EXPECT_EQ(back, v);

    auto s = af::testing::secure_entry("s1", af::testing::fixed_bank_contract("B"), corpus::Provenance::DistilledSecure);
    s.source_entry_id = "v1";
    EXPECT_EQ(corpus::entry_from_json(corpus::to_json(s), "test"), s);
}

TEST(Entry, WriteReadRoundTripProperty) {
    std::mt19937_64 rng(11);
    TempDir dir;
    for (int round = 0; round < 25; ++round) {
        std::vector<corpus::DatasetEntry> entries;
        const int n = static_cast<int>(rng() % 6);
        for (int i = 0; i < n; ++i) {
            const std::string text = af::testing::random_contract(rng, 1 + static_cast<int>(rng() % 4));
            const auto id = "e" + std::to_string(round) + "-" + std::to_string(i);
            if (rng() % 2 == 0) {
                const int lines = static_cast<int>(af::count_lines(text));
                const int a = 1 + static_cast<int>(rng() % lines);
                const int b = a + static_cast<int>(rng() % (lines - a + 1));
                entries.push_back(af::testing::vulnerable_entry(
                    id, text, {af::testing::annotation(rng() % 2 ? "integer-overflow" : "tx-origin", corpus::LineSpan{a, b})}));
            } else {
                entries.push_back(af::testing::secure_entry(id, text));
            }
            entries.back().dataset_version = static_cast<int>(rng() % 3);
        }
        const auto path = dir / "entries.jsonl";
        corpus::write_entries(entries, path);
        EXPECT_EQ(corpus::read_entries(path), entries) << "round " << round;
    }
}

TEST(Entry, ReadRequiresHeaderAndSchema) {
    TempDir dir;
    af::testing::write_file(dir / "no_header.jsonl", "");
    EXPECT_THROW(corpus::read_entries(dir / "no_header.jsonl"), af::FormatError);
    af::testing::write_file(dir / "wrong.jsonl", R"({"schema":"entry/9","kind":"header","count":0})" "\n");
    EXPECT_THROW(corpus::read_entries(dir / "wrong.jsonl"), af::FormatError);
}

TEST(Instructions, RoundTripAndValidation) {
    TempDir dir;
    std::vector<corpus::InstructionRecord> records{{"audit", "contract A {}", "{\"findings\":[]}"},
                                                   {"audit", "contract B {}\n", "No vulnerabilities."}};
    corpus::write_instructions(records, dir / "i.jsonl");
    EXPECT_EQ(corpus::read_instructions(dir / "i.jsonl"), records);

    const auto text = af::read_text_file(dir / "i.jsonl");
    EXPECT_NE(text.find("\"schema\":\"instr/1\""), std::string::npos);

    af::testing::write_file(dir / "bad.jsonl", R"({"schema":"instr/1","instruction":"x","input":"y"})" "\n");
    try {
        corpus::read_instructions(dir / "bad.jsonl");
        FAIL() << "expected a schema error";
    } catch (const af::Error& e) {
        EXPECT_NE(std::string(e.what()).find(":1"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("output"), std::string::npos) << e.what();
    }
}

TEST(Loader, AnnotatedJsonCorpus) {
    TempDir dir;
    af::testing::write_file(dir / "contracts" / "bank.sol", af::testing::bank_contract("Bank"));
    af::testing::write_file(dir / "smartbugs.json", R"([
      {"name": "bank.sol", "path": "contracts/bank.sol",
       "vulnerabilities": [{"lines": [13, 15], "category": "reentrancy", "function": "withdraw", "detectable": true}]},
      {"name": "clean", "source": "pragma solidity ^0.8.0;\r\ncontract C {}\r\n"}
    ])");
    const auto entries = corpus::load_annotated_corpus(dir / "smartbugs.json", corpus::CorpusFormat::AnnotatedJson);
    ASSERT_EQ(entries.size(), 2u);
    EXPECT_EQ(entries[0].entry_id, "bank");
    EXPECT_EQ(entries[0].polarity, corpus::Polarity::Vulnerable);
    EXPECT_EQ(entries[0].annotations[0].category, corpus::Category::Reentrancy);
    EXPECT_EQ(entries[0].annotations[0].span, (corpus::LineSpan{13, 15}));
    EXPECT_EQ(entries[0].annotations[0].detectable, true);
    EXPECT_EQ(corpus::format_origin(entries[0].contract.origin()), "manual-labeled(smartbugs)");
    EXPECT_EQ(entries[1].polarity, corpus::Polarity::Secure);
    EXPECT_EQ(entries[1].contract.source_text().find('\r'), std::string::npos);
}

TEST(Loader, SpanBeyondDocumentIsRejected) {
    TempDir dir;
    af::testing::write_file(dir / "c.json",
                            R"([{"name": "a", "source": "pragma solidity ^0.8.0;\n", "vulnerabilities": [{"lines": [5], "category": "reentrancy"}]}])");
    EXPECT_THROW(corpus::load_annotated_corpus(dir / "c.json", corpus::CorpusFormat::AnnotatedJson), af::FormatError);
}

TEST(Loader, EntriesJsonlHeaderOptionalAndErrorsNameTheRecord) {
    TempDir dir;
    af::testing::write_file(dir / "empty.jsonl", "");
    EXPECT_TRUE(corpus::load_annotated_corpus(dir / "empty.jsonl", corpus::CorpusFormat::EntriesJsonl).empty());

    const auto e = af::testing::secure_entry("s", af::testing::fixed_bank_contract("B"));
    af::testing::write_file(dir / "two.jsonl", corpus::to_json(e).dump() + "\n{\"schema\":\"entry/1\"}\n");
    try {
        corpus::load_annotated_corpus(dir / "two.jsonl", corpus::CorpusFormat::EntriesJsonl);
        FAIL() << "expected failure";
    } catch (const af::Error& err) {
        EXPECT_NE(std::string(err.what()).find("two.jsonl:2"), std::string::npos) << err.what();
    }
}

TEST(Merge, OrderAndConflicts) {
    auto v = af::testing::vulnerable_entry("a", af::testing::bank_contract("A"),
                                           {af::testing::annotation("reentrancy", af::testing::kBankVulnSpan)});
    auto s = af::testing::secure_entry("b", af::testing::fixed_bank_contract("A"));
    const std::vector<corpus::DatasetEntry> vs{v}, ss{s};
    const auto merged = corpus::merge_datasets(vs, ss);
    ASSERT_EQ(merged.size(), 2u);
    EXPECT_EQ(merged[0].entry_id, "a");
    EXPECT_EQ(merged[1].entry_id, "b");

    auto dup = s;
    dup.entry_id = "a";
    const std::vector<corpus::DatasetEntry> dups{dup};
    EXPECT_THROW(corpus::merge_datasets(vs, dups), af::ValidationError);
    EXPECT_THROW(corpus::merge_datasets(ss, ss), af::ValidationError);
}
