#include <gtest/gtest.h>

#include "auditforge/util.hpp"
#include "fixtures.hpp"

namespace af = auditforge;
using af::testing::TempDir;

TEST(Util, Sha256KnownVectors) {
    EXPECT_EQ(af::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(af::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Util, Sha256FileMatchesInMemory) {
    TempDir dir;
    af::testing::write_file(dir / "a.txt", "hello\n");
    EXPECT_EQ(af::sha256_file_hex(dir / "a.txt"), af::sha256_hex("hello\n"));
}

TEST(Util, Fnv1aKnownVectors) {
    static_assert(af::fnv1a64("") == 0xcbf29ce484222325ULL);
    EXPECT_EQ(af::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Util, NormalizeLabelId) {
    EXPECT_EQ(af::normalize_label_id("Reentrancy"), "reentrancy");
    EXPECT_EQ(af::normalize_label_id("  Unchecked Low-Level  Calls!"), "unchecked-low-level-calls");
    EXPECT_EQ(af::normalize_label_id("SWC_107"), "swc-107");
    EXPECT_EQ(af::normalize_label_id("***"), "");
}

TEST(Util, CountLines) {
    EXPECT_EQ(af::count_lines(""), 0u);
    EXPECT_EQ(af::count_lines("a"), 1u);
    EXPECT_EQ(af::count_lines("a\n"), 1u);
    EXPECT_EQ(af::count_lines("a\nb"), 2u);
    EXPECT_EQ(af::count_lines("\n\n"), 2u);
}

TEST(Util, Utf8Validation) {
    EXPECT_TRUE(af::is_valid_utf8("plain"));
    EXPECT_TRUE(af::is_valid_utf8("\xE4\xB8\xAD\xF0\x9F\x98\x80"));
    EXPECT_FALSE(af::is_valid_utf8("\xC3"));
    EXPECT_FALSE(af::is_valid_utf8("\xC0\xAF"));          // overlong
    EXPECT_FALSE(af::is_valid_utf8("\xED\xA0\x80"));      // surrogate
    EXPECT_FALSE(af::is_valid_utf8("\xF4\x90\x80\x80"));  // above U+10FFFF
}

TEST(Util, AtomicWriteReplacesContent) {
    TempDir dir;
    const auto p = dir / "out.txt";
    af::atomic_write_file(p, "one");
    af::atomic_write_file(p, "two");
    EXPECT_EQ(af::read_text_file(p), "two");
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
    EXPECT_EQ(files, 1u);
}

TEST(Util, ReadMissingFileThrows) {
    TempDir dir;
    EXPECT_THROW(af::read_text_file(dir / "nope"), af::IoError);
}

TEST(Util, ExpandGlobSorted) {
    TempDir dir;
    af::testing::write_file(dir / "b.jsonl", "");
    af::testing::write_file(dir / "a.jsonl", "");
    af::testing::write_file(dir / "c.txt", "");
    const auto found = af::expand_glob((dir / "*.jsonl").string());
    ASSERT_EQ(found.size(), 2u);
    EXPECT_EQ(found[0].filename(), "a.jsonl");
    EXPECT_EQ(found[1].filename(), "b.jsonl");
    EXPECT_TRUE(af::expand_glob((dir / "*.none").string()).empty());
}

TEST(Util, ExtractJsonObject) {
    auto strict = af::extract_json_object(R"({"a":1})");
    ASSERT_TRUE(strict);
    EXPECT_EQ((*strict)["a"], 1);

    auto wrapped = af::extract_json_object("Sure! Here it is:\n```json\n{\"s\": \"}{\", \"n\": {\"x\": 2}}\n```\nbye");
    ASSERT_TRUE(wrapped);
    EXPECT_EQ((*wrapped)["s"], "}{");
    EXPECT_EQ((*wrapped)["n"]["x"], 2);

    EXPECT_FALSE(af::extract_json_object("no json here"));
    EXPECT_FALSE(af::extract_json_object("{broken"));
}
