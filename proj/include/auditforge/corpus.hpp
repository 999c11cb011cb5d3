#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "auditforge/util.hpp"

namespace auditforge::corpus {

inline constexpr std::string_view kEntrySchema = "entry/1";
inline constexpr std::string_view kInstructionSchema = "instr/1";

// DASP-aligned vulnerability categories, V1..V9.
enum class Category {
    BadRandomness = 1,
    Reentrancy,
    UncheckedLowLevelCalls,
    Other,
    DenialOfService,
    FrontRunning,
    AccessControl,
    Arithmetic,
    TimeManipulation,
    Uncategorized,
};

inline constexpr std::array<Category, 9> kDaspCategories = {
    Category::BadRandomness,   Category::Reentrancy,   Category::UncheckedLowLevelCalls,
    Category::Other,           Category::DenialOfService, Category::FrontRunning,
    Category::AccessControl,   Category::Arithmetic,   Category::TimeManipulation,
};

// "V1".."V9" or "uncategorized".
std::string_view category_code(Category c);
std::string_view category_name(Category c);
// Accepts a code ("V2") or a canonical name ("reentrancy").
std::optional<Category> parse_category(std::string_view text);

// Maps free-form label names onto categories. The built-in table covers the
// common SWC / SmartBugs / Slither spellings; callers may add more.
class CategoryAliases {
public:
    CategoryAliases();

    void add(std::string_view alias, Category category);
    // Normalizes `label` and looks it up; falls back to parse_category, then
    // to Uncategorized.
    Category resolve(std::string_view label) const;

    static const CategoryAliases& builtin();

private:
    std::map<std::string, Category, std::less<>> table_;
};

enum class OriginKind { ManualLabeled, Synthetic, OnChain };

struct Origin {
    OriginKind kind = OriginKind::Synthetic;
    std::string source_name;  // only meaningful for ManualLabeled

    bool operator==(const Origin&) const = default;
};

std::string format_origin(const Origin& origin);  // "manual-labeled(smartbugs)", "synthetic", "on-chain"
Origin parse_origin(std::string_view text);

class ContractDocument {
public:
    // Throws ValidationError if `text` is not clean UTF-8 (no control
    // characters other than newline and tab).
    ContractDocument(std::string id, std::string text, Origin origin);

    const std::string& id() const noexcept { return id_; }
    const std::string& source_text() const noexcept { return text_; }
    const Origin& origin() const noexcept { return origin_; }
    std::size_t line_count() const noexcept { return line_count_; }

    bool operator==(const ContractDocument&) const = default;

private:
    std::string id_;
    std::string text_;
    Origin origin_;
    std::size_t line_count_ = 0;
};

// 1-based, inclusive.
struct LineSpan {
    int start = 0;
    int end = 0;

    int length() const noexcept { return end - start + 1; }
    bool operator==(const LineSpan&) const = default;
};

struct VulnerabilityAnnotation {
    std::string label_id;
    std::string label_name;
    Category category = Category::Uncategorized;
    std::optional<LineSpan> span;
    std::optional<std::string> function;
    std::string rationale;
    // Machine-auditable per the source corpus; absent when the corpus does not say.
    std::optional<bool> detectable;

    bool operator==(const VulnerabilityAnnotation&) const = default;
};

enum class Polarity { Vulnerable, Secure };
enum class Provenance { Seed, DistilledVulnerable, DistilledSecure, Manual };

std::string_view to_string(Polarity p);
std::string_view to_string(Provenance p);
Polarity parse_polarity(std::string_view text);
Provenance parse_provenance(std::string_view text);

struct DatasetEntry {
    std::string entry_id;
    ContractDocument contract;
    std::vector<VulnerabilityAnnotation> annotations;
    Polarity polarity = Polarity::Vulnerable;
    Provenance provenance = Provenance::Manual;
    int dataset_version = 0;
    std::optional<std::string> secure_rationale;
    // Secure variants point back at the vulnerable entry they were derived from.
    std::optional<std::string> source_entry_id;

    bool operator==(const DatasetEntry&) const = default;
};

// Throws ValidationError naming the entry and the broken invariant.
void validate(const DatasetEntry& entry);

struct InstructionRecord {
    std::string instruction;
    std::string input;
    std::string output;

    bool operator==(const InstructionRecord&) const = default;
};

void validate(const InstructionRecord& record);

// ---- JSON (de)serialization --------------------------------------------------

Json to_json(const VulnerabilityAnnotation& a);
Json to_json(const DatasetEntry& e);
Json to_json(const InstructionRecord& r);

// `where` prefixes error messages (e.g. "file.jsonl:3").
VulnerabilityAnnotation annotation_from_json(const Json& j, const std::string& where);
DatasetEntry entry_from_json(const Json& j, const std::string& where);
InstructionRecord instruction_from_json(const Json& j, const std::string& where);

// Span as emitted by model reports: "span" or "lines" ([s,e], a list of line
// numbers, or a single number), or "line".
std::optional<LineSpan> loose_span_from_json(const Json& j, const std::string& where);

// ---- persistence -------------------------------------------------------------

// Header line followed by one canonical entry per line; written atomically.
void write_entries(std::span<const DatasetEntry> entries, const std::filesystem::path& path);
// Requires the header written by write_entries.
std::vector<DatasetEntry> read_entries(const std::filesystem::path& path);

void write_instructions(std::span<const InstructionRecord> records, const std::filesystem::path& path);
std::vector<InstructionRecord> read_instructions(const std::filesystem::path& path);

enum class CorpusFormat { AnnotatedJson, EntriesJsonl };

CorpusFormat parse_corpus_format(std::string_view text);

struct LoadOptions {
    // Name recorded in manual-labeled(<name>) origins; defaults to the file stem.
    std::string source_name;
    const CategoryAliases* aliases = nullptr;
};

// annotated-json: a SmartBugs-style array of
//   {name, source | path, vulnerabilities:[{lines|span, category, function?, rationale?, detectable?}]}
// entries-jsonl: entry/1 lines; the header line is optional and an empty file
// yields no entries.
std::vector<DatasetEntry> load_annotated_corpus(const std::filesystem::path& path, CorpusFormat format,
                                                const LoadOptions& options = {});

// Vulnerable block, then secure block. Rejects duplicate ids and polarity mismatches.
std::vector<DatasetEntry> merge_datasets(std::span<const DatasetEntry> vulnerable,
                                         std::span<const DatasetEntry> secure);

}  // namespace auditforge::corpus
