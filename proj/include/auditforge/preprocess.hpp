#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "auditforge/corpus.hpp"

namespace auditforge::preprocess {

struct CleaningConfig {
    bool strip_comments = false;
    bool collapse_blank_lines = true;
    bool normalize_line_endings = true;
};

// Idempotent text cleanup:
//  - CRLF and lone CR become LF (when normalize_line_endings)
//  - control characters other than \n and \t are dropped, C1 controls included
//  - with strip_comments, // and /* */ comments outside string literals are
//    removed; a block comment leaves its newlines, or one space if it has none
//  - trailing spaces and tabs are stripped from every line
//  - runs of more than two blank lines collapse to one (when collapse_blank_lines)
std::string clean(std::string_view text, const CleaningConfig& config = {});

inline constexpr std::string_view kDefaultInstruction =
    "Audit the following Solidity smart contract. Report every vulnerability with its label, the lines where it "
    "occurs and a rationale, or state that the contract is secure.";

inline constexpr std::string_view kNoVulnerabilitySentence = "No vulnerabilities were found in this contract.";

// input = clean(contract text); output = compact JSON {"findings":[...]} for
// vulnerable entries, kNoVulnerabilitySentence + " " + secure_rationale for
// secure ones.
corpus::InstructionRecord to_instruction(const corpus::DatasetEntry& entry,
                                         std::string_view instruction_text = kDefaultInstruction,
                                         const CleaningConfig& cleaning = {});

// ---- tokenization --------------------------------------------------------------

using TokenCounter = std::function<std::size_t(std::string_view)>;

// "default-regex": maximal runs of word characters ([A-Za-z0-9_] and any
// non-ASCII byte) count as one token; every other non-whitespace character
// counts as one token.
std::size_t count_tokens_default(std::string_view text) noexcept;

class Tokenizer {
public:
    // "default-regex" or "external:<name>" for a registered adapter.
    static Tokenizer named(std::string_view spec);
    static Tokenizer default_regex();
    static void register_external(std::string name, TokenCounter counter);

    std::size_t count(std::string_view text) const { return counter_(text); }
    const std::string& name() const noexcept { return name_; }

private:
    Tokenizer(std::string name, TokenCounter counter) : name_(std::move(name)), counter_(std::move(counter)) {}

    std::string name_;
    TokenCounter counter_;
};

std::size_t count_tokens(std::string_view text, const Tokenizer& tokenizer = Tokenizer::default_regex());

std::size_t record_tokens(const corpus::InstructionRecord& record, const Tokenizer& tokenizer);

struct LengthFilterResult {
    std::vector<corpus::InstructionRecord> kept;
    std::vector<corpus::InstructionRecord> removed;
    // Indices into the input, parallel to kept / removed.
    std::vector<std::size_t> kept_index;
    std::vector<std::size_t> removed_index;
};

// Removes a record iff its total token count (instruction + input + output)
// exceeds max_tokens.
LengthFilterResult filter_by_length(std::span<const corpus::InstructionRecord> records, std::size_t max_tokens = 4096,
                                    const Tokenizer& tokenizer = Tokenizer::default_regex());

// ---- embeddings & dedup ----------------------------------------------------------

// Unit vector, or all zeros for empty text.
struct TextVector {
    std::vector<double> values;

    bool is_zero() const noexcept;
    double norm() const noexcept;
};

// Dot product of unit vectors; 0 when either vector is zero.
double cosine(const TextVector& a, const TextVector& b);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual TextVector embed(std::string_view text) const = 0;
    virtual std::string name() const = 0;
};

// Character n-grams (codepoints) of clean(text) lower-cased, feature-hashed
// into `dim` signed buckets with term-frequency weights, then L2-normalized.
// Text shorter than n codepoints contributes a single gram.
class HashedNgramEmbedder final : public Embedder {
public:
    explicit HashedNgramEmbedder(std::size_t dim = 256, std::size_t n = 5);

    TextVector embed(std::string_view text) const override;
    std::string name() const override;

private:
    std::size_t dim_;
    std::size_t n_;
};

using EmbedderFactory = std::function<std::unique_ptr<Embedder>()>;

// "hashed-ngram" or "external:<name>" for a registered backend.
std::unique_ptr<Embedder> make_embedder(std::string_view spec);
void register_embedder(std::string name, EmbedderFactory factory);

TextVector embed(std::string_view text, const Embedder& backend);

struct DedupDecision {
    std::string entry_id;
    bool kept = true;
    std::optional<std::string> nearest_kept_id;
    double similarity = 0.0;  // max similarity to entries kept before this one
};

struct DedupResult {
    std::vector<corpus::DatasetEntry> kept;  // input order
    std::vector<DedupDecision> log;          // one per input entry, input order
};

// Scan order: provenance manual, then seed, then distilled; insertion order
// within a class. An entry is kept iff its max cosine similarity to every
// previously kept entry is below `threshold`.
DedupResult dedup(std::span<const corpus::DatasetEntry> entries, double threshold = 0.9,
                  const Embedder& backend = HashedNgramEmbedder());

}  // namespace auditforge::preprocess
