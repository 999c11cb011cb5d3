#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "auditforge/corpus.hpp"

namespace auditforge::evaluator {

struct Finding {
    std::string label_id;
    std::string label_name;
    std::optional<corpus::LineSpan> span;
    std::optional<std::string> function;
    std::string rationale;

    bool location_free() const noexcept { return !span && !function; }
    bool operator==(const Finding&) const = default;
};

// Accepts {"findings"|"labels"|"vulnerabilities": [...]} or a bare array,
// strictly or embedded in prose. Unparsable text yields no findings and a
// warning; `context` names the report in that warning.
std::vector<Finding> parse_audit_report(std::string_view raw, std::string_view context = {});

struct MatchOptions {
    double min_overlap = 0.5;
    // Also require the category (or label id when both are uncategorized) to agree.
    bool strict_labels = false;
};

// |finding ∩ annotation| / |annotation|, in [0, 1].
double span_overlap(const corpus::LineSpan& finding, const corpus::LineSpan& annotation) noexcept;

// Overlap when the pair may be matched, nullopt otherwise. A pair with a span
// missing on either side is eligible iff both name the same function
// (case-insensitive); its overlap is then 1.
std::optional<double> match_score(const Finding& finding, const corpus::VulnerabilityAnnotation& annotation,
                                  const MatchOptions& options = {});

enum class Outcome { TP, FP };

struct MatchResult {
    Outcome outcome = Outcome::FP;
    std::optional<std::size_t> matched_annotation;
    double overlap = 0.0;
};

struct MatchSet {
    std::vector<MatchResult> matches;                // parallel to the findings
    std::vector<std::size_t> unmatched_annotations;  // ascending

    std::size_t true_positives() const noexcept;
    std::size_t false_positives() const noexcept { return matches.size() - true_positives(); }
    double total_overlap() const noexcept;
};

// One-to-one assignment maximizing the number of matched pairs, then the
// summed overlap. With `document_lines`, a finding span past the end of the
// document is a ValidationError.
MatchSet match_findings(std::span<const Finding> findings, std::span<const corpus::VulnerabilityAnnotation> annotations,
                        const MatchOptions& options = {}, std::optional<std::size_t> document_lines = std::nullopt);

// Vulnerable entry: every annotation is located. Secure entry: nothing reported.
bool rationale_correct(const corpus::DatasetEntry& entry, std::string_view raw_report,
                       const MatchOptions& options = {});

struct CategoryCounts {
    long tp = 0;
    long fn = 0;

    bool operator==(const CategoryCounts&) const = default;
};

struct ScoreCard {
    std::string model_id;
    std::string corpus_id;
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long tn = 0;
    std::map<corpus::Category, CategoryCounts> per_category;
    // Annotations carrying a detectable flag, split by it.
    CategoryCounts detectable;
    CategoryCounts undetectable;

    // nullopt when the denominator is zero.
    std::optional<double> recall() const noexcept;
    std::optional<double> accuracy() const noexcept;

    void add_vulnerable(const MatchSet& match, std::span<const corpus::VulnerabilityAnnotation> annotations);
    // One FP per reported finding, or one TN when nothing was reported.
    void add_secure(std::size_t reported_findings);
};

ScoreCard score_counts(std::string model_id, std::string corpus_id, long tp, long fp, long fn, long tn);

// Reports keyed by entry id. An entry with no report scores as if the model
// reported nothing. A report for an entry outside the corpus is a ValidationError.
ScoreCard evaluate_model(std::string model_id, std::string corpus_id, std::span<const corpus::DatasetEntry> corpus,
                         const std::map<std::string, std::string>& reports, const MatchOptions& options = {});

// "<model_id>__<entry_id>.txt|json" files, keyed by model then entry.
std::map<std::string, std::map<std::string, std::filesystem::path>> scan_report_dir(const std::filesystem::path& dir);

// One card per model found in `dir`, ordered by model id.
std::vector<ScoreCard> evaluate_directory(std::string corpus_id, std::span<const corpus::DatasetEntry> corpus,
                                          const std::filesystem::path& dir, const MatchOptions& options = {});

enum class TableFormat { Markdown, Csv };

TableFormat parse_table_format(std::string_view text);

// "66.48%", or "n/a" when undefined.
std::string format_percent(std::optional<double> ratio);

// Rows ordered by model id. Cards from different corpora are a ValidationError.
std::string emit_comparison(std::span<const ScoreCard> cards, TableFormat format);

// Per-category TP/FN and recall, one row per (model, category) with annotations.
std::string emit_category_breakdown(std::span<const ScoreCard> cards, TableFormat format);

}  // namespace auditforge::evaluator
