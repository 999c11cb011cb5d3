#include "auditforge/evaluator.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

#include "auditforge/error.hpp"
#include "auditforge/log.hpp"

namespace auditforge::evaluator {

using corpus::DatasetEntry;
using corpus::LineSpan;
using corpus::VulnerabilityAnnotation;

namespace {

std::optional<std::string> first_string(const Json& j, std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
        if (auto it = j.find(k); it != j.end() && it->is_string() && !it->get_ref<const std::string&>().empty()) {
            return it->get<std::string>();
        }
    }
    return std::nullopt;
}

const Json* findings_array(const Json& doc) {
    if (doc.is_array()) {
        return &doc;
    }
    if (doc.is_object()) {
        for (const char* k : {"findings", "labels", "vulnerabilities"}) {
            if (auto it = doc.find(k); it != doc.end() && it->is_array()) {
                return &*it;
            }
        }
    }
    return nullptr;
}

std::string function_key(std::string_view name) {
    auto paren = name.find('(');
    std::string_view s = name.substr(0, paren);
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t");
    return to_lower_ascii(s.substr(b, e - b + 1));
}

bool labels_agree(const Finding& f, const VulnerabilityAnnotation& a) {
    const auto& aliases = corpus::CategoryAliases::builtin();
    auto fc = aliases.resolve(f.label_id);
    if (fc == corpus::Category::Uncategorized && !f.label_name.empty()) {
        fc = aliases.resolve(f.label_name);
    }
    if (fc == corpus::Category::Uncategorized && a.category == corpus::Category::Uncategorized) {
        return normalize_label_id(f.label_id) == normalize_label_id(a.label_id);
    }
    return fc == a.category;
}

}  // namespace

std::vector<Finding> parse_audit_report(std::string_view raw, std::string_view context) {
    std::optional<Json> doc;
    try {
        doc = Json::parse(raw);
    } catch (const Json::parse_error&) {
        doc = extract_json_object(raw);
    }
    const Json* items = doc ? findings_array(*doc) : nullptr;
    if (items == nullptr) {
        if (raw.find_first_not_of(" \t\r\n") != std::string_view::npos) {
            log::warn("evaluate", "report has no parsable findings; treating as empty", {{"report", context}});
        }
        return {};
    }
    std::vector<Finding> out;
    std::size_t index = 0;
    for (const auto& item : *items) {
        ++index;
        if (!item.is_object()) {
            log::warn("evaluate", "skipping non-object finding", {{"report", context}, {"index", index}});
            continue;
        }
        Finding f;
        f.label_id = first_string(item, {"label_id", "label", "category"}).value_or("");
        f.label_name = first_string(item, {"label_name", "name"}).value_or(f.label_id);
        f.rationale = first_string(item, {"rationale", "description", "reason"}).value_or("");
        f.function = first_string(item, {"function"});
        try {
            f.span = corpus::loose_span_from_json(item, fmt::format("{} finding {}", context, index));
        } catch (const FormatError& e) {
            log::warn("evaluate", "ignoring malformed span", {{"report", context}, {"error", e.what()}});
        }
        if (f.span && (f.span->start < 1 || f.span->end < f.span->start)) {
            log::warn("evaluate", "ignoring invalid span", {{"report", context}, {"index", index}});
            f.span.reset();
        }
        out.push_back(std::move(f));
    }
    return out;
}

double span_overlap(const LineSpan& finding, const LineSpan& annotation) noexcept {
    const int lo = std::max(finding.start, annotation.start);
    const int hi = std::min(finding.end, annotation.end);
    if (hi < lo || annotation.length() <= 0) {
        return 0.0;
    }
    return static_cast<double>(hi - lo + 1) / annotation.length();
}

std::optional<double> match_score(const Finding& finding, const VulnerabilityAnnotation& annotation,
                                  const MatchOptions& options) {
    if (options.strict_labels && !labels_agree(finding, annotation)) {
        return std::nullopt;
    }
    if (finding.span && annotation.span) {
        const double o = span_overlap(*finding.span, *annotation.span);
        if (o >= options.min_overlap) {
            return o;
        }
        return std::nullopt;
    }
    if (finding.function && annotation.function) {
        const auto a = function_key(*finding.function);
        if (!a.empty() && a == function_key(*annotation.function)) {
            return 1.0;
        }
    }
    return std::nullopt;
}

std::size_t MatchSet::true_positives() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(matches.begin(), matches.end(), [](const MatchResult& m) { return m.outcome == Outcome::TP; }));
}

double MatchSet::total_overlap() const noexcept {
    double s = 0.0;
    for (const auto& m : matches) {
        if (m.outcome == Outcome::TP) {
            s += m.overlap;
        }
    }
    return s;
}

namespace {

// Minimum-cost perfect assignment on a square matrix; returns col_of_row.
std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> col_of_row(n, 0);
    for (std::size_t j = 1; j <= n; ++j) {
        if (p[j] != 0) {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    return col_of_row;
}

}  // namespace

MatchSet match_findings(std::span<const Finding> findings, std::span<const VulnerabilityAnnotation> annotations,
                        const MatchOptions& options, std::optional<std::size_t> document_lines) {
    if (document_lines) {
        for (std::size_t i = 0; i < findings.size(); ++i) {
            const auto& s = findings[i].span;
            if (s && static_cast<std::size_t>(s->end) > *document_lines) {
                throw ValidationError(fmt::format("finding {} spans lines {}-{} outside a {}-line document", i,
                                                  s->start, s->end, *document_lines));
            }
        }
    }
    const std::size_t n = findings.size();
    const std::size_t m = annotations.size();
    MatchSet out;
    out.matches.resize(n);

    std::vector<std::vector<std::optional<double>>> score(n, std::vector<std::optional<double>>(m));
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            score[i][j] = match_score(findings[i], annotations[j], options);
            any = any || score[i][j].has_value();
        }
    }

    std::vector<bool> annotation_matched(m, false);
    if (any) {
        // Weight K + overlap with K > min(n, m) makes one extra match outweigh
        // any overlap total, so the optimum is lexicographic in (count, overlap).
        const std::size_t size = std::max(n, m);
        const double k = static_cast<double>(std::min(n, m) + 1);
        std::vector<std::vector<double>> cost(size, std::vector<double>(size, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                if (score[i][j]) {
                    cost[i][j] = -(k + *score[i][j]);
                }
            }
        }
        const auto assignment = hungarian(cost);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = assignment[i];
            if (j < m && score[i][j]) {
                out.matches[i] = MatchResult{Outcome::TP, j, *score[i][j]};
                annotation_matched[j] = true;
            }
        }
    }
    for (std::size_t j = 0; j < m; ++j) {
        if (!annotation_matched[j]) {
            out.unmatched_annotations.push_back(j);
        }
    }
    return out;
}

bool rationale_correct(const DatasetEntry& entry, std::string_view raw_report, const MatchOptions& options) {
    const auto findings = parse_audit_report(raw_report, entry.entry_id);
    if (entry.polarity == corpus::Polarity::Secure) {
        return findings.empty();
    }
    return match_findings(findings, entry.annotations, options).unmatched_annotations.empty();
}

std::optional<double> ScoreCard::recall() const noexcept {
    if (tp + fn == 0) {
        return std::nullopt;
    }
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> ScoreCard::accuracy() const noexcept {
    const long total = tp + tn + fp + fn;
    if (total == 0) {
        return std::nullopt;
    }
    return static_cast<double>(tp + tn) / static_cast<double>(total);
}

void ScoreCard::add_vulnerable(const MatchSet& match, std::span<const VulnerabilityAnnotation> annotations) {
    std::vector<bool> matched(annotations.size(), false);
    for (const auto& r : match.matches) {
        if (r.outcome == Outcome::TP) {
            matched.at(*r.matched_annotation) = true;
        }
    }
    fp += static_cast<long>(match.false_positives());
    for (std::size_t j = 0; j < annotations.size(); ++j) {
        const auto& a = annotations[j];
        auto& cat = per_category[a.category];
        (matched[j] ? tp : fn) += 1;
        (matched[j] ? cat.tp : cat.fn) += 1;
        if (a.detectable) {
            auto& split = *a.detectable ? detectable : undetectable;
            (matched[j] ? split.tp : split.fn) += 1;
        }
    }
}

void ScoreCard::add_secure(std::size_t reported_findings) {
    if (reported_findings == 0) {
        ++tn;
    } else {
        fp += static_cast<long>(reported_findings);
    }
}

ScoreCard score_counts(std::string model_id, std::string corpus_id, long tp, long fp, long fn, long tn) {
    if (tp < 0 || fp < 0 || fn < 0 || tn < 0) {
        throw ValidationError("score counts must be non-negative");
    }
    ScoreCard c;
    c.model_id = std::move(model_id);
    c.corpus_id = std::move(corpus_id);
    c.tp = tp;
    c.fp = fp;
    c.fn = fn;
    c.tn = tn;
    return c;
}

ScoreCard evaluate_model(std::string model_id, std::string corpus_id, std::span<const DatasetEntry> corpus,
                         const std::map<std::string, std::string>& reports, const MatchOptions& options) {
    std::map<std::string_view, const DatasetEntry*> by_id;
    for (const auto& e : corpus) {
        by_id.emplace(e.entry_id, &e);
    }
    for (const auto& [entry_id, _] : reports) {
        if (!by_id.contains(entry_id)) {
            throw ValidationError(
                fmt::format("model '{}': report for entry '{}' which is not in corpus '{}'", model_id, entry_id, corpus_id));
        }
    }

    ScoreCard card;
    card.model_id = std::move(model_id);
    card.corpus_id = std::move(corpus_id);
    for (const auto& entry : corpus) {
        std::vector<Finding> findings;
        if (auto it = reports.find(entry.entry_id); it != reports.end()) {
            findings = parse_audit_report(it->second, fmt::format("{}__{}", card.model_id, entry.entry_id));
        } else {
            log::warn("evaluate", "no report for entry; scoring as empty",
                      {{"model", card.model_id}, {"entry", entry.entry_id}});
        }
        if (entry.polarity == corpus::Polarity::Secure) {
            card.add_secure(findings.size());
            continue;
        }
        std::vector<Finding> in_range;
        const auto lines = entry.contract.line_count();
        for (auto& f : findings) {
            if (f.span && static_cast<std::size_t>(f.span->end) > lines) {
                log::warn("evaluate", "finding outside the document counts as FP",
                          {{"model", card.model_id}, {"entry", entry.entry_id}});
                ++card.fp;
            } else {
                in_range.push_back(std::move(f));
            }
        }
        card.add_vulnerable(match_findings(in_range, entry.annotations, options, lines), entry.annotations);
    }
    return card;
}

std::map<std::string, std::map<std::string, std::filesystem::path>> scan_report_dir(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw IoError(fmt::format("{}: not a directory", dir.string()));
    }
    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(dir)) {
        if (de.is_regular_file()) {
            files.push_back(de.path());
        }
    }
    std::sort(files.begin(), files.end());

    std::map<std::string, std::map<std::string, fs::path>> out;
    for (const auto& p : files) {
        const auto ext = p.extension().string();
        const auto stem = p.stem().string();
        const auto sep = stem.find("__");
        if ((ext != ".txt" && ext != ".json") || sep == std::string::npos || sep == 0 || sep + 2 == stem.size()) {
            log::warn("evaluate", "ignoring file not named <model>__<entry>.txt|json", {{"file", p.string()}});
            continue;
        }
        auto [it, inserted] = out[stem.substr(0, sep)].emplace(stem.substr(sep + 2), p);
        if (!inserted) {
            throw ValidationError(
                fmt::format("{}: duplicate report for the same model and entry ({})", p.string(), it->second.string()));
        }
    }
    return out;
}

std::vector<ScoreCard> evaluate_directory(std::string corpus_id, std::span<const DatasetEntry> corpus,
                                          const std::filesystem::path& dir, const MatchOptions& options) {
    std::vector<ScoreCard> cards;
    for (const auto& [model_id, files] : scan_report_dir(dir)) {
        std::map<std::string, std::string> reports;
        for (const auto& [entry_id, path] : files) {
            reports.emplace(entry_id, read_text_file(path));
        }
        cards.push_back(evaluate_model(model_id, corpus_id, corpus, reports, options));
    }
    return cards;
}

TableFormat parse_table_format(std::string_view text) {
    if (text == "markdown" || text == "md") return TableFormat::Markdown;
    if (text == "csv") return TableFormat::Csv;
    throw ConfigError(fmt::format("unknown table format '{}' (expected markdown or csv)", text));
}

std::string format_percent(std::optional<double> ratio) {
    if (!ratio) {
        return "n/a";
    }
    return fmt::format("{:.2f}%", *ratio * 100.0);
}

namespace {

std::vector<const ScoreCard*> ordered(std::span<const ScoreCard> cards) {
    std::vector<const ScoreCard*> out;
    for (const auto& c : cards) {
        if (c.corpus_id != cards.front().corpus_id) {
            throw ValidationError(fmt::format("cannot compare cards from corpora '{}' and '{}'",
                                              cards.front().corpus_id, c.corpus_id));
        }
        out.push_back(&c);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ScoreCard* a, const ScoreCard* b) { return a->model_id < b->model_id; });
    return out;
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) {
        return std::string(s);
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string render(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                   TableFormat format) {
    std::string out;
    if (format == TableFormat::Csv) {
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) out += ',';
                out += csv_field(cells[i]);
            }
            out += '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out;
    }
    auto line = [&](const std::vector<std::string>& cells) {
        out += '|';
        for (const auto& c : cells) {
            out += ' ';
            out += c;
            out += " |";
        }
        out += '\n';
    };
    line(header);
    out += '|';
    for (std::size_t i = 0; i < header.size(); ++i) out += "---|";
    out += '\n';
    for (const auto& r : rows) line(r);
    return out;
}

}  // namespace

std::string emit_comparison(std::span<const ScoreCard> cards, TableFormat format) {
    std::vector<std::vector<std::string>> rows;
    if (!cards.empty()) {
        for (const ScoreCard* c : ordered(cards)) {
            rows.push_back({c->model_id, c->corpus_id, std::to_string(c->tp), std::to_string(c->fp),
                            std::to_string(c->fn), std::to_string(c->tn), format_percent(c->recall()),
                            format_percent(c->accuracy())});
        }
    }
    return render({"model", "corpus", "TP", "FP", "FN", "TN", "recall", "accuracy"}, rows, format);
}

std::string emit_category_breakdown(std::span<const ScoreCard> cards, TableFormat format) {
    std::vector<std::vector<std::string>> rows;
    if (!cards.empty()) {
        for (const ScoreCard* c : ordered(cards)) {
            for (const auto& [cat, counts] : c->per_category) {
                std::optional<double> recall;
                if (counts.tp + counts.fn > 0) {
                    recall = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fn);
                }
                rows.push_back({c->model_id, std::string(corpus::category_code(cat)),
                                std::string(corpus::category_name(cat)), std::to_string(counts.tp),
                                std::to_string(counts.fn), format_percent(recall)});
            }
        }
    }
    return render({"model", "category", "name", "TP", "FN", "recall"}, rows, format);
}

}  // namespace auditforge::evaluator
