#include "auditforge/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "auditforge/error.hpp"
#include "auditforge/json_fields.hpp"

namespace auditforge::corpus {

namespace fs = std::filesystem;
using detail::field_error;
using detail::optional_bool;
using detail::optional_string;
using detail::require;
using detail::require_integer;
using detail::require_string;

namespace {

struct CategoryInfo {
    Category category;
    std::string_view code;
    std::string_view name;
};

constexpr std::array<CategoryInfo, 10> kCategoryInfo = {{
    {Category::BadRandomness, "V1", "bad-randomness"},
    {Category::Reentrancy, "V2", "reentrancy"},
    {Category::UncheckedLowLevelCalls, "V3", "unchecked-low-level-calls"},
    {Category::Other, "V4", "other"},
    {Category::DenialOfService, "V5", "denial-of-service"},
    {Category::FrontRunning, "V6", "front-running"},
    {Category::AccessControl, "V7", "access-control"},
    {Category::Arithmetic, "V8", "arithmetic"},
    {Category::TimeManipulation, "V9", "time-manipulation"},
    {Category::Uncategorized, "uncategorized", "uncategorized"},
}};

const CategoryInfo& info(Category c) {
    for (const auto& ci : kCategoryInfo) {
        if (ci.category == c) {
            return ci;
        }
    }
    return kCategoryInfo.back();
}

std::string normalize_newlines(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '\r') {
            out += '\n';
            if (i + 1 < text.size() && text[i + 1] == '\n') {
                ++i;
            }
        } else {
            out += text[i];
        }
    }
    return out;
}

}  // namespace

std::string_view category_code(Category c) { return info(c).code; }
std::string_view category_name(Category c) { return info(c).name; }

std::optional<Category> parse_category(std::string_view text) {
    const std::string norm = normalize_label_id(text);
    for (const auto& ci : kCategoryInfo) {
        if (norm == to_lower_ascii(ci.code) || norm == ci.name) {
            return ci.category;
        }
    }
    return std::nullopt;
}

CategoryAliases::CategoryAliases() {
    struct Alias {
        std::string_view alias;
        Category category;
    };
    static constexpr Alias kBuiltin[] = {
        {"weak-randomness", Category::BadRandomness},
        {"insecure-randomness", Category::BadRandomness},
        {"predictable-randomness", Category::BadRandomness},
        {"weak-prng", Category::BadRandomness},
        {"swc-120", Category::BadRandomness},
        {"reentrancy-eth", Category::Reentrancy},
        {"reentrancy-no-eth", Category::Reentrancy},
        {"reentrancy-benign", Category::Reentrancy},
        {"reentrancy-events", Category::Reentrancy},
        {"cross-function-reentrancy", Category::Reentrancy},
        {"read-only-reentrancy", Category::Reentrancy},
        {"swc-107", Category::Reentrancy},
        {"unchecked-send", Category::UncheckedLowLevelCalls},
        {"unchecked-call", Category::UncheckedLowLevelCalls},
        {"unchecked-lowlevel", Category::UncheckedLowLevelCalls},
        {"unchecked-return-value", Category::UncheckedLowLevelCalls},
        {"unchecked-return-calls", Category::UncheckedLowLevelCalls},
        {"unchecked-call-return-value", Category::UncheckedLowLevelCalls},
        {"unchecked-transfer", Category::UncheckedLowLevelCalls},
        {"swc-104", Category::UncheckedLowLevelCalls},
        {"short-address", Category::Other},
        {"uninitialized-storage", Category::Other},
        {"uninitialized-storage-pointer", Category::Other},
        {"dos", Category::DenialOfService},
        {"dos-gas-limit", Category::DenialOfService},
        {"unbounded-loop", Category::DenialOfService},
        {"swc-113", Category::DenialOfService},
        {"swc-128", Category::DenialOfService},
        {"frontrunning", Category::FrontRunning},
        {"transaction-order-dependence", Category::FrontRunning},
        {"tod", Category::FrontRunning},
        {"race-condition", Category::FrontRunning},
        {"swc-114", Category::FrontRunning},
        {"tx-origin", Category::AccessControl},
        {"suicidal", Category::AccessControl},
        {"unprotected-selfdestruct", Category::AccessControl},
        {"arbitrary-send", Category::AccessControl},
        {"missing-access-control", Category::AccessControl},
        {"unprotected-upgrade", Category::AccessControl},
        {"swc-105", Category::AccessControl},
        {"swc-106", Category::AccessControl},
        {"swc-115", Category::AccessControl},
        {"integer-overflow", Category::Arithmetic},
        {"integer-underflow", Category::Arithmetic},
        {"overflow", Category::Arithmetic},
        {"underflow", Category::Arithmetic},
        {"divide-before-multiply", Category::Arithmetic},
        {"swc-101", Category::Arithmetic},
        {"timestamp", Category::TimeManipulation},
        {"timestamp-dependence", Category::TimeManipulation},
        {"block-timestamp", Category::TimeManipulation},
        {"swc-116", Category::TimeManipulation},
    };
    for (const auto& a : kBuiltin) {
        add(a.alias, a.category);
    }
}

void CategoryAliases::add(std::string_view alias, Category category) {
    table_[normalize_label_id(alias)] = category;
}

Category CategoryAliases::resolve(std::string_view label) const {
    const std::string norm = normalize_label_id(label);
    if (auto it = table_.find(norm); it != table_.end()) {
        return it->second;
    }
    return parse_category(norm).value_or(Category::Uncategorized);
}

const CategoryAliases& CategoryAliases::builtin() {
    static const CategoryAliases aliases;
    return aliases;
}

std::string format_origin(const Origin& origin) {
    switch (origin.kind) {
        case OriginKind::ManualLabeled: return fmt::format("manual-labeled({})", origin.source_name);
        case OriginKind::Synthetic: return "synthetic";
        case OriginKind::OnChain: return "on-chain";
    }
    return "synthetic";
}

Origin parse_origin(std::string_view text) {
    if (text == "synthetic") {
        return {OriginKind::Synthetic, {}};
    }
    if (text == "on-chain") {
        return {OriginKind::OnChain, {}};
    }
    constexpr std::string_view prefix = "manual-labeled(";
    if (text.starts_with(prefix) && text.ends_with(')')) {
        return {OriginKind::ManualLabeled, std::string(text.substr(prefix.size(), text.size() - prefix.size() - 1))};
    }
    if (text == "manual-labeled") {
        return {OriginKind::ManualLabeled, {}};
    }
    throw FormatError(fmt::format("unknown origin '{}'", text));
}

ContractDocument::ContractDocument(std::string id, std::string text, Origin origin)
    : id_(std::move(id)), text_(std::move(text)), origin_(std::move(origin)) {
    if (!is_valid_utf8(text_)) {
        throw ValidationError(fmt::format("contract '{}': source text is not valid UTF-8", id_));
    }
    for (std::size_t i = 0; i < text_.size(); ++i) {
        const auto c = static_cast<unsigned char>(text_[i]);
        if ((c < 0x20 && c != '\n' && c != '\t') || c == 0x7f) {
            throw ValidationError(
                fmt::format("contract '{}': control character 0x{:02x} at byte {}", id_, static_cast<int>(c), i));
        }
    }
    line_count_ = count_lines(text_);
}

std::string_view to_string(Polarity p) { return p == Polarity::Vulnerable ? "vulnerable" : "secure"; }

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::Seed: return "seed";
        case Provenance::DistilledVulnerable: return "distilled-vulnerable";
        case Provenance::DistilledSecure: return "distilled-secure";
        case Provenance::Manual: return "manual";
    }
    return "manual";
}

Polarity parse_polarity(std::string_view text) {
    if (text == "vulnerable") return Polarity::Vulnerable;
    if (text == "secure") return Polarity::Secure;
    throw FormatError(fmt::format("unknown polarity '{}'", text));
}

Provenance parse_provenance(std::string_view text) {
    if (text == "seed") return Provenance::Seed;
    if (text == "distilled-vulnerable") return Provenance::DistilledVulnerable;
    if (text == "distilled-secure") return Provenance::DistilledSecure;
    if (text == "manual") return Provenance::Manual;
    throw FormatError(fmt::format("unknown provenance '{}'", text));
}

void validate(const DatasetEntry& entry) {
    auto fail = [&](std::string_view what) {
        throw ValidationError(fmt::format("entry '{}': {}", entry.entry_id, what));
    };
    if (entry.entry_id.empty()) {
        fail("empty entry_id");
    }
    if (entry.dataset_version < 0) {
        fail("negative dataset_version");
    }
    if (entry.polarity == Polarity::Vulnerable && entry.annotations.empty()) {
        fail("vulnerable entry without annotations");
    }
    if (entry.polarity == Polarity::Secure) {
        if (!entry.annotations.empty()) {
            fail("secure entry carries annotations");
        }
        if (!entry.secure_rationale || entry.secure_rationale->empty()) {
            fail("secure entry without secure_rationale");
        }
    }
    const auto lines = static_cast<long long>(entry.contract.line_count());
    for (const auto& a : entry.annotations) {
        if (a.label_id.empty() || a.label_id != normalize_label_id(a.label_id)) {
            fail(fmt::format("label_id '{}' is not normalized", a.label_id));
        }
        if (a.span && (a.span->start < 1 || a.span->start > a.span->end || a.span->end > lines)) {
            fail(fmt::format("annotation '{}' span [{},{}] outside document of {} lines", a.label_id,
                             a.span->start, a.span->end, lines));
        }
    }
}

void validate(const InstructionRecord& record) {
    if (record.instruction.empty() || record.input.empty() || record.output.empty()) {
        throw ValidationError("instruction record with an empty field");
    }
}

Json to_json(const VulnerabilityAnnotation& a) {
    Json j = Json::object();
    j["label_id"] = a.label_id;
    j["label_name"] = a.label_name;
    j["category"] = category_code(a.category);
    if (a.span) {
        j["span"] = Json::array({a.span->start, a.span->end});
    }
    if (a.function) {
        j["function"] = *a.function;
    }
    j["rationale"] = a.rationale;
    if (a.detectable) {
        j["detectable"] = *a.detectable;
    }
    return j;
}

Json to_json(const DatasetEntry& e) {
    Json j = Json::object();
    j["schema"] = kEntrySchema;
    j["entry_id"] = e.entry_id;
    j["polarity"] = to_string(e.polarity);
    j["provenance"] = to_string(e.provenance);
    j["dataset_version"] = e.dataset_version;
    Json c = Json::object();
    c["id"] = e.contract.id();
    c["origin"] = format_origin(e.contract.origin());
    c["text"] = e.contract.source_text();
    j["contract"] = std::move(c);
    Json anns = Json::array();
    for (const auto& a : e.annotations) {
        anns.push_back(to_json(a));
    }
    j["annotations"] = std::move(anns);
    if (e.secure_rationale) {
        j["secure_rationale"] = *e.secure_rationale;
    }
    if (e.source_entry_id) {
        j["source_entry_id"] = *e.source_entry_id;
    }
    return j;
}

Json to_json(const InstructionRecord& r) {
    Json j = Json::object();
    j["schema"] = kInstructionSchema;
    j["instruction"] = r.instruction;
    j["input"] = r.input;
    j["output"] = r.output;
    return j;
}

namespace {

std::optional<LineSpan> span_from_json(const Json& j, const std::string& where) {
    auto it = j.find("span");
    if (it == j.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number_integer() || !(*it)[1].is_number_integer()) {
        field_error(where, "span", "expected [start, end]");
    }
    return LineSpan{(*it)[0].get<int>(), (*it)[1].get<int>()};
}

}  // namespace

VulnerabilityAnnotation annotation_from_json(const Json& j, const std::string& where) {
    VulnerabilityAnnotation a;
    a.label_id = require_string(j, "label_id", where);
    a.label_name = optional_string(j, "label_name", where).value_or(a.label_id);
    const auto cat = require_string(j, "category", where);
    auto parsed = parse_category(cat);
    if (!parsed) {
        field_error(where, "category", fmt::format("unknown category '{}'", cat));
    }
    a.category = *parsed;
    a.span = span_from_json(j, where);
    a.function = optional_string(j, "function", where);
    a.rationale = optional_string(j, "rationale", where).value_or("");
    a.detectable = optional_bool(j, "detectable", where);
    return a;
}

DatasetEntry entry_from_json(const Json& j, const std::string& where) {
    if (!j.is_object()) {
        throw FormatError(fmt::format("{}: expected a JSON object", where));
    }
    const auto schema = require_string(j, "schema", where);
    if (schema != kEntrySchema) {
        field_error(where, "schema", fmt::format("expected '{}', found '{}'", kEntrySchema, schema));
    }
    const Json& c = require(j, "contract", where);
    const std::string cwhere = where + ": contract";
    std::optional<ContractDocument> doc;
    try {
        doc.emplace(require_string(c, "id", cwhere), require_string(c, "text", cwhere),
                    parse_origin(require_string(c, "origin", cwhere)));
    } catch (const ValidationError& e) {
        throw FormatError(fmt::format("{}: {}", where, e.what()));
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        if (msg.starts_with(where)) {
            throw;
        }
        throw FormatError(fmt::format("{}: field 'contract.origin': {}", where, msg));
    }
    DatasetEntry e{
        .entry_id = require_string(j, "entry_id", where),
        .contract = std::move(*doc),
    };
    try {
        e.polarity = parse_polarity(require_string(j, "polarity", where));
    } catch (const FormatError& err) {
        if (std::string_view(err.what()).starts_with(where)) throw;
        field_error(where, "polarity", err.what());
    }
    try {
        e.provenance = parse_provenance(require_string(j, "provenance", where));
    } catch (const FormatError& err) {
        if (std::string_view(err.what()).starts_with(where)) throw;
        field_error(where, "provenance", err.what());
    }
    e.dataset_version = static_cast<int>(require_integer(j, "dataset_version", where));
    const Json& anns = require(j, "annotations", where);
    if (!anns.is_array()) {
        field_error(where, "annotations", "expected array");
    }
    for (std::size_t i = 0; i < anns.size(); ++i) {
        e.annotations.push_back(annotation_from_json(anns[i], fmt::format("{}: annotations[{}]", where, i)));
    }
    e.secure_rationale = optional_string(j, "secure_rationale", where);
    e.source_entry_id = optional_string(j, "source_entry_id", where);
    return e;
}

InstructionRecord instruction_from_json(const Json& j, const std::string& where) {
    const auto schema = require_string(j, "schema", where);
    if (schema != kInstructionSchema) {
        field_error(where, "schema", fmt::format("expected '{}', found '{}'", kInstructionSchema, schema));
    }
    InstructionRecord r{require_string(j, "instruction", where), require_string(j, "input", where),
                        require_string(j, "output", where)};
    return r;
}

namespace {

Json entries_header(std::size_t count) {
    Json h = Json::object();
    h["schema"] = kEntrySchema;
    h["kind"] = "header";
    h["count"] = count;
    return h;
}

bool is_header(const Json& j) {
    return j.is_object() && j.contains("kind") && j["kind"] == "header";
}

void check_header(const Json& h, const std::string& where) {
    const auto schema = require_string(h, "schema", where);
    if (schema != kEntrySchema) {
        throw FormatError(
            fmt::format("{}: schema version mismatch: expected '{}', found '{}'", where, kEntrySchema, schema));
    }
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot read '{}'", path.string()));
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        lines.push_back(std::move(line));
    }
    return lines;
}

Json parse_line(const std::string& line, const std::string& where) {
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) {
        throw FormatError(fmt::format("{}: malformed JSON", where));
    }
    return j;
}

// Parses entry lines; the header is optional unless `require_header`.
std::vector<DatasetEntry> parse_entry_lines(const fs::path& path, bool require_header) {
    const auto lines = read_lines(path);
    std::vector<DatasetEntry> out;
    bool seen_header = false;
    std::size_t record = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        const std::string line_where = fmt::format("{}:{}", path.string(), i + 1);
        Json j = parse_line(lines[i], fmt::format("{}: record {}", line_where, record + 1));
        if (!seen_header && out.empty() && record == 0 && is_header(j)) {
            check_header(j, line_where);
            seen_header = true;
            continue;
        }
        if (require_header && !seen_header) {
            throw FormatError(fmt::format("{}: missing '{}' header line", path.string(), kEntrySchema));
        }
        ++record;
        const std::string where = fmt::format("{}: record {}", line_where, record);
        DatasetEntry e = entry_from_json(j, where);
        try {
            validate(e);
        } catch (const ValidationError& err) {
            throw FormatError(fmt::format("{}: {}", where, err.what()));
        }
        out.push_back(std::move(e));
    }
    if (require_header && !seen_header) {
        throw FormatError(fmt::format("{}: missing '{}' header line", path.string(), kEntrySchema));
    }
    return out;
}

}  // namespace

void write_entries(std::span<const DatasetEntry> entries, const fs::path& path) {
    std::string content = entries_header(entries.size()).dump();
    content += '\n';
    for (const auto& e : entries) {
        validate(e);
        content += to_json(e).dump();
        content += '\n';
    }
    atomic_write_file(path, content);
}

std::vector<DatasetEntry> read_entries(const fs::path& path) { return parse_entry_lines(path, true); }

void write_instructions(std::span<const InstructionRecord> records, const fs::path& path) {
    std::string content;
    for (const auto& r : records) {
        validate(r);
        content += to_json(r).dump();
        content += '\n';
    }
    atomic_write_file(path, content);
}

std::vector<InstructionRecord> read_instructions(const fs::path& path) {
    const auto lines = read_lines(path);
    std::vector<InstructionRecord> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) {
            continue;
        }
        const std::string where = fmt::format("{}:{}", path.string(), i + 1);
        auto r = instruction_from_json(parse_line(lines[i], where), where);
        try {
            validate(r);
        } catch (const ValidationError& err) {
            throw FormatError(fmt::format("{}: {}", where, err.what()));
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::optional<LineSpan> loose_span_from_json(const Json& j, const std::string& where) {
    for (const char* key : {"span", "lines"}) {
        auto it = j.find(key);
        if (it == j.end() || it->is_null()) {
            continue;
        }
        if (it->is_array() && !it->empty() && std::all_of(it->begin(), it->end(), [](const Json& v) {
                return v.is_number_integer();
            })) {
            int lo = (*it)[0].get<int>();
            int hi = lo;
            for (const auto& v : *it) {
                lo = std::min(lo, v.get<int>());
                hi = std::max(hi, v.get<int>());
            }
            return LineSpan{lo, hi};
        }
        if (it->is_number_integer()) {
            return LineSpan{it->get<int>(), it->get<int>()};
        }
        detail::field_error(where, key, "expected [start, end]");
    }
    if (auto it = j.find("line"); it != j.end() && it->is_number_integer()) {
        return LineSpan{it->get<int>(), it->get<int>()};
    }
    return std::nullopt;
}

CorpusFormat parse_corpus_format(std::string_view text) {
    if (text == "annotated-json") return CorpusFormat::AnnotatedJson;
    if (text == "entries-jsonl") return CorpusFormat::EntriesJsonl;
    throw ConfigError(fmt::format("unknown corpus format '{}' (expected annotated-json or entries-jsonl)", text));
}

namespace {

std::optional<LineSpan> span_from_annotated(const Json& v, const std::string& where) {
    if (auto it = v.find("span"); it != v.end() && !it->is_null()) {
        return span_from_json(v, where);
    }
    auto it = v.find("lines");
    if (it == v.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_array() || it->empty()) {
        field_error(where, "lines", "expected a non-empty array of line numbers");
    }
    int lo = 0;
    int hi = 0;
    for (std::size_t i = 0; i < it->size(); ++i) {
        if (!(*it)[i].is_number_integer()) {
            field_error(where, "lines", "expected integers");
        }
        const int n = (*it)[i].get<int>();
        lo = i == 0 ? n : std::min(lo, n);
        hi = i == 0 ? n : std::max(hi, n);
    }
    return LineSpan{lo, hi};
}

std::vector<DatasetEntry> load_annotated_json(const fs::path& path, const LoadOptions& options) {
    const std::string text = read_text_file(path);
    Json root = Json::parse(text, nullptr, false);
    if (root.is_discarded()) {
        throw FormatError(fmt::format("{}: malformed JSON", path.string()));
    }
    if (!root.is_array()) {
        throw FormatError(fmt::format("{}: expected a top-level array of contracts", path.string()));
    }
    const CategoryAliases& aliases = options.aliases ? *options.aliases : CategoryAliases::builtin();
    const std::string source = options.source_name.empty() ? path.stem().string() : options.source_name;

    std::vector<DatasetEntry> out;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < root.size(); ++i) {
        const Json& rec = root[i];
        const std::string where = fmt::format("{}: record {}", path.string(), i + 1);
        auto name = optional_string(rec, "name", where);
        if (!name) {
            name = optional_string(rec, "id", where);
        }
        if (!name || name->empty()) {
            field_error(where, "name", "missing");
        }
        std::string source_text;
        if (auto inline_src = optional_string(rec, "source", where)) {
            source_text = *inline_src;
        } else if (auto rel = optional_string(rec, "path", where)) {
            source_text = read_text_file(path.parent_path() / *rel);
        } else {
            field_error(where, "source", "missing (neither 'source' nor 'path' given)");
        }
        std::string entry_id = fs::path(*name).stem().string();
        if (!ids.insert(entry_id).second) {
            field_error(where, "name", fmt::format("duplicate contract '{}'", entry_id));
        }
        std::optional<ContractDocument> doc;
        try {
            doc.emplace(entry_id, normalize_newlines(source_text), Origin{OriginKind::ManualLabeled, source});
        } catch (const ValidationError& e) {
            throw FormatError(fmt::format("{}: {}", where, e.what()));
        }
        DatasetEntry e{.entry_id = entry_id, .contract = std::move(*doc)};
        e.provenance = Provenance::Manual;

        if (auto vit = rec.find("vulnerabilities"); vit != rec.end() && !vit->is_null()) {
            if (!vit->is_array()) {
                field_error(where, "vulnerabilities", "expected array");
            }
            for (std::size_t k = 0; k < vit->size(); ++k) {
                const Json& v = (*vit)[k];
                const std::string vwhere = fmt::format("{}: vulnerabilities[{}]", where, k);
                VulnerabilityAnnotation a;
                auto label = optional_string(v, "label", vwhere);
                if (!label) {
                    label = require_string(v, "category", vwhere);
                }
                a.label_name = *label;
                a.label_id = normalize_label_id(*label);
                if (a.label_id.empty()) {
                    field_error(vwhere, "category", "empty label");
                }
                a.category = aliases.resolve(optional_string(v, "category", vwhere).value_or(*label));
                a.span = span_from_annotated(v, vwhere);
                a.function = optional_string(v, "function", vwhere);
                a.rationale = optional_string(v, "rationale", vwhere).value_or("");
                a.detectable = optional_bool(v, "detectable", vwhere);
                if (a.span && (a.span->start < 1 || a.span->start > a.span->end ||
                               static_cast<std::size_t>(a.span->end) > e.contract.line_count())) {
                    throw FormatError(fmt::format("{}: span [{},{}] exceeds document length of {} lines", vwhere,
                                                  a.span->start, a.span->end, e.contract.line_count()));
                }
                e.annotations.push_back(std::move(a));
            }
        }
        if (e.annotations.empty()) {
            e.polarity = Polarity::Secure;
            e.secure_rationale = optional_string(rec, "secure_rationale", where)
                                     .value_or("No vulnerabilities are annotated for this contract.");
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

std::vector<DatasetEntry> load_annotated_corpus(const fs::path& path, CorpusFormat format,
                                                const LoadOptions& options) {
    if (!fs::exists(path)) {
        throw IoError(fmt::format("corpus '{}' does not exist", path.string()));
    }
    switch (format) {
        case CorpusFormat::AnnotatedJson: return load_annotated_json(path, options);
        case CorpusFormat::EntriesJsonl: return parse_entry_lines(path, false);
    }
    return {};
}

std::vector<DatasetEntry> merge_datasets(std::span<const DatasetEntry> vulnerable,
                                         std::span<const DatasetEntry> secure) {
    std::set<std::string, std::less<>> ids;
    std::vector<DatasetEntry> out;
    out.reserve(vulnerable.size() + secure.size());
    auto take = [&](std::span<const DatasetEntry> block, Polarity expected) {
        for (const auto& e : block) {
            if (e.polarity != expected) {
                throw ValidationError(fmt::format("merge: entry '{}' has polarity {} in the {} block", e.entry_id,
                                                  to_string(e.polarity), to_string(expected)));
            }
            if (!ids.insert(e.entry_id).second) {
                throw ValidationError(fmt::format("merge: duplicate entry_id '{}'", e.entry_id));
            }
            out.push_back(e);
        }
    };
    take(vulnerable, Polarity::Vulnerable);
    take(secure, Polarity::Secure);
    return out;
}

}  // namespace auditforge::corpus
