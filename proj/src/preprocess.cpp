#include "auditforge/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <mutex>

#include <fmt/format.h>

#include "auditforge/error.hpp"

namespace auditforge::preprocess {

using corpus::DatasetEntry;
using corpus::InstructionRecord;

namespace {

std::string normalize_endings(std::string_view text) {
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

std::string drop_controls(std::string_view text, bool keep_cr) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (c < 0x20) {
            if (c == '\n' || c == '\t' || (keep_cr && c == '\r')) {
                out += static_cast<char>(c);
            }
            continue;
        }
        if (c == 0x7f) {
            continue;
        }
        // C1 controls U+0080..U+009F are encoded as C2 80..C2 9F.
        if (c == 0xC2 && i + 1 < text.size()) {
            const auto n = static_cast<unsigned char>(text[i + 1]);
            if (n >= 0x80 && n <= 0x9F) {
                ++i;
                continue;
            }
        }
        out += static_cast<char>(c);
    }
    return out;
}

std::string strip_comments(std::string_view text) {
    enum class State { Code, LineComment, BlockComment, String };
    std::string out;
    out.reserve(text.size());
    State state = State::Code;
    char quote = 0;
    bool block_had_newline = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        const char next = i + 1 < text.size() ? text[i + 1] : '\0';
        switch (state) {
            case State::Code:
                if (c == '/' && next == '/') {
                    state = State::LineComment;
                    ++i;
                } else if (c == '/' && next == '*') {
                    state = State::BlockComment;
                    block_had_newline = false;
                    ++i;
                } else {
                    if (c == '"' || c == '\'') {
                        state = State::String;
                        quote = c;
                    }
                    out += c;
                }
                break;
            case State::LineComment:
                if (c == '\n') {
                    out += c;
                    state = State::Code;
                }
                break;
            case State::BlockComment:
                if (c == '\n') {
                    out += c;
                    block_had_newline = true;
                } else if (c == '*' && next == '/') {
                    if (!block_had_newline) {
                        out += ' ';
                    }
                    state = State::Code;
                    ++i;
                }
                break;
            case State::String:
                out += c;
                if (c == '\\' && next != '\0' && next != '\n') {
                    out += next;
                    ++i;
                } else if (c == quote || c == '\n') {
                    state = State::Code;
                }
                break;
        }
    }
    return out;
}

}  // namespace

std::string clean(std::string_view text, const CleaningConfig& config) {
    std::string s = config.normalize_line_endings ? normalize_endings(text) : std::string(text);
    s = drop_controls(s, !config.normalize_line_endings);
    if (config.strip_comments) {
        s = strip_comments(s);
    }

    const bool ends_with_newline = !s.empty() && s.back() == '\n';
    std::vector<std::string_view> lines;
    {
        std::string_view sv(s);
        if (ends_with_newline) {
            sv.remove_suffix(1);
        }
        if (!s.empty()) {
            std::size_t pos = 0;
            while (true) {
                const auto eol = sv.find('\n', pos);
                auto line = sv.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
                const auto last = line.find_last_not_of(" \t");
                lines.push_back(last == std::string_view::npos ? line.substr(0, 0) : line.substr(0, last + 1));
                if (eol == std::string_view::npos) break;
                pos = eol + 1;
            }
        }
    }

    std::string out;
    out.reserve(s.size());
    std::size_t i = 0;
    bool first = true;
    while (i < lines.size()) {
        if (config.collapse_blank_lines && lines[i].empty()) {
            std::size_t j = i;
            while (j < lines.size() && lines[j].empty()) {
                ++j;
            }
            const std::size_t run = j - i;
            const std::size_t emit = run > 2 ? 1 : run;
            for (std::size_t k = 0; k < emit; ++k) {
                if (!first) out += '\n';
                first = false;
            }
            i = j;
            continue;
        }
        if (!first) out += '\n';
        first = false;
        out.append(lines[i]);
        ++i;
    }
    if (ends_with_newline) {
        out += '\n';
    }
    return out;
}

InstructionRecord to_instruction(const DatasetEntry& entry, std::string_view instruction_text,
                                 const CleaningConfig& cleaning) {
    InstructionRecord r;
    r.instruction = std::string(instruction_text);
    r.input = clean(entry.contract.source_text(), cleaning);
    if (entry.polarity == corpus::Polarity::Secure) {
        r.output = std::string(kNoVulnerabilitySentence);
        if (entry.secure_rationale && !entry.secure_rationale->empty()) {
            r.output += ' ';
            r.output += *entry.secure_rationale;
        }
    } else {
        Json findings = Json::array();
        for (const auto& a : entry.annotations) {
            Json f = Json::object();
            f["label_id"] = a.label_id;
            f["label_name"] = a.label_name;
            f["category"] = corpus::category_code(a.category);
            if (a.span) {
                f["span"] = Json::array({a.span->start, a.span->end});
            }
            if (a.function) {
                f["function"] = *a.function;
            }
            f["rationale"] = a.rationale;
            findings.push_back(std::move(f));
        }
        Json out = Json::object();
        out["findings"] = std::move(findings);
        r.output = out.dump();
    }
    return r;
}

std::size_t count_tokens_default(std::string_view text) noexcept {
    std::size_t tokens = 0;
    bool in_word = false;
    for (unsigned char c : text) {
        const bool word = std::isalnum(c) || c == '_' || c >= 0x80;
        if (word) {
            if (!in_word) {
                ++tokens;
            }
            in_word = true;
            continue;
        }
        in_word = false;
        if (!std::isspace(c)) {
            ++tokens;
        }
    }
    return tokens;
}

namespace {

std::mutex g_registry_mutex;

std::map<std::string, TokenCounter, std::less<>>& tokenizer_registry() {
    static std::map<std::string, TokenCounter, std::less<>> registry;
    return registry;
}

std::map<std::string, EmbedderFactory, std::less<>>& embedder_registry() {
    static std::map<std::string, EmbedderFactory, std::less<>> registry;
    return registry;
}

std::optional<std::string_view> external_name(std::string_view spec) {
    constexpr std::string_view prefix = "external:";
    if (spec.starts_with(prefix)) {
        return spec.substr(prefix.size());
    }
    return std::nullopt;
}

}  // namespace

Tokenizer Tokenizer::default_regex() { return Tokenizer("default-regex", &count_tokens_default); }

Tokenizer Tokenizer::named(std::string_view spec) {
    if (spec == "default-regex") {
        return default_regex();
    }
    if (auto name = external_name(spec)) {
        std::lock_guard lock(g_registry_mutex);
        auto& reg = tokenizer_registry();
        if (auto it = reg.find(*name); it != reg.end()) {
            return Tokenizer(std::string(spec), it->second);
        }
        throw ConfigError(fmt::format("unknown external tokenizer '{}'", *name));
    }
    throw ConfigError(fmt::format("unknown tokenizer '{}'", spec));
}

void Tokenizer::register_external(std::string name, TokenCounter counter) {
    std::lock_guard lock(g_registry_mutex);
    tokenizer_registry()[std::move(name)] = std::move(counter);
}

std::size_t count_tokens(std::string_view text, const Tokenizer& tokenizer) { return tokenizer.count(text); }

std::size_t record_tokens(const InstructionRecord& record, const Tokenizer& tokenizer) {
    return tokenizer.count(record.instruction) + tokenizer.count(record.input) + tokenizer.count(record.output);
}

LengthFilterResult filter_by_length(std::span<const InstructionRecord> records, std::size_t max_tokens,
                                    const Tokenizer& tokenizer) {
    if (max_tokens == 0) {
        throw ValidationError("max_tokens must be positive");
    }
    LengthFilterResult out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (record_tokens(records[i], tokenizer) > max_tokens) {
            out.removed.push_back(records[i]);
            out.removed_index.push_back(i);
        } else {
            out.kept.push_back(records[i]);
            out.kept_index.push_back(i);
        }
    }
    return out;
}

bool TextVector::is_zero() const noexcept {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

double TextVector::norm() const noexcept {
    double s = 0.0;
    for (double v : values) {
        s += v * v;
    }
    return std::sqrt(s);
}

double cosine(const TextVector& a, const TextVector& b) {
    if (a.values.size() != b.values.size()) {
        throw ValidationError(
            fmt::format("cosine of vectors with different dimensions ({} vs {})", a.values.size(), b.values.size()));
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
    }
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

HashedNgramEmbedder::HashedNgramEmbedder(std::size_t dim, std::size_t n) : dim_(dim), n_(n) {
    if (dim_ == 0 || n_ == 0) {
        throw ConfigError("hashed-ngram embedder needs positive dimension and n");
    }
}

std::string HashedNgramEmbedder::name() const { return fmt::format("hashed-ngram(d={},n={})", dim_, n_); }

TextVector HashedNgramEmbedder::embed(std::string_view text) const {
    TextVector v{std::vector<double>(dim_, 0.0)};
    const std::string normalized = to_lower_ascii(clean(text));
    if (normalized.empty()) {
        return v;
    }
    // Byte offsets of codepoint starts, plus the end.
    std::vector<std::size_t> starts;
    for (std::size_t i = 0; i < normalized.size(); ++i) {
        if ((static_cast<unsigned char>(normalized[i]) & 0xC0) != 0x80) {
            starts.push_back(i);
        }
    }
    starts.push_back(normalized.size());
    const std::size_t cps = starts.size() - 1;

    auto add_gram = [&](std::string_view gram) {
        const std::uint64_t h = fnv1a64(gram);
        const double sign = (h >> 63) != 0 ? -1.0 : 1.0;
        v.values[h % dim_] += sign;
    };
    if (cps < n_) {
        add_gram(normalized);
    } else {
        for (std::size_t i = 0; i + n_ <= cps; ++i) {
            add_gram(std::string_view(normalized).substr(starts[i], starts[i + n_] - starts[i]));
        }
    }
    const double norm = v.norm();
    if (norm > 0.0) {
        for (double& x : v.values) {
            x /= norm;
        }
    }
    return v;
}

std::unique_ptr<Embedder> make_embedder(std::string_view spec) {
    if (spec == "hashed-ngram") {
        return std::make_unique<HashedNgramEmbedder>();
    }
    if (auto name = external_name(spec)) {
        std::lock_guard lock(g_registry_mutex);
        auto& reg = embedder_registry();
        if (auto it = reg.find(*name); it != reg.end()) {
            return it->second();
        }
        throw ConfigError(fmt::format("unknown external embedding backend '{}'", *name));
    }
    throw ConfigError(fmt::format("unknown embedding backend '{}'", spec));
}

void register_embedder(std::string name, EmbedderFactory factory) {
    std::lock_guard lock(g_registry_mutex);
    embedder_registry()[std::move(name)] = std::move(factory);
}

TextVector embed(std::string_view text, const Embedder& backend) { return backend.embed(text); }

namespace {

int provenance_rank(corpus::Provenance p) {
    switch (p) {
        case corpus::Provenance::Manual: return 0;
        case corpus::Provenance::Seed: return 1;
        case corpus::Provenance::DistilledVulnerable:
        case corpus::Provenance::DistilledSecure: return 2;
    }
    return 2;
}

}  // namespace

DedupResult dedup(std::span<const DatasetEntry> entries, double threshold, const Embedder& backend) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw ValidationError(fmt::format("dedup threshold {} outside (0, 1]", threshold));
    }
    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return provenance_rank(entries[a].provenance) < provenance_rank(entries[b].provenance);
    });

    std::vector<TextVector> vectors;
    vectors.reserve(entries.size());
    for (const auto& e : entries) {
        vectors.push_back(backend.embed(e.contract.source_text()));
    }

    std::vector<DedupDecision> decisions(entries.size());
    std::vector<std::size_t> kept_indices;
    std::vector<bool> kept_flag(entries.size(), false);
    for (std::size_t idx : order) {
        DedupDecision d{entries[idx].entry_id, true, std::nullopt, 0.0};
        std::optional<std::size_t> nearest;
        double best = -2.0;
        for (std::size_t k : kept_indices) {
            const double sim = cosine(vectors[idx], vectors[k]);
            if (sim > best) {
                best = sim;
                nearest = k;
            }
        }
        if (nearest) {
            d.similarity = best;
            d.nearest_kept_id = entries[*nearest].entry_id;
            d.kept = best < threshold;
        }
        if (d.kept) {
            kept_indices.push_back(idx);
            kept_flag[idx] = true;
        }
        decisions[idx] = std::move(d);
    }

    DedupResult result;
    result.log = std::move(decisions);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (kept_flag[i]) {
            result.kept.push_back(entries[i]);
        }
    }
    return result;
}

}  // namespace auditforge::preprocess
