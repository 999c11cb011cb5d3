#include "auditforge/gate.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "auditforge/error.hpp"
#include "auditforge/json_fields.hpp"
#include "auditforge/log.hpp"

namespace auditforge::gate {

using corpus::DatasetEntry;
using detail::field_error;
using detail::require;
using detail::require_integer;
using detail::require_number;
using detail::require_string;

namespace {

constexpr double kClamp = 1e-9;

std::vector<Json> read_jsonl(const std::filesystem::path& path, std::vector<std::size_t>& line_numbers) {
    const std::string text = read_text_file(path);
    std::vector<Json> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string_view line(text.data() + pos, eol - pos);
        ++line_no;
        pos = eol + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
            continue;
        }
        try {
            out.push_back(Json::parse(line));
        } catch (const Json::parse_error& e) {
            throw FormatError(fmt::format("{}:{}: invalid JSON: {}", path.string(), line_no, e.what()));
        }
        line_numbers.push_back(line_no);
    }
    return out;
}

void write_jsonl(const std::vector<Json>& lines, const std::filesystem::path& path) {
    std::string out;
    for (const auto& j : lines) {
        out += j.dump();
        out += '\n';
    }
    atomic_write_file(path, out);
}

void require_schema(const Json& j, std::string_view expected, const std::string& where) {
    const auto schema = require_string(j, "schema", where);
    if (schema != expected) {
        throw FormatError(fmt::format("{}: schema '{}' where '{}' was expected", where, schema, expected));
    }
}

double get_or(const Json& j, std::string_view key, double fallback, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    if (!it->is_number()) field_error(where, key, "expected number");
    return it->get<double>();
}

}  // namespace

// ---- prediction logs -----------------------------------------------------------

void validate(const PredictionRecord& r) {
    const auto who = fmt::format("prediction {}/{}", r.model_id, r.entry_id);
    if (r.model_id.empty() || r.entry_id.empty()) {
        throw ValidationError(fmt::format("{}: model_id and entry_id must be non-empty", who));
    }
    if (!(r.label_probability > 0.0 && r.label_probability <= 1.0)) {
        throw ValidationError(fmt::format("{}: label_probability {} outside (0, 1]", who, r.label_probability));
    }
    if (!(r.rationale_presence >= 0.0 && r.rationale_presence <= 1.0)) {
        throw ValidationError(fmt::format("{}: rationale_presence {} outside [0, 1]", who, r.rationale_presence));
    }
    for (const auto& l : r.predicted_labels) {
        if (!(l.probability >= 0.0 && l.probability <= 1.0)) {
            throw ValidationError(
                fmt::format("{}: predicted label '{}' probability {} outside [0, 1]", who, l.label_id, l.probability));
        }
    }
}

Json to_json(const PredictionRecord& r) {
    Json j = Json::object();
    j["schema"] = kPredictionSchema;
    j["model_id"] = r.model_id;
    j["entry_id"] = r.entry_id;
    j["label_probability"] = r.label_probability;
    Json labels = Json::array();
    for (const auto& l : r.predicted_labels) {
        labels.push_back({{"label_id", l.label_id}, {"probability", l.probability}});
    }
    j["predicted_labels"] = std::move(labels);
    j["rationale_presence"] = r.rationale_presence;
    j["rationale_correct"] = r.rationale_correct ? Json(*r.rationale_correct) : Json(nullptr);
    j["raw_report"] = r.raw_report;
    return j;
}

PredictionRecord prediction_from_json(const Json& j, const std::string& where) {
    require_schema(j, kPredictionSchema, where);
    PredictionRecord r;
    r.model_id = require_string(j, "model_id", where);
    r.entry_id = require_string(j, "entry_id", where);
    r.label_probability = require_number(j, "label_probability", where);
    r.rationale_presence = require_number(j, "rationale_presence", where);
    if (auto it = j.find("predicted_labels"); it != j.end() && !it->is_null()) {
        if (!it->is_array()) field_error(where, "predicted_labels", "expected array");
        std::size_t i = 0;
        for (const auto& l : *it) {
            const auto w = fmt::format("{}: predicted_labels[{}]", where, i++);
            r.predicted_labels.push_back({require_string(l, "label_id", w), require_number(l, "probability", w)});
        }
    }
    r.rationale_correct = detail::optional_bool(j, "rationale_correct", where);
    r.raw_report = detail::optional_string(j, "raw_report", where).value_or("");
    try {
        validate(r);
    } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("{}: {}", where, e.what()));
    }
    return r;
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
    std::vector<std::size_t> lines;
    const auto docs = read_jsonl(path, lines);
    std::vector<PredictionRecord> out;
    out.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        out.push_back(prediction_from_json(docs[i], fmt::format("{}:{}", path.string(), lines[i])));
    }
    return out;
}

void write_predictions(std::span<const PredictionRecord> records, const std::filesystem::path& path) {
    std::vector<Json> lines;
    for (const auto& r : records) {
        validate(r);
        lines.push_back(to_json(r));
    }
    write_jsonl(lines, path);
}

void resolve_rationale_correctness(std::vector<PredictionRecord>& records, std::span<const DatasetEntry> dataset,
                                   const evaluator::MatchOptions& options) {
    std::map<std::string_view, const DatasetEntry*> by_id;
    for (const auto& e : dataset) {
        by_id.emplace(e.entry_id, &e);
    }
    for (auto& r : records) {
        if (r.rationale_correct) {
            continue;
        }
        auto it = by_id.find(r.entry_id);
        if (it == by_id.end()) {
            throw ValidationError(
                fmt::format("prediction {}/{}: entry not in the dataset under evaluation", r.model_id, r.entry_id));
        }
        r.rationale_correct = evaluator::rationale_correct(*it->second, r.raw_report, options);
    }
}

// ---- losses -------------------------------------------------------------------

double label_loss(std::span<const PredictionRecord> records) {
    if (records.empty()) {
        throw ValidationError("label_loss of an empty prediction set");
    }
    double sum = 0.0;
    for (const auto& r : records) {
        if (!(r.label_probability > 0.0)) {
            throw ValidationError(fmt::format("prediction {}/{}: zero label probability (degenerate prediction log)",
                                              r.model_id, r.entry_id));
        }
        sum += std::log(r.label_probability);
    }
    return -sum / static_cast<double>(records.size());
}

std::string_view to_string(Weighting w) {
    switch (w) {
        case Weighting::None: return "none";
        case Weighting::ByLabelCount: return "by-label-count";
        case Weighting::ByValidRationaleCount: return "by-valid-rationale-count";
    }
    return "none";
}

Weighting parse_weighting(std::string_view text) {
    for (auto w : {Weighting::None, Weighting::ByLabelCount, Weighting::ByValidRationaleCount}) {
        if (to_string(w) == text) return w;
    }
    throw ConfigError(fmt::format("unknown weighting '{}'", text));
}

double weighted_label_loss(std::span<const PredictionRecord> records, std::span<const std::string> classes) {
    if (records.empty()) {
        throw ValidationError("weighted_label_loss of an empty prediction set");
    }
    if (classes.size() != records.size()) {
        throw ValidationError(
            fmt::format("weighted_label_loss: {} classes for {} records", classes.size(), records.size()));
    }
    std::map<std::string_view, std::size_t> counts;
    for (const auto& c : classes) {
        ++counts[c];
    }
    const double n = static_cast<double>(records.size());
    const double c = static_cast<double>(counts.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!(r.label_probability > 0.0)) {
            throw ValidationError(fmt::format("prediction {}/{}: zero label probability (degenerate prediction log)",
                                              r.model_id, r.entry_id));
        }
        const double w = n / (c * static_cast<double>(counts[classes[i]]));
        sum += w * std::log(r.label_probability);
    }
    return -sum / n;
}

std::vector<std::string> weighting_classes(std::span<const PredictionRecord> records, Weighting scheme,
                                           const std::map<std::string, std::string>& labels) {
    std::vector<std::string> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        switch (scheme) {
            case Weighting::None:
                out.emplace_back("all");
                break;
            case Weighting::ByLabelCount: {
                auto it = labels.find(r.entry_id);
                if (it == labels.end()) {
                    throw ValidationError(fmt::format("prediction {}/{}: true label unknown", r.model_id, r.entry_id));
                }
                out.push_back(it->second);
                break;
            }
            case Weighting::ByValidRationaleCount:
                if (!r.rationale_correct) {
                    throw ValidationError(
                        fmt::format("prediction {}/{}: rationale verdict unresolved", r.model_id, r.entry_id));
                }
                out.emplace_back(*r.rationale_correct ? "valid" : "invalid");
                break;
        }
    }
    return out;
}

std::map<std::string, std::string> true_labels(std::span<const DatasetEntry> dataset) {
    std::map<std::string, std::string> out;
    for (const auto& e : dataset) {
        out[e.entry_id] = (e.polarity == corpus::Polarity::Secure || e.annotations.empty())
                              ? std::string("secure")
                              : e.annotations.front().label_id;
    }
    return out;
}

double rationale_loss(std::span<const PredictionRecord> records) {
    if (records.empty()) {
        throw ValidationError("rationale_loss of an empty prediction set");
    }
    double sum = 0.0;
    for (const auto& r : records) {
        if (!r.rationale_correct) {
            throw ValidationError(fmt::format("prediction {}/{}: rationale verdict unresolved", r.model_id, r.entry_id));
        }
        const double g = std::clamp(r.rationale_presence, kClamp, 1.0 - kClamp);
        sum += *r.rationale_correct ? std::log(g) : std::log(1.0 - g);
    }
    return -sum / static_cast<double>(records.size());
}

double combined_loss(double label, double rationale, double lambda) noexcept { return label + lambda * rationale; }

namespace {

double assumed_loss(long n, long n_correct, double q, std::string_view what) {
    if (n <= 0 || n_correct < 0 || n_correct > n) {
        throw ValidationError(fmt::format("{}: need N > 0 and 0 <= N_co <= N (got N={}, N_co={})", what, n, n_correct));
    }
    if (!(q > 0.0 && q < 1.0)) {
        throw ValidationError(fmt::format("{}: probability {} outside (0, 1)", what, q));
    }
    const double nc = static_cast<double>(n_correct);
    const double ni = static_cast<double>(n - n_correct);
    return -(nc * std::log(q) + ni * std::log(1.0 - q)) / static_cast<double>(n);
}

}  // namespace

double assumed_label_loss(long n, long n_correct, double p) { return assumed_loss(n, n_correct, p, "assumed_label_loss"); }

double assumed_rationale_loss(long n, long n_correct, double g) {
    return assumed_loss(n, n_correct, g, "assumed_rationale_loss");
}

// ---- configuration and classification -------------------------------------------

void validate(const GateConfig& c) {
    if (!(c.l_l > 0.0 && c.l_l < c.l_h)) {
        throw ConfigError(fmt::format("gate thresholds need 0 < L_l < L_h (got L_l={}, L_h={})", c.l_l, c.l_h));
    }
    if (!(c.l_b > 0.0)) throw ConfigError("L_b must be positive");
    if (!(c.lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (!(c.assumed_p > 0.0 && c.assumed_p < 1.0)) throw ConfigError("assumed_p must lie in (0, 1)");
    if (!(c.assumed_g > 0.0 && c.assumed_g < 1.0)) throw ConfigError("assumed_g must lie in (0, 1)");
    if (c.max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
    if (c.revision_count && *c.revision_count == 0) throw ConfigError("revision_count must be positive");
    if (!(c.revision_fraction > 0.0 && c.revision_fraction <= 1.0)) {
        throw ConfigError("revision_fraction must lie in (0, 1]");
    }
}

Json to_json(const GateConfig& c) {
    Json j = Json::object();
    j["L_b"] = c.l_b;
    j["L_l"] = c.l_l;
    j["L_h"] = c.l_h;
    j["lambda"] = c.lambda;
    j["assumed_p"] = c.assumed_p;
    j["assumed_g"] = c.assumed_g;
    j["max_iterations"] = c.max_iterations;
    j["revision_count"] = c.revision_count ? Json(*c.revision_count) : Json(nullptr);
    j["revision_fraction"] = c.revision_fraction;
    return j;
}

GateConfig gate_config_from_json(const Json& j, const std::string& where) {
    if (!j.is_object()) {
        throw FormatError(fmt::format("{}: gate config must be an object", where));
    }
    GateConfig c;
    c.l_b = get_or(j, "L_b", c.l_b, where);
    c.l_l = get_or(j, "L_l", c.l_l, where);
    c.l_h = get_or(j, "L_h", c.l_h, where);
    c.lambda = get_or(j, "lambda", c.lambda, where);
    c.assumed_p = get_or(j, "assumed_p", c.assumed_p, where);
    c.assumed_g = get_or(j, "assumed_g", c.assumed_g, where);
    if (auto it = j.find("max_iterations"); it != j.end() && !it->is_null()) {
        c.max_iterations = static_cast<int>(require_integer(j, "max_iterations", where));
    }
    if (auto it = j.find("revision_count"); it != j.end() && !it->is_null()) {
        const auto n = require_integer(j, "revision_count", where);
        if (n <= 0) field_error(where, "revision_count", "must be positive");
        c.revision_count = static_cast<std::size_t>(n);
    }
    c.revision_fraction = get_or(j, "revision_fraction", c.revision_fraction, where);
    validate(c);
    return c;
}

std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::WellOptimized: return "well-optimized";
        case Verdict::Acceptable: return "acceptable";
        case Verdict::Unsuitable: return "unsuitable";
    }
    return "unsuitable";
}

Verdict classify_model(double loss, const GateConfig& config) noexcept {
    if (loss <= config.l_l) return Verdict::WellOptimized;
    if (loss <= config.l_h) return Verdict::Acceptable;
    return Verdict::Unsuitable;
}

std::vector<std::string> initial_filter(std::span<const Candidate> candidates, double l_b) {
    std::vector<std::string> out;
    for (const auto& c : candidates) {
        if (c.label_loss < l_b) {
            out.push_back(c.model_id);
        }
    }
    return out;
}

Json to_json(const LossReport& r) {
    Json j = Json::object();
    j["model_id"] = r.model_id;
    j["dataset_version"] = r.dataset_version;
    j["N"] = r.n;
    j["N_co"] = r.n_correct;
    j["N_in"] = r.n_incorrect;
    j["label_loss"] = r.label_loss;
    j["rationale_loss"] = r.rationale_loss;
    j["lambda"] = r.lambda;
    j["combined"] = r.combined;
    j["weighting"] = to_string(r.weighting);
    return j;
}

LossReport loss_report_from_json(const Json& j, const std::string& where) {
    LossReport r;
    r.model_id = require_string(j, "model_id", where);
    r.dataset_version = static_cast<int>(require_integer(j, "dataset_version", where));
    r.n = require_integer(j, "N", where);
    r.n_correct = require_integer(j, "N_co", where);
    r.n_incorrect = require_integer(j, "N_in", where);
    r.label_loss = require_number(j, "label_loss", where);
    r.rationale_loss = require_number(j, "rationale_loss", where);
    r.lambda = require_number(j, "lambda", where);
    r.combined = require_number(j, "combined", where);
    r.weighting = parse_weighting(detail::optional_string(j, "weighting", where).value_or("none"));
    if (r.n != r.n_correct + r.n_incorrect) {
        throw ValidationError(fmt::format("{}: N != N_co + N_in", where));
    }
    if (std::abs(r.combined - combined_loss(r.label_loss, r.rationale_loss, r.lambda)) > 1e-12) {
        throw ValidationError(fmt::format("{}: combined != label_loss + lambda * rationale_loss", where));
    }
    return r;
}

LossReport exact_report(std::string model_id, int dataset_version, std::span<const PredictionRecord> records,
                        const GateConfig& config, Weighting weighting,
                        const std::map<std::string, std::string>& labels) {
    for (const auto& r : records) {
        if (r.model_id != model_id) {
            throw ValidationError(
                fmt::format("loss report for '{}' given a prediction from '{}'", model_id, r.model_id));
        }
    }
    LossReport rep;
    rep.model_id = std::move(model_id);
    rep.dataset_version = dataset_version;
    rep.n = static_cast<long>(records.size());
    rep.n_correct = static_cast<long>(std::count_if(records.begin(), records.end(),
                                                    [](const PredictionRecord& r) { return r.label_probability >= 0.5; }));
    rep.n_incorrect = rep.n - rep.n_correct;
    rep.weighting = weighting;
    rep.label_loss = weighting == Weighting::None
                         ? label_loss(records)
                         : weighted_label_loss(records, weighting_classes(records, weighting, labels));
    rep.rationale_loss = rationale_loss(records);
    rep.lambda = config.lambda;
    rep.combined = combined_loss(rep.label_loss, rep.rationale_loss, rep.lambda);
    return rep;
}

LossReport assumed_report(std::string model_id, int dataset_version, long n, long n_correct, const GateConfig& config) {
    LossReport rep;
    rep.model_id = std::move(model_id);
    rep.dataset_version = dataset_version;
    rep.n = n;
    rep.n_correct = n_correct;
    rep.n_incorrect = n - n_correct;
    rep.label_loss = assumed_label_loss(n, n_correct, config.assumed_p);
    rep.rationale_loss = assumed_rationale_loss(n, n_correct, config.assumed_g);
    rep.lambda = config.lambda;
    rep.combined = combined_loss(rep.label_loss, rep.rationale_loss, rep.lambda);
    return rep;
}

// ---- state machine --------------------------------------------------------------

std::string_view to_string(ModelStatus s) {
    switch (s) {
        case ModelStatus::Candidate: return "candidate";
        case ModelStatus::Selected: return "selected";
        case ModelStatus::FineTuned: return "fine-tuned";
        case ModelStatus::Removed: return "removed";
    }
    return "removed";
}

std::string_view to_string(Outcome o) {
    switch (o) {
        case Outcome::Running: return "running";
        case Outcome::Finished: return "finished";
        case Outcome::Exhausted: return "exhausted";
    }
    return "running";
}

std::string_view to_string(Action::Kind k) {
    switch (k) {
        case Action::Kind::Remove: return "remove";
        case Action::Kind::RequestRevision: return "request-revision";
        case Action::Kind::Finish: return "finish";
        case Action::Kind::Exhaust: return "exhaust";
    }
    return "remove";
}

namespace {

ModelStatus parse_status(std::string_view s, const std::string& where) {
    for (auto v : {ModelStatus::Candidate, ModelStatus::Selected, ModelStatus::FineTuned, ModelStatus::Removed}) {
        if (to_string(v) == s) return v;
    }
    throw FormatError(fmt::format("{}: unknown model status '{}'", where, s));
}

Outcome parse_outcome(std::string_view s, const std::string& where) {
    for (auto v : {Outcome::Running, Outcome::Finished, Outcome::Exhausted}) {
        if (to_string(v) == s) return v;
    }
    throw FormatError(fmt::format("{}: unknown outcome '{}'", where, s));
}

std::vector<std::string> string_array(const Json& j, std::string_view key, const std::string& where) {
    const Json& a = require(j, key, where);
    if (!a.is_array()) field_error(where, key, "expected array");
    std::vector<std::string> out;
    for (const auto& v : a) {
        if (!v.is_string()) field_error(where, key, "expected array of strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

}  // namespace

std::vector<std::string> GateState::active_models() const {
    std::vector<std::string> out;
    for (const auto& r : roster) {
        if (is_active(r)) out.push_back(r.model_id);
    }
    return out;
}

void validate(const GateState& s) {
    if (s.k < 0) throw ValidationError("gate state: negative iteration");
    if (s.dataset_chain.size() != static_cast<std::size_t>(s.k) + 1) {
        throw ValidationError(
            fmt::format("gate state: dataset chain has {} versions at iteration {}", s.dataset_chain.size(), s.k));
    }
    if (s.outcome == Outcome::Finished && !s.d_train) {
        throw ValidationError("gate state: finished without a training dataset");
    }
    std::set<std::string_view> ids;
    for (const auto& r : s.roster) {
        if (!ids.insert(r.model_id).second) {
            throw ValidationError(fmt::format("gate state: duplicate model '{}'", r.model_id));
        }
    }
    validate(s.config);
}

GateState init_state(std::span<const Candidate> candidates, std::string dataset_ref, const GateConfig& config) {
    validate(config);
    if (candidates.empty()) {
        throw ValidationError("gate: no candidate models");
    }
    GateState s;
    s.config = config;
    s.dataset_chain.push_back(std::move(dataset_ref));
    const auto kept = initial_filter(candidates, config.l_b);
    const std::set<std::string_view> selected(kept.begin(), kept.end());
    for (const auto& c : candidates) {
        RosterEntry r;
        r.model_id = c.model_id;
        r.initial_label_loss = c.label_loss;
        r.status = selected.contains(c.model_id) ? ModelStatus::Selected : ModelStatus::Removed;
        s.roster.push_back(std::move(r));
    }
    if (kept.empty()) {
        log::warn("gate", "no candidate passed the baseline filter", {{"L_b", config.l_b}});
        s.outcome = Outcome::Exhausted;
    }
    validate(s);
    return s;
}

Json to_json(const GateState& s) {
    Json j = Json::object();
    j["schema"] = kStateSchema;
    j["k"] = s.k;
    Json roster = Json::array();
    for (const auto& r : s.roster) {
        Json e = Json::object();
        e["model_id"] = r.model_id;
        e["status"] = to_string(r.status);
        e["initial_label_loss"] = r.initial_label_loss ? Json(*r.initial_label_loss) : Json(nullptr);
        e["latest"] = r.latest ? to_json(*r.latest) : Json(nullptr);
        roster.push_back(std::move(e));
    }
    j["roster"] = std::move(roster);
    j["dataset_chain"] = s.dataset_chain;
    j["revision_queue"] = s.revision_queue;
    j["outcome"] = to_string(s.outcome);
    j["d_train"] = s.d_train ? Json(*s.d_train) : Json(nullptr);
    j["awaiting_revision"] = s.awaiting_revision;
    j["config"] = to_json(s.config);
    return j;
}

GateState gate_state_from_json(const Json& j, const std::string& where) {
    require_schema(j, kStateSchema, where);
    GateState s;
    s.k = static_cast<int>(require_integer(j, "k", where));
    const Json& roster = require(j, "roster", where);
    if (!roster.is_array()) field_error(where, "roster", "expected array");
    std::size_t i = 0;
    for (const auto& e : roster) {
        const auto w = fmt::format("{}: roster[{}]", where, i++);
        RosterEntry r;
        r.model_id = require_string(e, "model_id", w);
        r.status = parse_status(require_string(e, "status", w), w);
        if (auto it = e.find("initial_label_loss"); it != e.end() && !it->is_null()) {
            r.initial_label_loss = require_number(e, "initial_label_loss", w);
        }
        if (auto it = e.find("latest"); it != e.end() && !it->is_null()) {
            r.latest = loss_report_from_json(*it, w + ".latest");
        }
        s.roster.push_back(std::move(r));
    }
    s.dataset_chain = string_array(j, "dataset_chain", where);
    s.revision_queue = string_array(j, "revision_queue", where);
    s.outcome = parse_outcome(require_string(j, "outcome", where), where);
    s.d_train = detail::optional_string(j, "d_train", where);
    s.awaiting_revision = detail::optional_bool(j, "awaiting_revision", where).value_or(false);
    s.config = gate_config_from_json(require(j, "config", where), where + ".config");
    validate(s);
    return s;
}

GateState load_state(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw FormatError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
    }
    return gate_state_from_json(j, path.string());
}

void save_state(const GateState& state, const std::filesystem::path& path) {
    validate(state);
    atomic_write_file(path, to_json(state).dump(2) + "\n");
}

namespace {

std::vector<std::string> select_revision_queue(const GateConfig& config, const std::set<std::string>& models,
                                               std::span<const PredictionRecord> predictions,
                                               std::size_t dataset_size) {
    std::map<std::string, double> worst;
    std::set<std::string_view> all_entries;
    for (const auto& p : predictions) {
        all_entries.insert(p.entry_id);
        if (!models.contains(p.model_id)) continue;
        auto [it, inserted] = worst.emplace(p.entry_id, p.label_probability);
        if (!inserted) it->second = std::min(it->second, p.label_probability);
    }
    if (dataset_size == 0) {
        dataset_size = all_entries.size();
    }
    const std::size_t want =
        config.revision_count
            ? *config.revision_count
            : static_cast<std::size_t>(std::ceil(config.revision_fraction * static_cast<double>(dataset_size)));
    std::vector<std::pair<double, std::string>> ranked;
    for (auto& [id, p] : worst) {
        ranked.emplace_back(p, id);
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ranked.size() && i < want; ++i) {
        out.push_back(ranked[i].second);
    }
    return out;
}

}  // namespace

StepResult gate_step(const GateState& state, std::span<const LossReport> reports,
                     std::span<const PredictionRecord> predictions, std::size_t dataset_size) {
    validate(state);
    if (state.outcome != Outcome::Running) {
        throw ValidationError(fmt::format("gate_step on a run that is already {}", to_string(state.outcome)));
    }
    if (state.awaiting_revision) {
        throw ValidationError(fmt::format("gate_step at iteration {}: import the revised dataset first", state.k));
    }

    std::map<std::string, const LossReport*> by_model;
    for (const auto& rep : reports) {
        auto it = std::find_if(state.roster.begin(), state.roster.end(),
                               [&](const RosterEntry& r) { return r.model_id == rep.model_id; });
        if (it == state.roster.end()) {
            throw ValidationError(fmt::format("loss report for unknown model '{}'", rep.model_id));
        }
        if (!state.is_active(*it)) {
            throw ValidationError(fmt::format("loss report for removed model '{}'", rep.model_id));
        }
        if (rep.dataset_version != state.k) {
            throw ValidationError(fmt::format("loss report for '{}' is for dataset version {}, expected {}",
                                              rep.model_id, rep.dataset_version, state.k));
        }
        if (!by_model.emplace(rep.model_id, &rep).second) {
            throw ValidationError(fmt::format("duplicate loss report for '{}'", rep.model_id));
        }
    }
    for (const auto& r : state.roster) {
        if (state.is_active(r) && !by_model.contains(r.model_id)) {
            throw ValidationError(fmt::format("missing loss report for active model '{}'", r.model_id));
        }
    }

    StepResult out{state, {}};
    GateState& next = out.state;
    std::set<std::string> revising;
    for (auto& r : next.roster) {
        if (!next.is_active(r)) continue;
        const LossReport& rep = *by_model.at(r.model_id);
        r.status = ModelStatus::FineTuned;
        r.latest = rep;
        const Verdict v = classify_model(rep.combined, next.config);
        if (v == Verdict::Unsuitable) {
            r.status = ModelStatus::Removed;
            out.actions.push_back({Action::Kind::Remove, r.model_id, rep.combined});
        } else if (v == Verdict::Acceptable) {
            revising.insert(r.model_id);
            out.actions.push_back({Action::Kind::RequestRevision, r.model_id, rep.combined});
        } else {
            next.outcome = Outcome::Finished;
            next.d_train = next.dataset_chain.at(static_cast<std::size_t>(next.k));
            out.actions.push_back({Action::Kind::Finish, r.model_id, rep.combined});
            break;
        }
    }

    if (next.outcome == Outcome::Running) {
        if (revising.empty() || next.k + 1 >= next.config.max_iterations) {
            next.outcome = Outcome::Exhausted;
            out.actions.push_back({Action::Kind::Exhaust, "", 0.0});
        } else {
            next.awaiting_revision = true;
            next.revision_queue = select_revision_queue(next.config, revising, predictions, dataset_size);
            if (next.revision_queue.empty()) {
                log::warn("gate", "revision requested but no predictions were supplied to rank entries");
            }
        }
    }
    if (next.outcome != Outcome::Running) {
        next.revision_queue.clear();
    }
    validate(next);
    return out;
}

// ---- human revision round trip ----------------------------------------------------

std::vector<RevisionRecord> build_revision_export(const GateState& state, std::span<const DatasetEntry> dataset,
                                                  std::span<const PredictionRecord> predictions) {
    if (state.revision_queue.empty()) {
        throw ValidationError("revision queue is empty; nothing to export");
    }
    const auto active = state.active_models();
    const std::set<std::string_view> active_set(active.begin(), active.end());
    std::vector<RevisionRecord> out;
    for (const auto& id : state.revision_queue) {
        auto it = std::find_if(dataset.begin(), dataset.end(), [&](const DatasetEntry& e) { return e.entry_id == id; });
        if (it == dataset.end()) {
            throw ValidationError(fmt::format("flagged entry '{}' is not in dataset version {}", id, state.k));
        }
        RevisionRecord rec{*it, {}, false};
        for (const auto& p : predictions) {
            if (p.entry_id == id && active_set.contains(p.model_id)) {
                rec.evidence.push_back(p);
            }
        }
        std::stable_sort(rec.evidence.begin(), rec.evidence.end(), [](const auto& a, const auto& b) {
            return std::tie(a.label_probability, a.model_id) < std::tie(b.label_probability, b.model_id);
        });
        out.push_back(std::move(rec));
    }
    return out;
}

void write_revisions(std::span<const RevisionRecord> records, const std::filesystem::path& path) {
    std::vector<Json> lines;
    for (const auto& r : records) {
        Json j = Json::object();
        j["schema"] = kRevisionSchema;
        j["entry"] = corpus::to_json(r.entry);
        Json ev = Json::array();
        for (const auto& p : r.evidence) {
            ev.push_back(to_json(p));
        }
        j["evidence"] = std::move(ev);
        if (r.drop) {
            j["drop"] = true;
        }
        lines.push_back(std::move(j));
    }
    write_jsonl(lines, path);
}

std::vector<RevisionRecord> read_revisions(const std::filesystem::path& path) {
    std::vector<std::size_t> line_numbers;
    const auto docs = read_jsonl(path, line_numbers);
    std::vector<RevisionRecord> out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto where = fmt::format("{}:{}", path.string(), line_numbers[i]);
        const Json& j = docs[i];
        require_schema(j, kRevisionSchema, where);
        RevisionRecord r{corpus::entry_from_json(require(j, "entry", where), where + ".entry"), {}, false};
        corpus::validate(r.entry);
        if (auto it = j.find("evidence"); it != j.end() && !it->is_null()) {
            if (!it->is_array()) field_error(where, "evidence", "expected array");
            std::size_t n = 0;
            for (const auto& p : *it) {
                r.evidence.push_back(prediction_from_json(p, fmt::format("{}.evidence[{}]", where, n++)));
            }
        }
        r.drop = detail::optional_bool(j, "drop", where).value_or(false);
        out.push_back(std::move(r));
    }
    return out;
}

ImportResult apply_revisions(GateState& state, std::span<const DatasetEntry> dataset,
                             std::span<const RevisionRecord> revisions, std::string next_ref) {
    validate(state);
    if (state.outcome != Outcome::Running || !state.awaiting_revision) {
        throw ValidationError("no revision was requested for this run");
    }
    const int next_version = state.k + 1;
    const std::set<std::string_view> flagged(state.revision_queue.begin(), state.revision_queue.end());

    ImportResult result;
    result.dataset.assign(dataset.begin(), dataset.end());
    std::set<std::string> seen;
    for (const auto& rev : revisions) {
        const auto& id = rev.entry.entry_id;
        corpus::validate(rev.entry);
        if (!seen.insert(id).second) {
            throw ValidationError(fmt::format("revision file lists entry '{}' twice", id));
        }
        if (!flagged.contains(id)) {
            log::warn("gate", "revised entry was not flagged; accepting it", {{"entry", id}});
        }
        auto it = std::find_if(result.dataset.begin(), result.dataset.end(),
                               [&](const DatasetEntry& e) { return e.entry_id == id; });
        if (rev.drop) {
            if (it == result.dataset.end()) {
                log::warn("gate", "drop requested for an entry that is not in the dataset", {{"entry", id}});
            } else {
                result.dataset.erase(it);
                result.dropped_ids.push_back(id);
            }
            continue;
        }
        if (it == result.dataset.end()) {
            result.dataset.push_back(rev.entry);
            result.added_ids.push_back(id);
            continue;
        }
        DatasetEntry incoming = rev.entry;
        incoming.dataset_version = it->dataset_version;
        if (!(incoming == *it)) {
            result.changed_ids.push_back(id);
        }
        *it = std::move(incoming);
    }
    for (auto& e : result.dataset) {
        e.dataset_version = next_version;
    }

    state.k = next_version;
    state.dataset_chain.push_back(std::move(next_ref));
    state.revision_queue.clear();
    state.awaiting_revision = false;
    for (auto& r : state.roster) {
        if (r.status == ModelStatus::FineTuned) {
            r.status = ModelStatus::Selected;
        }
    }
    validate(state);
    return result;
}

}  // namespace auditforge::gate
