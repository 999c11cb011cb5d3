#include "auditforge/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "auditforge/error.hpp"
#include "auditforge/log.hpp"

namespace auditforge::pipeline {

namespace fs = std::filesystem;
using corpus::DatasetEntry;

namespace {

void check_keys(const YAML::Node& node, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!node.IsMap()) {
        throw ConfigError(fmt::format("{}: expected a mapping", where));
    }
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
        }
    }
}

template <typename T>
void read_scalar(const YAML::Node& node, const char* key, T& out, const std::string& where) {
    if (const auto v = node[key]; v && !v.IsNull()) {
        try {
            out = v.as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigError(fmt::format("{}.{}: invalid value '{}'", where, key, v.Scalar()));
        }
    }
}

fs::path resolve(const fs::path& base, const std::string& value) {
    fs::path p(value);
    return p.is_absolute() ? p : (base / p).lexically_normal();
}

std::optional<fs::path> read_path(const YAML::Node& node, const char* key, const fs::path& base,
                                  const std::string& where) {
    std::string s;
    read_scalar(node, key, s, where);
    if (s.empty()) return std::nullopt;
    return resolve(base, s);
}

void require_exists(const std::optional<fs::path>& p, std::string_view what) {
    if (p && !fs::exists(*p)) {
        throw ConfigError(fmt::format("{} path '{}' does not exist", what, p->string()));
    }
}

}  // namespace

fs::path ProjectConfig::state_path() const { return gate.state.value_or(out_dir / artifacts::kGateState); }

ProjectConfig parse_config(std::string_view yaml_text, const fs::path& base_dir) {
    YAML::Node root;
    try {
        root = YAML::Load(std::string(yaml_text));
    } catch (const YAML::Exception& e) {
        throw ConfigError(fmt::format("config: {}", e.what()));
    }
    if (!root.IsMap()) {
        throw ConfigError("config: expected a mapping at the top level");
    }
    check_keys(root, {"schema", "out_dir", "backend", "distill", "preprocess", "gate", "evaluate"}, "config");
    std::string schema;
    read_scalar(root, "schema", schema, "config");
    if (schema != kConfigSchema) {
        throw ConfigError(fmt::format("config: schema '{}' where '{}' was expected", schema, kConfigSchema));
    }

    ProjectConfig c;
    c.out_dir = read_path(root, "out_dir", base_dir, "config").value_or(resolve(base_dir, "out"));

    if (const auto b = root["backend"]) {
        const std::string w = "backend";
        check_keys(b, {"kind", "fixtures", "endpoint", "model", "max_retries", "parallelism", "timeout_seconds",
                       "templates"},
                   w);
        std::string kind = "stub";
        read_scalar(b, "kind", kind, w);
        if (kind == "stub") {
            c.backend.kind = BackendSettings::Kind::Stub;
        } else if (kind == "remote") {
            c.backend.kind = BackendSettings::Kind::Remote;
        } else {
            throw ConfigError(fmt::format("backend.kind: '{}' is neither stub nor remote", kind));
        }
        c.backend.fixtures = read_path(b, "fixtures", base_dir, w).value_or(fs::path());
        read_scalar(b, "endpoint", c.backend.endpoint, w);
        read_scalar(b, "model", c.backend.model, w);
        read_scalar(b, "max_retries", c.backend.max_retries, w);
        read_scalar(b, "parallelism", c.backend.parallelism, w);
        read_scalar(b, "timeout_seconds", c.backend.timeout_seconds, w);
        c.backend.templates = read_path(b, "templates", base_dir, w);
        if (!c.backend.fixtures.empty()) require_exists(c.backend.fixtures, "backend.fixtures");
        require_exists(c.backend.templates, "backend.templates");
    }

    if (const auto d = root["distill"]) {
        const std::string w = "distill";
        check_keys(d, {"seeds", "seeds_format", "catalog", "policy"}, w);
        c.distill.seeds = read_path(d, "seeds", base_dir, w).value_or(fs::path());
        std::string format = "annotated-json";
        read_scalar(d, "seeds_format", format, w);
        c.distill.seeds_format = corpus::parse_corpus_format(format);
        c.distill.catalog = read_path(d, "catalog", base_dir, w);
        std::string policy = "round-robin";
        read_scalar(d, "policy", policy, w);
        c.distill.policy = distiller::parse_policy(policy);
        if (!c.distill.seeds.empty()) require_exists(c.distill.seeds, "distill.seeds");
        require_exists(c.distill.catalog, "distill.catalog");
    }

    if (const auto p = root["preprocess"]) {
        const std::string w = "preprocess";
        check_keys(p, {"input", "instruction", "strip_comments", "collapse_blank_lines", "normalize_line_endings",
                       "max_tokens", "tokenizer", "dedup_threshold", "embedding"},
                   w);
        c.preprocess.input = read_path(p, "input", base_dir, w);
        read_scalar(p, "instruction", c.preprocess.instruction, w);
        read_scalar(p, "strip_comments", c.preprocess.cleaning.strip_comments, w);
        read_scalar(p, "collapse_blank_lines", c.preprocess.cleaning.collapse_blank_lines, w);
        read_scalar(p, "normalize_line_endings", c.preprocess.cleaning.normalize_line_endings, w);
        read_scalar(p, "max_tokens", c.preprocess.max_tokens, w);
        read_scalar(p, "tokenizer", c.preprocess.tokenizer, w);
        read_scalar(p, "dedup_threshold", c.preprocess.dedup_threshold, w);
        read_scalar(p, "embedding", c.preprocess.embedding, w);
        require_exists(c.preprocess.input, "preprocess.input");
    }

    if (const auto g = root["gate"]) {
        const std::string w = "gate";
        check_keys(g, {"L_b", "L_l", "L_h", "lambda", "assumed_p", "assumed_g", "max_iterations", "revision_count",
                       "revision_fraction", "state", "predictions", "candidates", "weighting"},
                   w);
        Json thresholds = Json::object();
        for (const char* key : {"L_b", "L_l", "L_h", "lambda", "assumed_p", "assumed_g", "revision_fraction"}) {
            double v = 0.0;
            if (g[key]) {
                read_scalar(g, key, v, w);
                thresholds[key] = v;
            }
        }
        for (const char* key : {"max_iterations", "revision_count"}) {
            long long v = 0;
            if (g[key]) {
                read_scalar(g, key, v, w);
                thresholds[key] = v;
            }
        }
        c.gate.config = gate::gate_config_from_json(thresholds, w);
        c.gate.state = read_path(g, "state", base_dir, w);
        std::string predictions;
        read_scalar(g, "predictions", predictions, w);
        if (!predictions.empty()) {
            c.gate.predictions = resolve(base_dir, predictions).string();
        }
        if (const auto cands = g["candidates"]) {
            if (!cands.IsSequence()) throw ConfigError("gate.candidates: expected a list");
            for (std::size_t i = 0; i < cands.size(); ++i) {
                const auto cw = fmt::format("gate.candidates[{}]", i);
                check_keys(cands[i], {"model_id", "label_loss"}, cw);
                gate::Candidate cand;
                read_scalar(cands[i], "model_id", cand.model_id, cw);
                read_scalar(cands[i], "label_loss", cand.label_loss, cw);
                if (cand.model_id.empty()) throw ConfigError(cw + ": model_id is required");
                c.gate.candidates.push_back(std::move(cand));
            }
        }
        std::string weighting = "none";
        read_scalar(g, "weighting", weighting, w);
        c.gate.weighting = gate::parse_weighting(weighting);
    }

    if (const auto e = root["evaluate"]) {
        const std::string w = "evaluate";
        check_keys(e, {"corpus", "corpus_id", "reports", "strict_labels", "format"}, w);
        c.evaluate.corpus = read_path(e, "corpus", base_dir, w).value_or(fs::path());
        read_scalar(e, "corpus_id", c.evaluate.corpus_id, w);
        c.evaluate.reports = read_path(e, "reports", base_dir, w).value_or(fs::path());
        read_scalar(e, "strict_labels", c.evaluate.strict_labels, w);
        std::string format = "csv";
        read_scalar(e, "format", format, w);
        c.evaluate.format = evaluator::parse_table_format(format);
        if (!c.evaluate.corpus.empty()) require_exists(c.evaluate.corpus, "evaluate.corpus");
        if (!c.evaluate.reports.empty()) require_exists(c.evaluate.reports, "evaluate.reports");
        if (c.evaluate.corpus_id.empty() && !c.evaluate.corpus.empty()) {
            c.evaluate.corpus_id = c.evaluate.corpus.stem().string();
        }
    }

    if (const char* key = std::getenv(kApiKeyEnv.data())) {
        c.api_key = key;
    }
    return c;
}

ProjectConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) {
        throw ConfigError(fmt::format("config file '{}' does not exist", path.string()));
    }
    const auto base = fs::absolute(path).parent_path();
    try {
        return parse_config(read_text_file(path), base);
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

Json describe(const ProjectConfig& c) {
    Json j = Json::object();
    j["out_dir"] = c.out_dir.string();
    j["backend"] = {{"kind", c.backend.kind == BackendSettings::Kind::Stub ? "stub" : "remote"},
                    {"fixtures", c.backend.fixtures.string()},
                    {"endpoint", c.backend.endpoint},
                    {"model", c.backend.model},
                    {"max_retries", c.backend.max_retries},
                    {"parallelism", c.backend.parallelism},
                    {"timeout_seconds", c.backend.timeout_seconds},
                    {"templates", c.backend.templates ? c.backend.templates->string() : ""}};
    j["distill"] = {{"seeds", c.distill.seeds.string()},
                    {"seeds_format",
                     c.distill.seeds_format == corpus::CorpusFormat::AnnotatedJson ? "annotated-json" : "entries-jsonl"},
                    {"catalog", c.distill.catalog ? c.distill.catalog->string() : ""},
                    {"policy", c.distill.policy.kind == distiller::ScenarioPolicy::Kind::RoundRobin
                                   ? std::string("round-robin")
                                   : fmt::format("seeded-random:{}", c.distill.policy.seed)}};
    j["preprocess"] = {{"input", c.preprocess.input ? c.preprocess.input->string() : ""},
                       {"instruction", c.preprocess.instruction},
                       {"strip_comments", c.preprocess.cleaning.strip_comments},
                       {"collapse_blank_lines", c.preprocess.cleaning.collapse_blank_lines},
                       {"normalize_line_endings", c.preprocess.cleaning.normalize_line_endings},
                       {"max_tokens", c.preprocess.max_tokens},
                       {"tokenizer", c.preprocess.tokenizer},
                       {"dedup_threshold", c.preprocess.dedup_threshold},
                       {"embedding", c.preprocess.embedding}};
    Json candidates = Json::array();
    for (const auto& cand : c.gate.candidates) {
        candidates.push_back({{"model_id", cand.model_id}, {"label_loss", cand.label_loss}});
    }
    j["gate"] = {{"config", gate::to_json(c.gate.config)},
                 {"state", c.state_path().string()},
                 {"predictions", c.gate.predictions},
                 {"candidates", candidates},
                 {"weighting", gate::to_string(c.gate.weighting)}};
    j["evaluate"] = {{"corpus", c.evaluate.corpus.string()},
                     {"corpus_id", c.evaluate.corpus_id},
                     {"reports", c.evaluate.reports.string()},
                     {"strict_labels", c.evaluate.strict_labels},
                     {"format", c.evaluate.format == evaluator::TableFormat::Csv ? "csv" : "markdown"}};
    return j;
}

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::Distill: return "distill";
        case Stage::Preprocess: return "preprocess";
        case Stage::GateStep: return "gate-step";
        case Stage::Evaluate: return "evaluate";
    }
    return "distill";
}

Stage parse_stage(std::string_view text) {
    for (auto s : {Stage::Distill, Stage::Preprocess, Stage::GateStep, Stage::Evaluate}) {
        if (to_string(s) == text) return s;
    }
    throw ConfigError(fmt::format("unknown stage '{}' (expected distill, preprocess, gate-step or evaluate)", text));
}

std::set<Stage> parse_stages(std::string_view text) {
    if (text == "all") {
        return {Stage::Distill, Stage::Preprocess, Stage::GateStep, Stage::Evaluate};
    }
    std::set<Stage> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto comma = text.find(',', pos);
        if (comma == std::string_view::npos) comma = text.size();
        const auto item = text.substr(pos, comma - pos);
        if (!item.empty()) out.insert(parse_stage(item));
        pos = comma + 1;
    }
    if (out.empty()) throw ConfigError("no stages requested");
    return out;
}

std::shared_ptr<gateway::Backend> make_backend(const ProjectConfig& config) {
    const auto& b = config.backend;
    if (b.kind == BackendSettings::Kind::Stub) {
        if (b.fixtures.empty()) {
            throw ConfigError("stub backend needs backend.fixtures");
        }
        return std::make_shared<gateway::StubBackend>(gateway::StubBackend::from_file(b.fixtures));
    }
    if (b.endpoint.empty()) {
        throw ConfigError("remote backend needs backend.endpoint");
    }
    if (config.api_key.empty()) {
        log::warn("gateway", fmt::format("{} is not set; requests carry no credential", kApiKeyEnv));
    }
    gateway::RemoteConfig rc;
    rc.endpoint_url = b.endpoint;
    rc.api_key = config.api_key;
    rc.max_retries = b.max_retries;
    rc.parallelism = b.parallelism;
    rc.timeout = std::chrono::seconds(b.timeout_seconds);
    return std::make_shared<gateway::RemoteBackend>(std::move(rc));
}

StageError::StageError(Stage stage, const std::string& cause)
    : Error(fmt::format("stage {} failed: {}", to_string(stage), cause)), stage_(stage) {}

// ---- stages -------------------------------------------------------------------------

distiller::DistillResult run_distill(const ProjectConfig& config, std::shared_ptr<gateway::Backend> backend) {
    if (config.distill.seeds.empty()) {
        throw ConfigError("distill.seeds is not set");
    }
    corpus::LoadOptions load;
    const auto seeds = corpus::load_annotated_corpus(config.distill.seeds, config.distill.seeds_format, load);
    auto agents = distiller::Agents::with_defaults(std::move(backend), config.backend.model);
    if (config.backend.templates) {
        agents.templates = gateway::load_templates(*config.backend.templates);
    }
    const auto catalog =
        config.distill.catalog ? distiller::load_catalog(*config.distill.catalog) : distiller::default_catalog();
    return distiller::distill(seeds, agents, catalog, config.distill.policy,
                              {.parallelism = config.backend.parallelism});
}

PreprocessOutput run_preprocess(std::span<const DatasetEntry> entries, const PreprocessSettings& s) {
    const auto tokenizer = preprocess::Tokenizer::named(s.tokenizer);
    const auto embedder = preprocess::make_embedder(s.embedding);

    const auto deduped = preprocess::dedup(entries, s.dedup_threshold, *embedder);
    std::vector<corpus::InstructionRecord> records;
    records.reserve(deduped.kept.size());
    for (const auto& e : deduped.kept) {
        records.push_back(preprocess::to_instruction(e, s.instruction, s.cleaning));
    }
    const auto filtered = preprocess::filter_by_length(records, s.max_tokens, tokenizer);

    PreprocessOutput out;
    out.instructions = filtered.kept;
    for (std::size_t i : filtered.kept_index) {
        DatasetEntry e = deduped.kept[i];
        e.dataset_version = 0;
        out.dataset.push_back(std::move(e));
    }

    Json dedup_removed = Json::array();
    for (const auto& d : deduped.log) {
        if (!d.kept) {
            dedup_removed.push_back({{"entry_id", d.entry_id},
                                     {"nearest_kept_id", d.nearest_kept_id.value_or("")},
                                     {"similarity", d.similarity}});
        }
    }
    Json length_removed = Json::array();
    for (std::size_t n = 0; n < filtered.removed.size(); ++n) {
        const auto& e = deduped.kept[filtered.removed_index[n]];
        length_removed.push_back(
            {{"entry_id", e.entry_id}, {"tokens", preprocess::record_tokens(filtered.removed[n], tokenizer)}});
    }
    out.removal_report = {{"input_entries", entries.size()},
                          {"dedup_threshold", s.dedup_threshold},
                          {"embedding", embedder->name()},
                          {"tokenizer", tokenizer.name()},
                          {"max_tokens", s.max_tokens},
                          {"dedup_removed", std::move(dedup_removed)},
                          {"length_removed", std::move(length_removed)},
                          {"kept", out.dataset.size()}};
    return out;
}

std::vector<gate::PredictionRecord> read_prediction_glob(const std::string& pattern) {
    if (pattern.empty()) {
        throw ConfigError("no prediction files configured (gate.predictions)");
    }
    const auto files = expand_glob(pattern);
    if (files.empty()) {
        throw IoError(fmt::format("no prediction files match '{}'", pattern));
    }
    std::vector<gate::PredictionRecord> out;
    for (const auto& f : files) {
        auto part = gate::read_predictions(f);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

std::vector<gate::LossReport> loss_reports(std::vector<gate::PredictionRecord> predictions,
                                           std::span<const DatasetEntry> dataset, int dataset_version,
                                           const gate::GateConfig& config, gate::Weighting weighting) {
    std::set<std::string_view> ids;
    for (const auto& e : dataset) ids.insert(e.entry_id);
    for (const auto& p : predictions) {
        if (!ids.contains(p.entry_id)) {
            throw ValidationError(fmt::format("prediction {}/{}: entry not in dataset version {}", p.model_id,
                                              p.entry_id, dataset_version));
        }
    }
    gate::resolve_rationale_correctness(predictions, dataset);
    const auto labels = gate::true_labels(dataset);
    std::map<std::string, std::vector<gate::PredictionRecord>> by_model;
    for (auto& p : predictions) {
        by_model[p.model_id].push_back(std::move(p));
    }
    std::vector<gate::LossReport> out;
    for (const auto& [model, records] : by_model) {
        out.push_back(gate::exact_report(model, dataset_version, records, config, weighting, labels));
    }
    return out;
}

namespace {

std::vector<DatasetEntry> read_dataset(const fs::path& path) {
    return corpus::load_annotated_corpus(path, corpus::CorpusFormat::EntriesJsonl);
}

}  // namespace

GateStepOutput run_gate_step(const ProjectConfig& config) {
    const auto state_path = config.state_path();
    gate::GateState state;
    if (fs::exists(state_path)) {
        state = gate::load_state(state_path);
    } else {
        if (config.gate.candidates.empty()) {
            throw ConfigError(fmt::format("no gate state at '{}' and no gate.candidates to start one",
                                          state_path.string()));
        }
        state = gate::init_state(config.gate.candidates, (config.out_dir / artifacts::kDatasetV0).string(),
                                 config.gate.config);
        log::info("gate", "initialized run state",
                  {{"selected", state.active_models().size()}, {"candidates", config.gate.candidates.size()}});
    }
    if (state.outcome != gate::Outcome::Running) {
        throw ValidationError(fmt::format("gate run is already {}", gate::to_string(state.outcome)));
    }
    const auto dataset = read_dataset(state.dataset_chain.back());

    const auto active = state.active_models();
    const std::set<std::string_view> active_set(active.begin(), active.end());
    std::vector<gate::PredictionRecord> predictions;
    for (auto& p : read_prediction_glob(config.gate.predictions)) {
        if (active_set.contains(p.model_id)) {
            predictions.push_back(std::move(p));
        } else {
            log::warn("gate", "ignoring prediction from an inactive model", {{"model", p.model_id}});
        }
    }

    GateStepOutput out;
    out.reports = loss_reports(predictions, dataset, state.k, state.config, config.gate.weighting);
    resolve_rationale_correctness(predictions, dataset);
    auto step = gate::gate_step(state, out.reports, predictions, dataset.size());
    out.state = std::move(step.state);
    out.actions = std::move(step.actions);

    fs::create_directories(state_path.parent_path().empty() ? fs::path(".") : state_path.parent_path());
    gate::save_state(out.state, state_path);

    fs::create_directories(config.out_dir);
    const auto actions_path = config.out_dir / artifacts::kGateActions;
    std::string log_text = fs::exists(actions_path) ? read_text_file(actions_path) : std::string();
    for (const auto& a : out.actions) {
        Json j = {{"k", state.k}, {"action", gate::to_string(a.kind)}, {"model_id", a.model_id}, {"loss", a.loss}};
        log_text += j.dump();
        log_text += '\n';
        log::info("gate", "action", j);
    }
    atomic_write_file(actions_path, log_text);

    if (out.state.awaiting_revision && !out.state.revision_queue.empty()) {
        const auto path = config.out_dir / fmt::format("revisions_k{}.jsonl", out.state.k);
        gate::write_revisions(gate::build_revision_export(out.state, dataset, predictions), path);
        out.revision_export = path;
    }
    return out;
}

std::vector<evaluator::ScoreCard> run_evaluate(const ProjectConfig& config) {
    const auto& e = config.evaluate;
    if (e.corpus.empty() || e.reports.empty()) {
        throw ConfigError("evaluate needs evaluate.corpus and evaluate.reports");
    }
    const auto format = e.corpus.extension() == ".json" ? corpus::CorpusFormat::AnnotatedJson
                                                        : corpus::CorpusFormat::EntriesJsonl;
    const auto entries = corpus::load_annotated_corpus(e.corpus, format);
    evaluator::MatchOptions options;
    options.strict_labels = e.strict_labels;
    const auto corpus_id = e.corpus_id.empty() ? e.corpus.stem().string() : e.corpus_id;
    return evaluator::evaluate_directory(corpus_id, entries, e.reports, options);
}

// ---- orchestration ---------------------------------------------------------------------

namespace {

using HashMap = std::map<std::string, std::string>;

HashMap hash_files(const std::vector<fs::path>& files) {
    HashMap out;
    for (const auto& f : files) {
        out[f.string()] = fs::exists(f) ? sha256_file_hex(f) : std::string("missing");
    }
    return out;
}

Json to_json(const HashMap& m) {
    Json j = Json::object();
    for (const auto& [k, v] : m) j[k] = v;
    return j;
}

class Manifest {
public:
    explicit Manifest(fs::path path) : path_(std::move(path)) {
        if (fs::exists(path_)) {
            try {
                doc_ = Json::parse(read_text_file(path_));
            } catch (const Json::parse_error&) {
                log::warn("pipeline", "manifest unreadable; starting afresh", {{"path", path_.string()}});
            }
        }
        if (!doc_.is_object() || doc_.value("schema", "") != kManifestSchema) {
            doc_ = {{"schema", kManifestSchema}, {"stages", Json::object()}};
        }
    }

    bool up_to_date(Stage stage, const std::string& settings_hash, const HashMap& inputs) const {
        const auto& stages = doc_["stages"];
        auto it = stages.find(std::string(to_string(stage)));
        if (it == stages.end()) return false;
        if (it->value("settings", "") != settings_hash || (*it)["inputs"] != to_json(inputs)) return false;
        for (const auto& [path, hash] : (*it)["outputs"].items()) {
            if (!fs::exists(path) || sha256_file_hex(path) != hash.get<std::string>()) return false;
        }
        return true;
    }

    void record(Stage stage, const std::string& settings_hash, const HashMap& inputs, const HashMap& outputs) {
        doc_["stages"][std::string(to_string(stage))] = {
            {"settings", settings_hash}, {"inputs", to_json(inputs)}, {"outputs", to_json(outputs)}};
        atomic_write_file(path_, doc_.dump(2) + "\n");
    }

private:
    fs::path path_;
    Json doc_;
};

std::vector<fs::path> report_files(const fs::path& dir) {
    std::vector<fs::path> out;
    if (fs::is_directory(dir)) {
        for (const auto& de : fs::directory_iterator(dir)) {
            if (de.is_regular_file()) out.push_back(de.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::vector<StageReport> run_pipeline(const ProjectConfig& config, const std::set<Stage>& stages,
                                      const RunOptions& options) {
    fs::create_directories(config.out_dir);
    Manifest manifest(config.out_dir / artifacts::kManifest);
    const Json settings = describe(config);
    const fs::path out = config.out_dir;
    std::vector<StageReport> reports;

    for (Stage stage : {Stage::Distill, Stage::Preprocess, Stage::GateStep, Stage::Evaluate}) {
        if (!stages.contains(stage)) continue;
        StageReport report{stage, false, {}};
        try {
            std::vector<fs::path> inputs;
            std::string settings_hash;
            switch (stage) {
                case Stage::Distill:
                    inputs = {config.distill.seeds};
                    if (config.distill.catalog) inputs.push_back(*config.distill.catalog);
                    if (config.backend.templates) inputs.push_back(*config.backend.templates);
                    if (!config.backend.fixtures.empty()) inputs.push_back(config.backend.fixtures);
                    settings_hash = sha256_hex(settings["distill"].dump() + settings["backend"].dump());
                    report.outputs = {out / artifacts::kDistilled, out / artifacts::kDistillFailures};
                    break;
                case Stage::Preprocess:
                    inputs = {config.preprocess.input.value_or(out / artifacts::kDistilled)};
                    settings_hash = sha256_hex(settings["preprocess"].dump());
                    report.outputs = {out / artifacts::kInstructions, out / artifacts::kDatasetV0,
                                      out / artifacts::kRemovalReport};
                    break;
                case Stage::GateStep: {
                    for (const auto& f : expand_glob(config.gate.predictions)) inputs.push_back(f);
                    if (fs::exists(config.state_path())) {
                        inputs.emplace_back(gate::load_state(config.state_path()).dataset_chain.back());
                    } else {
                        inputs.push_back(out / artifacts::kDatasetV0);
                    }
                    settings_hash = sha256_hex(settings["gate"].dump());
                    report.outputs = {config.state_path()};
                    break;
                }
                case Stage::Evaluate: {
                    inputs = {config.evaluate.corpus};
                    for (auto& f : report_files(config.evaluate.reports)) inputs.push_back(std::move(f));
                    settings_hash = sha256_hex(settings["evaluate"].dump());
                    const auto ext = config.evaluate.format == evaluator::TableFormat::Csv ? ".csv" : ".md";
                    report.outputs = {out / (std::string(artifacts::kScores) + ext),
                                      out / (std::string(artifacts::kCategoryScores) + ext)};
                    break;
                }
            }
            const HashMap input_hashes = hash_files(inputs);
            if (manifest.up_to_date(stage, settings_hash, input_hashes)) {
                report.skipped = true;
                log::info("pipeline", "stage up to date; skipping", {{"stage", to_string(stage)}});
                reports.push_back(std::move(report));
                continue;
            }
            log::info("pipeline", "stage started", {{"stage", to_string(stage)}, {"inputs", to_json(input_hashes)}});

            switch (stage) {
                case Stage::Distill: {
                    auto backend = options.backend ? options.backend : make_backend(config);
                    const auto result = run_distill(config, backend);
                    if (result.combined.empty()) {
                        throw ValidationError(fmt::format("every seed failed ({} failures)", result.failures.size()));
                    }
                    corpus::write_entries(result.combined, report.outputs[0]);
                    distiller::write_failures(result.failures, report.outputs[1]);
                    break;
                }
                case Stage::Preprocess: {
                    const auto entries = read_dataset(inputs.front());
                    const auto result = run_preprocess(entries, config.preprocess);
                    corpus::write_instructions(result.instructions, report.outputs[0]);
                    corpus::write_entries(result.dataset, report.outputs[1]);
                    atomic_write_file(report.outputs[2], result.removal_report.dump(2) + "\n");
                    break;
                }
                case Stage::GateStep: {
                    const auto result = run_gate_step(config);
                    report.outputs.push_back(out / artifacts::kGateActions);
                    if (result.revision_export) report.outputs.push_back(*result.revision_export);
                    break;
                }
                case Stage::Evaluate: {
                    const auto cards = run_evaluate(config);
                    atomic_write_file(report.outputs[0], evaluator::emit_comparison(cards, config.evaluate.format));
                    atomic_write_file(report.outputs[1],
                                      evaluator::emit_category_breakdown(cards, config.evaluate.format));
                    break;
                }
            }
            const HashMap output_hashes = hash_files(report.outputs);
            manifest.record(stage, settings_hash, input_hashes, output_hashes);
            log::info("pipeline", "stage finished",
                      {{"stage", to_string(stage)}, {"outputs", to_json(output_hashes)}});
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            log::write(log::Level::Error, "pipeline", "stage failed", {{"stage", to_string(stage)}, {"error", e.what()}});
            throw StageError(stage, e.what());
        }
        reports.push_back(std::move(report));
    }
    return reports;
}

}  // namespace auditforge::pipeline
