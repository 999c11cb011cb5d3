#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "auditforge/distiller.hpp"
#include "auditforge/gate.hpp"
#include "auditforge/gateway.hpp"
#include "auditforge/preprocess.hpp"

namespace auditforge::pipeline {

inline constexpr std::string_view kConfigSchema = "auditforge-config/1";
inline constexpr std::string_view kManifestSchema = "manifest/1";
inline constexpr std::string_view kApiKeyEnv = "AUDITFORGE_API_KEY";

struct BackendSettings {
    enum class Kind { Stub, Remote };
    Kind kind = Kind::Stub;
    std::filesystem::path fixtures;  // stub
    std::string endpoint;            // remote
    std::string model = "teacher";
    int max_retries = 3;
    int parallelism = 4;
    int timeout_seconds = 120;
    std::optional<std::filesystem::path> templates;
};

struct DistillSettings {
    std::filesystem::path seeds;
    corpus::CorpusFormat seeds_format = corpus::CorpusFormat::AnnotatedJson;
    std::optional<std::filesystem::path> catalog;  // built-in catalog when unset
    distiller::ScenarioPolicy policy;
};

struct PreprocessSettings {
    // Entries to preprocess; <out>/distilled.jsonl when unset.
    std::optional<std::filesystem::path> input;
    std::string instruction{preprocess::kDefaultInstruction};
    preprocess::CleaningConfig cleaning;
    std::size_t max_tokens = 4096;
    std::string tokenizer = "default-regex";
    double dedup_threshold = 0.9;
    std::string embedding = "hashed-ngram";
};

struct GateSettings {
    gate::GateConfig config;
    // <out>/gate_state.json when unset.
    std::optional<std::filesystem::path> state;
    std::string predictions;  // glob of pred/1 files
    std::vector<gate::Candidate> candidates;
    gate::Weighting weighting = gate::Weighting::None;
};

struct EvaluateSettings {
    std::filesystem::path corpus;
    std::string corpus_id;
    std::filesystem::path reports;
    bool strict_labels = false;
    evaluator::TableFormat format = evaluator::TableFormat::Csv;
};

struct ProjectConfig {
    std::filesystem::path out_dir = "out";
    BackendSettings backend;
    DistillSettings distill;
    PreprocessSettings preprocess;
    GateSettings gate;
    EvaluateSettings evaluate;
    // Never serialized; read from the environment.
    std::string api_key;

    std::filesystem::path state_path() const;
};

// YAML with `schema: auditforge-config/1`. Relative paths resolve against the
// file's directory. Every path the file names must exist.
ProjectConfig load_config(const std::filesystem::path& path);
ProjectConfig parse_config(std::string_view yaml_text, const std::filesystem::path& base_dir);

// Settings that feed a stage, as canonical JSON (no secrets).
Json describe(const ProjectConfig& config);

enum class Stage { Distill, Preprocess, GateStep, Evaluate };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);
// Comma-separated list; "all" for every stage.
std::set<Stage> parse_stages(std::string_view text);

std::shared_ptr<gateway::Backend> make_backend(const ProjectConfig& config);

class StageError : public Error {
public:
    StageError(Stage stage, const std::string& cause);
    Stage stage() const noexcept { return stage_; }

private:
    Stage stage_;
};

struct StageReport {
    Stage stage = Stage::Distill;
    bool skipped = false;  // manifest hashes unchanged
    std::vector<std::filesystem::path> outputs;
};

struct RunOptions {
    // Replaces make_backend(config) when set.
    std::shared_ptr<gateway::Backend> backend;
};

// Runs the requested stages in fixed order, recording input and output hashes
// in <out>/manifest.json. A stage whose inputs, settings and outputs are all
// unchanged since its last success is skipped. Throws StageError on failure;
// artifacts of completed stages are kept.
std::vector<StageReport> run_pipeline(const ProjectConfig& config, const std::set<Stage>& stages,
                                      const RunOptions& options = {});

// Artifact names under the output directory.
namespace artifacts {
inline constexpr std::string_view kDistilled = "distilled.jsonl";
inline constexpr std::string_view kDistillFailures = "distill_failures.jsonl";
inline constexpr std::string_view kInstructions = "instructions.jsonl";
inline constexpr std::string_view kDatasetV0 = "dataset_v0.jsonl";
inline constexpr std::string_view kRemovalReport = "removal_report.json";
inline constexpr std::string_view kGateState = "gate_state.json";
inline constexpr std::string_view kGateActions = "gate_actions.jsonl";
inline constexpr std::string_view kScores = "scores";
inline constexpr std::string_view kCategoryScores = "category_scores";
inline constexpr std::string_view kManifest = "manifest.json";
}  // namespace artifacts

// ---- single-stage entry points (also used by the CLI) ------------------------------

distiller::DistillResult run_distill(const ProjectConfig& config, std::shared_ptr<gateway::Backend> backend);

struct PreprocessOutput {
    std::vector<corpus::InstructionRecord> instructions;
    std::vector<corpus::DatasetEntry> dataset;  // D(0)
    Json removal_report;
};

PreprocessOutput run_preprocess(std::span<const corpus::DatasetEntry> entries, const PreprocessSettings& settings);

struct GateStepOutput {
    gate::GateState state;
    std::vector<gate::Action> actions;
    std::vector<gate::LossReport> reports;
    std::optional<std::filesystem::path> revision_export;
};

// Loads (or initializes from candidates) the state, scores the predictions
// against the current dataset version, steps once and persists the state.
GateStepOutput run_gate_step(const ProjectConfig& config);

std::vector<evaluator::ScoreCard> run_evaluate(const ProjectConfig& config);

// Per-model loss reports over pred/1 records, judged against `dataset`.
std::vector<gate::LossReport> loss_reports(std::vector<gate::PredictionRecord> predictions,
                                           std::span<const corpus::DatasetEntry> dataset, int dataset_version,
                                           const gate::GateConfig& config, gate::Weighting weighting);

std::vector<gate::PredictionRecord> read_prediction_glob(const std::string& pattern);

}  // namespace auditforge::pipeline
