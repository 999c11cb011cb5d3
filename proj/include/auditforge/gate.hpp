#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "auditforge/corpus.hpp"
#include "auditforge/evaluator.hpp"

namespace auditforge::gate {

inline constexpr std::string_view kPredictionSchema = "pred/1";
inline constexpr std::string_view kStateSchema = "gate/1";
inline constexpr std::string_view kRevisionSchema = "revision/1";

// ---- prediction logs -----------------------------------------------------------

struct PredictedLabel {
    std::string label_id;
    double probability = 0.0;

    bool operator==(const PredictedLabel&) const = default;
};

struct PredictionRecord {
    std::string model_id;
    std::string entry_id;
    double label_probability = 1.0;  // (0, 1]
    std::vector<PredictedLabel> predicted_labels;
    double rationale_presence = 0.0;  // [0, 1]
    // Unset until judged against the annotated entry.
    std::optional<bool> rationale_correct;
    std::string raw_report;

    bool operator==(const PredictionRecord&) const = default;
};

void validate(const PredictionRecord& record);

Json to_json(const PredictionRecord& record);
PredictionRecord prediction_from_json(const Json& j, const std::string& where);

// pred/1 JSONL, one record per line, no header.
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
void write_predictions(std::span<const PredictionRecord> records, const std::filesystem::path& path);

// Judges every unset rationale_correct against the entry it names. An
// entry_id missing from `dataset` is a ValidationError.
void resolve_rationale_correctness(std::vector<PredictionRecord>& records,
                                   std::span<const corpus::DatasetEntry> dataset,
                                   const evaluator::MatchOptions& options = {});

// ---- losses -------------------------------------------------------------------

// −(1/N) Σ ln p_i.
double label_loss(std::span<const PredictionRecord> records);

enum class Weighting { None, ByLabelCount, ByValidRationaleCount };

std::string_view to_string(Weighting w);
Weighting parse_weighting(std::string_view text);

// −(1/N) Σ w_i ln p_i with w_i = N / (C · N_{class(i)}), C distinct classes.
// `classes` is parallel to `records`.
double weighted_label_loss(std::span<const PredictionRecord> records, std::span<const std::string> classes);

// Class of each record under `scheme`: the entry's true label (from
// `true_labels`, keyed by entry id) or the rationale verdict.
std::vector<std::string> weighting_classes(std::span<const PredictionRecord> records, Weighting scheme,
                                           const std::map<std::string, std::string>& true_labels = {});

// First annotation's label id for vulnerable entries, "secure" otherwise.
std::map<std::string, std::string> true_labels(std::span<const corpus::DatasetEntry> dataset);

// Binary cross-entropy with g clamped to [1e-9, 1 − 1e-9]. Every record must
// carry a rationale verdict.
double rationale_loss(std::span<const PredictionRecord> records);

double combined_loss(double label_loss, double rationale_loss, double lambda) noexcept;

double assumed_label_loss(long n, long n_correct, double p);
double assumed_rationale_loss(long n, long n_correct, double g);

// ---- configuration and classification -------------------------------------------

struct GateConfig {
    double l_b = 1.12;
    double l_l = 0.84;
    double l_h = 1.74;
    double lambda = 0.7;
    double assumed_p = 0.7;
    double assumed_g = 0.8;
    int max_iterations = 10;
    // Revision queue size: revision_count when set, else
    // ceil(revision_fraction × dataset size).
    std::optional<std::size_t> revision_count;
    double revision_fraction = 0.1;

    bool operator==(const GateConfig&) const = default;
};

void validate(const GateConfig& config);
Json to_json(const GateConfig& config);
GateConfig gate_config_from_json(const Json& j, const std::string& where);

enum class Verdict { WellOptimized, Acceptable, Unsuitable };

std::string_view to_string(Verdict v);

// L ≤ L_l well-optimized, L ≤ L_h acceptable, unsuitable above.
Verdict classify_model(double loss, const GateConfig& config) noexcept;

struct Candidate {
    std::string model_id;
    double label_loss = 0.0;
};

// Ids with label_loss < L_b, in input order.
std::vector<std::string> initial_filter(std::span<const Candidate> candidates, double l_b);

struct LossReport {
    std::string model_id;
    int dataset_version = 0;
    long n = 0;
    long n_correct = 0;
    long n_incorrect = 0;
    double label_loss = 0.0;
    double rationale_loss = 0.0;
    double lambda = 0.0;
    double combined = 0.0;
    Weighting weighting = Weighting::None;

    bool operator==(const LossReport&) const = default;
};

Json to_json(const LossReport& report);
LossReport loss_report_from_json(const Json& j, const std::string& where);

// Exact losses over one model's records. A record counts as correct when its
// label_probability is at least 0.5.
LossReport exact_report(std::string model_id, int dataset_version, std::span<const PredictionRecord> records,
                        const GateConfig& config, Weighting weighting = Weighting::None,
                        const std::map<std::string, std::string>& true_labels = {});

// Closed-form losses from counts with config.assumed_p and config.assumed_g.
LossReport assumed_report(std::string model_id, int dataset_version, long n, long n_correct,
                          const GateConfig& config);

// ---- state machine --------------------------------------------------------------

enum class ModelStatus { Candidate, Selected, FineTuned, Removed };
enum class Outcome { Running, Finished, Exhausted };

std::string_view to_string(ModelStatus s);
std::string_view to_string(Outcome o);

struct RosterEntry {
    std::string model_id;
    ModelStatus status = ModelStatus::Candidate;
    std::optional<double> initial_label_loss;
    std::optional<LossReport> latest;

    bool operator==(const RosterEntry&) const = default;
};

struct GateState {
    int k = 0;
    std::vector<RosterEntry> roster;
    std::vector<std::string> dataset_chain;  // size k + 1
    std::vector<std::string> revision_queue;
    Outcome outcome = Outcome::Running;
    std::optional<std::string> d_train;
    GateConfig config;
    // Set by a revision request; cleared by apply_revisions.
    bool awaiting_revision = false;

    bool is_active(const RosterEntry& r) const noexcept { return r.status != ModelStatus::Removed; }
    std::vector<std::string> active_models() const;
    bool operator==(const GateState&) const = default;
};

void validate(const GateState& state);

// Candidates failing initial_filter start out removed.
GateState init_state(std::span<const Candidate> candidates, std::string dataset_ref, const GateConfig& config);

Json to_json(const GateState& state);
GateState gate_state_from_json(const Json& j, const std::string& where);
GateState load_state(const std::filesystem::path& path);
void save_state(const GateState& state, const std::filesystem::path& path);

struct Action {
    enum class Kind { Remove, RequestRevision, Finish, Exhaust };
    Kind kind = Kind::Remove;
    std::string model_id;  // empty for Exhaust
    double loss = 0.0;

    bool operator==(const Action&) const = default;
};

std::string_view to_string(Action::Kind k);

struct StepResult {
    GateState state;
    std::vector<Action> actions;
};

// One round over the active roster, in roster order. `predictions` feed the
// revision queue; `dataset_size` of 0 means the number of distinct entry ids
// in `predictions`.
StepResult gate_step(const GateState& state, std::span<const LossReport> reports,
                     std::span<const PredictionRecord> predictions = {}, std::size_t dataset_size = 0);

// ---- human revision round trip ----------------------------------------------------

struct RevisionRecord {
    corpus::DatasetEntry entry;
    std::vector<PredictionRecord> evidence;  // ascending label_probability
    bool drop = false;
};

// Flagged entries of D(k) with the active models' predictions on them.
std::vector<RevisionRecord> build_revision_export(const GateState& state, std::span<const corpus::DatasetEntry> dataset,
                                                  std::span<const PredictionRecord> predictions);

void write_revisions(std::span<const RevisionRecord> records, const std::filesystem::path& path);
std::vector<RevisionRecord> read_revisions(const std::filesystem::path& path);

struct ImportResult {
    std::vector<corpus::DatasetEntry> dataset;  // D(k+1)
    std::vector<std::string> changed_ids;
    std::vector<std::string> added_ids;
    std::vector<std::string> dropped_ids;
};

// Replaces entries by id, appends unknown ids (with a warning), honours drop
// flags, stamps dataset_version k+1, pushes `next_ref` onto the chain and
// returns fine-tuned models to the selected pool.
ImportResult apply_revisions(GateState& state, std::span<const corpus::DatasetEntry> dataset,
                             std::span<const RevisionRecord> revisions, std::string next_ref);

}  // namespace auditforge::gate
