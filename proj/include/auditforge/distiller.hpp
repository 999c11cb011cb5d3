#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "auditforge/corpus.hpp"
#include "auditforge/error.hpp"
#include "auditforge/gateway.hpp"

namespace auditforge::distiller {

struct ScenarioDescriptor {
    std::string scenario_id;
    std::string title;
    std::string description;

    bool operator==(const ScenarioDescriptor&) const = default;
};

// Ten application domains: lending, AMM, NFT marketplace, DAO, staking,
// auction, vesting, bridge, lottery, multisig.
const std::vector<ScenarioDescriptor>& default_catalog();

// JSONL of {scenario_id, title, description}; ids must be unique.
std::vector<ScenarioDescriptor> load_catalog(const std::filesystem::path& path);
void write_catalog(std::span<const ScenarioDescriptor> catalog, const std::filesystem::path& path);

struct ScenarioPolicy {
    enum class Kind { RoundRobin, SeededRandom };
    Kind kind = Kind::RoundRobin;
    std::uint64_t seed = 0;

    static ScenarioPolicy round_robin() { return {Kind::RoundRobin, 0}; }
    static ScenarioPolicy seeded_random(std::uint64_t seed) { return {Kind::SeededRandom, seed}; }
};

// "round-robin", "seeded-random" (seed 0) or "seeded-random:<seed>".
ScenarioPolicy parse_policy(std::string_view text);

// Stateful scenario picker. Round-robin cycles in catalog order; seeded-random
// draws from a mt19937_64 stream, so the sequence depends only on the seed.
class ScenarioSelector {
public:
    ScenarioSelector(std::vector<ScenarioDescriptor> catalog, ScenarioPolicy policy);

    const ScenarioDescriptor& next();

private:
    std::vector<ScenarioDescriptor> catalog_;
    ScenarioPolicy policy_;
    std::size_t cursor_ = 0;
    std::uint64_t state_ = 0;
};

struct ReportedLabel {
    std::string label_id;
    std::string label_name;
    std::string rationale;
    std::optional<corpus::LineSpan> span;
    std::optional<std::string> function;
};

struct AgentReport {
    std::vector<ReportedLabel> labels;
    std::optional<std::string> code;
    std::optional<std::string> notes;
};

class ReportParseError : public FormatError {
public:
    ReportParseError(const std::string& message, std::string raw);
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

// Strict JSON first, then the first balanced {...} object in the text.
AgentReport parse_agent_report(std::string_view raw);

struct Agents {
    std::shared_ptr<gateway::Backend> backend;
    std::string model_name;
    std::map<gateway::AgentRole, gateway::PromptTemplate> templates;
    std::map<gateway::AgentRole, gateway::Sampling> sampling;

    // Default templates and sampling for all three roles.
    static Agents with_defaults(std::shared_ptr<gateway::Backend> backend, std::string model_name);

    const gateway::PromptTemplate& template_for(gateway::AgentRole role) const;
};

struct Triplet {
    std::string label_id;
    std::string label_name;
    std::string rationale;
    ScenarioDescriptor scenario;
};

void validate(const Triplet& triplet);

gateway::CompletionRequest distillation_request(const Agents& agents, const corpus::ContractDocument& seed);
gateway::CompletionRequest developer_request(const Agents& agents, const Triplet& triplet);
gateway::CompletionRequest security_request(const Agents& agents, const corpus::DatasetEntry& vulnerable);

struct SeedAnalysis {
    ReportedLabel primary;
    std::vector<ReportedLabel> auxiliary;
    std::string raw_response;
};

SeedAnalysis analyze_seed(const Agents& agents, const corpus::ContractDocument& seed);

// Non-empty, balanced braces outside strings and comments, and a pragma line.
void check_contract_syntax(std::string_view code);

// Entry id defaults to "<scenario>-vuln" when empty. `auxiliary` labels are
// appended as extra annotations without spans.
corpus::DatasetEntry generate_vulnerable(const Agents& agents, const Triplet& triplet, std::string entry_id,
                                         std::span<const ReportedLabel> auxiliary = {});

corpus::DatasetEntry secure_variant(const Agents& agents, const corpus::DatasetEntry& vulnerable,
                                    std::string entry_id);

enum class Stage { Distillation, Developer, Security };
std::string_view to_string(Stage stage);

struct SeedFailure {
    std::string seed_id;
    Stage stage = Stage::Distillation;
    std::string error;
};

struct DistillOptions {
    int parallelism = 1;
};

struct DistillResult {
    std::vector<corpus::DatasetEntry> combined;
    std::vector<SeedFailure> failures;  // sorted by seed_id
};

// Seed "<id>" yields "<id>-vuln" and "<id>-secure". Scenarios are assigned in
// seed order before any agent call, so output does not depend on parallelism.
DistillResult distill(std::span<const corpus::DatasetEntry> seeds, const Agents& agents,
                      std::span<const ScenarioDescriptor> catalog, ScenarioPolicy policy,
                      const DistillOptions& options = {});

void write_failures(std::span<const SeedFailure> failures, const std::filesystem::path& path);

}  // namespace auditforge::distiller
