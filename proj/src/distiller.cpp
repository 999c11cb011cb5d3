#include "auditforge/distiller.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "auditforge/json_fields.hpp"
#include "auditforge/log.hpp"

namespace auditforge::distiller {

namespace fs = std::filesystem;
using corpus::DatasetEntry;
using gateway::AgentRole;

const std::vector<ScenarioDescriptor>& default_catalog() {
    static const std::vector<ScenarioDescriptor> kCatalog = {
        {"defi-lending", "DeFi lending pool",
         "A lending protocol where users deposit collateral, borrow other assets against it, accrue interest per "
         "block and can be liquidated when their health factor drops below one."},
        {"amm-dex", "AMM decentralized exchange",
         "A constant-product automated market maker with liquidity provider shares, swap fees and a price oracle "
         "derived from pool reserves."},
        {"nft-marketplace", "NFT marketplace",
         "A marketplace for ERC-721 tokens supporting fixed-price listings, offers, royalties paid to creators and "
         "withdrawal of sale proceeds."},
        {"dao-governance", "DAO governance",
         "A token-weighted governance module where members create proposals, vote during a voting window and "
         "execute approved proposals through a timelock."},
        {"staking", "Staking rewards",
         "A staking contract that locks ERC-20 tokens, distributes rewards proportionally over time and allows "
         "early exit with a penalty."},
        {"auction", "On-chain auction",
         "An English auction with bidding deadlines, refunds for outbid participants and settlement that transfers "
         "the item and the winning bid."},
        {"token-vesting", "Token vesting",
         "A vesting wallet releasing tokens to beneficiaries on a cliff-plus-linear schedule, with revocation by "
         "the owner for unvested amounts."},
        {"cross-chain-bridge", "Cross-chain bridge",
         "A bridge that locks tokens on one chain and releases them on another after validators sign a message, "
         "tracking processed nonces."},
        {"lottery", "Lottery",
         "A lottery selling tickets for Ether, drawing a winner after a deadline and paying out the pot minus a "
         "house fee."},
        {"multisig-wallet", "Multisig wallet",
         "A wallet controlled by several owners that requires a confirmation threshold before executing arbitrary "
         "transactions."},
    };
    return kCatalog;
}

std::vector<ScenarioDescriptor> load_catalog(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot read scenario catalog '{}'", path.string()));
    }
    std::vector<ScenarioDescriptor> out;
    std::set<std::string, std::less<>> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = fmt::format("{}:{}", path.string(), lineno);
        Json j = Json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw FormatError(fmt::format("{}: malformed JSON", where));
        }
        ScenarioDescriptor s{detail::require_string(j, "scenario_id", where), detail::require_string(j, "title", where),
                             detail::require_string(j, "description", where)};
        if (s.scenario_id.empty() || s.description.empty()) {
            throw FormatError(fmt::format("{}: scenario_id and description must be non-empty", where));
        }
        if (!ids.insert(s.scenario_id).second) {
            throw FormatError(fmt::format("{}: duplicate scenario_id '{}'", where, s.scenario_id));
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_catalog(std::span<const ScenarioDescriptor> catalog, const fs::path& path) {
    std::string content;
    for (const auto& s : catalog) {
        Json j = Json::object();
        j["scenario_id"] = s.scenario_id;
        j["title"] = s.title;
        j["description"] = s.description;
        content += j.dump();
        content += '\n';
    }
    atomic_write_file(path, content);
}

ScenarioPolicy parse_policy(std::string_view text) {
    if (text == "round-robin") {
        return ScenarioPolicy::round_robin();
    }
    constexpr std::string_view prefix = "seeded-random";
    if (text.starts_with(prefix)) {
        auto rest = text.substr(prefix.size());
        if (rest.empty()) {
            return ScenarioPolicy::seeded_random(0);
        }
        if (rest.front() == ':' || rest.front() == '(') {
            std::string digits(rest.substr(1));
            if (!digits.empty() && digits.back() == ')') digits.pop_back();
            try {
                std::size_t used = 0;
                const auto seed = std::stoull(digits, &used);
                if (used == digits.size()) {
                    return ScenarioPolicy::seeded_random(seed);
                }
            } catch (const std::exception&) {
            }
        }
    }
    throw ConfigError(fmt::format("unknown scenario policy '{}' (round-robin | seeded-random:<seed>)", text));
}

ScenarioSelector::ScenarioSelector(std::vector<ScenarioDescriptor> catalog, ScenarioPolicy policy)
    : catalog_(std::move(catalog)), policy_(policy), state_(policy.seed) {
    if (catalog_.empty()) {
        throw ValidationError("scenario catalog is empty");
    }
}

const ScenarioDescriptor& ScenarioSelector::next() {
    if (policy_.kind == ScenarioPolicy::Kind::RoundRobin) {
        const auto& s = catalog_[cursor_ % catalog_.size()];
        ++cursor_;
        return s;
    }
    // Each draw reseeds from the previous output; the sequence depends only on policy.seed.
    std::mt19937_64 engine(state_);
    state_ = engine();
    return catalog_[state_ % catalog_.size()];
}

ReportParseError::ReportParseError(const std::string& message, std::string raw)
    : FormatError(message), raw_(std::move(raw)) {}


AgentReport parse_agent_report(std::string_view raw) {
    auto obj = extract_json_object(raw);
    if (!obj) {
        throw ReportParseError("agent report: no JSON object found", std::string(raw));
    }
    const Json& j = *obj;
    AgentReport report;
    try {
        const bool has_any = j.contains("labels") || j.contains("code") || j.contains("notes");
        if (!has_any) {
            detail::field_error("agent report", "labels", "missing");
        }
        if (auto it = j.find("labels"); it != j.end() && !it->is_null()) {
            if (!it->is_array()) {
                detail::field_error("agent report", "labels", "expected array");
            }
            for (std::size_t i = 0; i < it->size(); ++i) {
                const Json& l = (*it)[i];
                const std::string where = fmt::format("agent report: labels[{}]", i);
                ReportedLabel label;
                auto id = detail::optional_string(l, "label_id", where);
                if (!id) id = detail::optional_string(l, "label", where);
                if (!id || normalize_label_id(*id).empty()) {
                    detail::field_error(where, "label_id", "missing");
                }
                label.label_id = normalize_label_id(*id);
                label.label_name = detail::optional_string(l, "label_name", where).value_or(*id);
                label.rationale = detail::require_string(l, "rationale", where);
                label.span = corpus::loose_span_from_json(l, where);
                label.function = detail::optional_string(l, "function", where);
                report.labels.push_back(std::move(label));
            }
        }
        report.code = detail::optional_string(j, "code", "agent report");
        report.notes = detail::optional_string(j, "notes", "agent report");
    } catch (const FormatError& e) {
        throw ReportParseError(e.what(), std::string(raw));
    }
    return report;
}

Agents Agents::with_defaults(std::shared_ptr<gateway::Backend> backend, std::string model_name) {
    Agents a{std::move(backend), std::move(model_name), {}, {}};
    for (auto role : {AgentRole::Distillation, AgentRole::Developer, AgentRole::Security}) {
        a.templates[role] = gateway::default_template(role);
        a.sampling[role] = gateway::default_sampling(role);
    }
    return a;
}

const gateway::PromptTemplate& Agents::template_for(AgentRole role) const {
    if (auto it = templates.find(role); it != templates.end()) {
        return it->second;
    }
    return gateway::default_template(role);
}

namespace {

gateway::Sampling sampling_for(const Agents& agents, AgentRole role) {
    if (auto it = agents.sampling.find(role); it != agents.sampling.end()) {
        return it->second;
    }
    return gateway::default_sampling(role);
}

std::string call_agent(const Agents& agents, const gateway::CompletionRequest& request) {
    if (!agents.backend) {
        throw ConfigError("agents have no backend configured");
    }
    auto response = agents.backend->complete(request);
    if (response.finish_reason != gateway::FinishReason::Stop) {
        throw Error(fmt::format("{} agent completion finished with '{}'", request.agent_role,
                                gateway::to_string(response.finish_reason)));
    }
    return response.content;
}

}  // namespace

void validate(const Triplet& triplet) {
    if (triplet.label_id.empty() || triplet.rationale.empty() || triplet.scenario.scenario_id.empty() ||
        triplet.scenario.description.empty()) {
        throw ValidationError("triplet requires a label, a rationale and a scenario");
    }
}

gateway::CompletionRequest distillation_request(const Agents& agents, const corpus::ContractDocument& seed) {
    return gateway::build_request(agents.template_for(AgentRole::Distillation), {{"seed_code", seed.source_text()}},
                                  agents.model_name, sampling_for(agents, AgentRole::Distillation));
}

gateway::CompletionRequest developer_request(const Agents& agents, const Triplet& triplet) {
    const std::string scenario = fmt::format("{}: {}", triplet.scenario.title, triplet.scenario.description);
    return gateway::build_request(agents.template_for(AgentRole::Developer),
                                  {{"label", triplet.label_id}, {"rationale", triplet.rationale}, {"scenario", scenario}},
                                  agents.model_name, sampling_for(agents, AgentRole::Developer));
}

gateway::CompletionRequest security_request(const Agents& agents, const DatasetEntry& vulnerable) {
    const auto& primary = vulnerable.annotations.front();
    return gateway::build_request(
        agents.template_for(AgentRole::Security),
        {{"label", primary.label_id}, {"rationale", primary.rationale}, {"vulnerable_code", vulnerable.contract.source_text()}},
        agents.model_name, sampling_for(agents, AgentRole::Security));
}

SeedAnalysis analyze_seed(const Agents& agents, const corpus::ContractDocument& seed) {
    if (seed.source_text().find_first_not_of(" \t\n") == std::string::npos) {
        throw ValidationError(fmt::format("seed '{}' has empty source text", seed.id()));
    }
    std::string raw = call_agent(agents, distillation_request(agents, seed));
    AgentReport report = parse_agent_report(raw);
    if (report.labels.empty()) {
        throw ReportParseError("distillation report contains no labels", raw);
    }
    SeedAnalysis out{report.labels.front(), {}, std::move(raw)};
    out.auxiliary.assign(report.labels.begin() + 1, report.labels.end());
    return out;
}

void check_contract_syntax(std::string_view code) {
    if (code.find_first_not_of(" \t\r\n") == std::string_view::npos) {
        throw ValidationError("generated contract is empty");
    }
    enum class State { Code, LineComment, BlockComment, String };
    State state = State::Code;
    char quote = 0;
    long depth = 0;
    for (std::size_t i = 0; i < code.size(); ++i) {
        const char c = code[i];
        const char next = i + 1 < code.size() ? code[i + 1] : '\0';
        switch (state) {
            case State::Code:
                if (c == '/' && next == '/') {
                    state = State::LineComment;
                    ++i;
                } else if (c == '/' && next == '*') {
                    state = State::BlockComment;
                    ++i;
                } else if (c == '"' || c == '\'') {
                    state = State::String;
                    quote = c;
                } else if (c == '{') {
                    ++depth;
                } else if (c == '}') {
                    if (--depth < 0) {
                        throw ValidationError("generated contract has unbalanced braces");
                    }
                }
                break;
            case State::LineComment:
                if (c == '\n') state = State::Code;
                break;
            case State::BlockComment:
                if (c == '*' && next == '/') {
                    state = State::Code;
                    ++i;
                }
                break;
            case State::String:
                if (c == '\\') {
                    ++i;
                } else if (c == quote || c == '\n') {
                    state = State::Code;
                }
                break;
        }
    }
    if (depth != 0) {
        throw ValidationError("generated contract has unbalanced braces");
    }
    std::size_t pos = 0;
    bool has_pragma = false;
    while (pos <= code.size() && !has_pragma) {
        auto eol = code.find('\n', pos);
        auto line = code.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        const auto first = line.find_first_not_of(" \t");
        has_pragma = first != std::string_view::npos && line.substr(first).starts_with("pragma ");
        if (eol == std::string_view::npos) break;
        pos = eol + 1;
    }
    if (!has_pragma) {
        throw ValidationError("generated contract has no pragma line");
    }
}

DatasetEntry generate_vulnerable(const Agents& agents, const Triplet& triplet, std::string entry_id,
                                 std::span<const ReportedLabel> auxiliary) {
    validate(triplet);
    std::string raw = call_agent(agents, developer_request(agents, triplet));
    AgentReport report = parse_agent_report(raw);
    if (!report.code) {
        throw ReportParseError("developer report is missing field 'code'", raw);
    }
    check_contract_syntax(*report.code);
    if (entry_id.empty()) {
        entry_id = triplet.scenario.scenario_id + "-vuln";
    }

    corpus::ContractDocument doc(entry_id, *report.code, {corpus::OriginKind::Synthetic, {}});
    const auto& aliases = corpus::CategoryAliases::builtin();

    // The updated rationale comes from the label matching the triplet, else the first label.
    const ReportedLabel* reported = nullptr;
    for (const auto& l : report.labels) {
        if (l.label_id == triplet.label_id) {
            reported = &l;
            break;
        }
    }
    if (!reported && !report.labels.empty()) {
        reported = &report.labels.front();
    }

    corpus::VulnerabilityAnnotation primary{
        .label_id = triplet.label_id,
        .label_name = triplet.label_name.empty() ? triplet.label_id : triplet.label_name,
        .category = aliases.resolve(triplet.label_id),
        .rationale = reported && !reported->rationale.empty() ? reported->rationale : triplet.rationale,
    };
    if (reported) {
        primary.function = reported->function;
        const auto lines = static_cast<int>(doc.line_count());
        if (reported->span && reported->span->start >= 1 && reported->span->start <= reported->span->end &&
            reported->span->end <= lines) {
            primary.span = reported->span;
        } else if (reported->span) {
            log::warn("distiller", "dropping out-of-range span reported by developer agent",
                      {{"entry_id", entry_id}, {"start", reported->span->start}, {"end", reported->span->end}});
        }
    }

    DatasetEntry entry{
        .entry_id = std::move(entry_id),
        .contract = std::move(doc),
        .annotations = {std::move(primary)},
        .polarity = corpus::Polarity::Vulnerable,
        .provenance = corpus::Provenance::DistilledVulnerable,
        .dataset_version = 0,
    };
    for (const auto& aux : auxiliary) {
        entry.annotations.push_back(corpus::VulnerabilityAnnotation{
            .label_id = aux.label_id,
            .label_name = aux.label_name,
            .category = aliases.resolve(aux.label_id),
            .rationale = aux.rationale,
        });
    }
    corpus::validate(entry);
    return entry;
}

DatasetEntry secure_variant(const Agents& agents, const DatasetEntry& vulnerable, std::string entry_id) {
    if (vulnerable.polarity != corpus::Polarity::Vulnerable || vulnerable.annotations.empty()) {
        throw ValidationError(
            fmt::format("secure_variant: entry '{}' is not a vulnerable entry", vulnerable.entry_id));
    }
    std::string raw = call_agent(agents, security_request(agents, vulnerable));
    AgentReport report = parse_agent_report(raw);
    if (!report.code) {
        throw ReportParseError("security report is missing field 'code'", raw);
    }
    if (*report.code == vulnerable.contract.source_text()) {
        throw ValidationError(
            fmt::format("security agent returned code identical to vulnerable entry '{}'", vulnerable.entry_id));
    }
    check_contract_syntax(*report.code);
    std::string explanation;
    if (report.notes && !report.notes->empty()) {
        explanation = *report.notes;
    } else if (!report.labels.empty() && !report.labels.front().rationale.empty()) {
        explanation = report.labels.front().rationale;
    } else {
        throw ReportParseError("security report is missing field 'notes'", raw);
    }
    if (entry_id.empty()) {
        entry_id = vulnerable.entry_id + "-secure";
    }
    DatasetEntry entry{
        .entry_id = entry_id,
        .contract = corpus::ContractDocument(entry_id, *report.code, {corpus::OriginKind::Synthetic, {}}),
        .annotations = {},
        .polarity = corpus::Polarity::Secure,
        .provenance = corpus::Provenance::DistilledSecure,
        .dataset_version = vulnerable.dataset_version,
        .secure_rationale = std::move(explanation),
        .source_entry_id = vulnerable.entry_id,
    };
    corpus::validate(entry);
    return entry;
}

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::Distillation: return "distillation";
        case Stage::Developer: return "developer";
        case Stage::Security: return "security";
    }
    return "distillation";
}

DistillResult distill(std::span<const DatasetEntry> seeds, const Agents& agents,
                      std::span<const ScenarioDescriptor> catalog, ScenarioPolicy policy,
                      const DistillOptions& options) {
    if (seeds.empty()) {
        throw ValidationError("distill requires at least one seed");
    }
    if (!agents.backend) {
        throw ConfigError("distill: agents have no backend configured");
    }
    ScenarioSelector selector({catalog.begin(), catalog.end()}, policy);
    std::vector<ScenarioDescriptor> assigned;
    assigned.reserve(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        assigned.push_back(selector.next());
    }

    struct Outcome {
        std::optional<DatasetEntry> vulnerable;
        std::optional<DatasetEntry> secure;
        std::optional<SeedFailure> failure;
    };
    std::vector<Outcome> outcomes(seeds.size());

    auto run_seed = [&](std::size_t i) {
        const DatasetEntry& seed = seeds[i];
        Stage stage = Stage::Distillation;
        try {
            SeedAnalysis analysis = analyze_seed(agents, seed.contract);
            Triplet triplet{analysis.primary.label_id, analysis.primary.label_name, analysis.primary.rationale,
                            assigned[i]};
            stage = Stage::Developer;
            DatasetEntry vuln = generate_vulnerable(agents, triplet, seed.entry_id + "-vuln", analysis.auxiliary);
            stage = Stage::Security;
            DatasetEntry secure = secure_variant(agents, vuln, seed.entry_id + "-secure");
            outcomes[i].vulnerable = std::move(vuln);
            outcomes[i].secure = std::move(secure);
        } catch (const std::exception& e) {
            outcomes[i].failure = SeedFailure{seed.entry_id, stage, e.what()};
            log::warn("distiller", "seed failed",
                      {{"seed_id", seed.entry_id}, {"stage", to_string(stage)}, {"error", e.what()}});
        }
    };

    const auto workers = static_cast<std::size_t>(std::clamp(options.parallelism, 1, 64));
    if (workers == 1) {
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            run_seed(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(workers, seeds.size()); ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < seeds.size(); i = next++) {
                    run_seed(i);
                }
            });
        }
    }

    std::vector<DatasetEntry> vulnerable;
    std::vector<DatasetEntry> secure;
    DistillResult result;
    for (auto& o : outcomes) {
        if (o.failure) {
            result.failures.push_back(std::move(*o.failure));
        } else {
            vulnerable.push_back(std::move(*o.vulnerable));
            secure.push_back(std::move(*o.secure));
        }
    }
    result.combined = corpus::merge_datasets(vulnerable, secure);
    std::stable_sort(result.failures.begin(), result.failures.end(),
                     [](const SeedFailure& a, const SeedFailure& b) { return a.seed_id < b.seed_id; });
    log::info("distiller", "distillation finished",
              {{"seeds", seeds.size()}, {"entries", result.combined.size()}, {"failures", result.failures.size()}});
    return result;
}

void write_failures(std::span<const SeedFailure> failures, const fs::path& path) {
    std::string content;
    for (const auto& f : failures) {
        Json j = Json::object();
        j["seed_id"] = f.seed_id;
        j["stage"] = to_string(f.stage);
        j["error"] = f.error;
        content += j.dump();
        content += '\n';
    }
    atomic_write_file(path, content);
}

}  // namespace auditforge::distiller
