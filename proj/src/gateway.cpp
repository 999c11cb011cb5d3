#include "auditforge/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <fmt/format.h>

#include "auditforge/json_fields.hpp"
#include "auditforge/log.hpp"
#include "auditforge/util.hpp"

namespace auditforge::gateway {

namespace fs = std::filesystem;

std::string_view role_name(AgentRole role) {
    switch (role) {
        case AgentRole::Distillation: return "Distillation";
        case AgentRole::Developer: return "Developer";
        case AgentRole::Security: return "Security";
    }
    return "Distillation";
}

AgentRole parse_role(std::string_view name) {
    const std::string lower = to_lower_ascii(name);
    if (lower == "distillation") return AgentRole::Distillation;
    if (lower == "developer") return AgentRole::Developer;
    if (lower == "security") return AgentRole::Security;
    throw ConfigError(fmt::format("unknown agent role '{}'", name));
}

namespace {

bool is_ident_start(char c) { return std::islower(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) {
    return std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) || c == '_';
}

// Calls on_text(text) / on_placeholder(name) over the body, left to right.
template <typename OnText, typename OnPlaceholder>
void scan_template(std::string_view body, OnText on_text, OnPlaceholder on_placeholder) {
    std::size_t i = 0;
    std::size_t text_start = 0;
    while (i < body.size()) {
        if (body[i] == '{' && i + 1 < body.size() && is_ident_start(body[i + 1])) {
            std::size_t j = i + 1;
            while (j < body.size() && is_ident_char(body[j])) {
                ++j;
            }
            if (j < body.size() && body[j] == '}') {
                on_text(body.substr(text_start, i - text_start));
                on_placeholder(body.substr(i + 1, j - i - 1));
                i = j + 1;
                text_start = i;
                continue;
            }
        }
        ++i;
    }
    on_text(body.substr(text_start));
}

bool is_declared(std::string_view name) {
    return std::find(std::begin(kPlaceholders), std::end(kPlaceholders), name) != std::end(kPlaceholders);
}

}  // namespace

std::vector<std::string> referenced_placeholders(std::string_view body) {
    std::vector<std::string> out;
    scan_template(
        body, [](std::string_view) {},
        [&](std::string_view name) {
            if (std::find(out.begin(), out.end(), name) == out.end()) {
                out.emplace_back(name);
            }
        });
    return out;
}

void validate(const PromptTemplate& tmpl) {
    for (const auto& name : referenced_placeholders(tmpl.body)) {
        if (!is_declared(name)) {
            throw ValidationError(
                fmt::format("template '{}': undeclared placeholder '{{{}}}'", tmpl.role_name, name));
        }
    }
    if (tmpl.example_rationale.empty() || tmpl.example_label.empty()) {
        throw ValidationError(
            fmt::format("template '{}': example rationale and example label are both required", tmpl.role_name));
    }
}

std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings) {
    validate(tmpl);
    const auto used = referenced_placeholders(tmpl.body);
    for (const auto& [key, value] : bindings) {
        if (std::find(used.begin(), used.end(), key) == used.end()) {
            log::warn("gateway", "ignoring binding not referenced by template",
                      {{"template", tmpl.role_name}, {"placeholder", key}});
        }
    }
    auto lookup = [&](std::string_view name) -> const std::string& {
        if (auto it = bindings.find(name); it != bindings.end()) {
            return it->second;
        }
        if (name == "example_rationale") return tmpl.example_rationale;
        if (name == "example_label") return tmpl.example_label;
        throw ValidationError(fmt::format("template '{}': missing binding for placeholder '{}'", tmpl.role_name, name));
    };
    std::string out;
    scan_template(
        tmpl.body, [&](std::string_view text) { out.append(text); },
        [&](std::string_view name) { out.append(lookup(name)); });
    return out;
}

const PromptTemplate& default_template(AgentRole role) {
    static const PromptTemplate kDistillation{
        .role_name = "Distillation",
        .system = "You are an experienced smart contract security auditor.",
        .body = R"(Audit the Solidity contract below. For every vulnerability you find, give a label and a rationale that explains where the flaw is and how it can be exploited.

Example rationale: {example_rationale}
Example label: {example_label}

Answer with a single JSON object:
{"labels": [{"label_id": "<label>", "label_name": "<readable name>", "rationale": "<rationale>", "span": [<first line>, <last line>]}]}

Contract:
{seed_code}
)",
        .example_rationale =
            "withdraw() sends Ether with call.value() on line 14 before the balance is zeroed on line 16, so a "
            "fallback function can re-enter withdraw() and drain the contract.",
        .example_label = "reentrancy",
    };
    static const PromptTemplate kDeveloper{
        .role_name = "Developer",
        .system = "You are a senior Solidity developer building realistic contracts for security training data.",
        .body = R"(Write a complete, self-contained Solidity contract for the application scenario below. The contract must contain the vulnerability described by the label and rationale, embedded naturally in the business logic.

Scenario: {scenario}
Vulnerability label: {label}
Rationale: {rationale}

Example rationale: {example_rationale}
Example label: {example_label}

Answer with a single JSON object:
{"code": "<full contract source>", "labels": [{"label_id": "<label>", "rationale": "<rationale describing the flaw in your code>", "span": [<first line>, <last line>]}]}
)",
        .example_rationale =
            "claimReward() relies on block.timestamp to decide the winner on line 22, which a miner can shift by "
            "several seconds.",
        .example_label = "time-manipulation",
    };
    static const PromptTemplate kSecurity{
        .role_name = "Security",
        .system = "You are a smart contract security engineer who writes minimal, correct patches.",
        .body = R"(The contract below contains the vulnerability described by the label and rationale. Rewrite it so the vulnerability is fixed while keeping the contract as close to the original as possible.

Vulnerability label: {label}
Rationale: {rationale}

Example rationale: {example_rationale}
Example label: {example_label}

Answer with a single JSON object:
{"code": "<full patched source>", "notes": "<why the patched contract is secure>"}

Contract:
{vulnerable_code}
)",
        .example_rationale =
            "The balance is now set to zero before the external call and the function is guarded by a reentrancy "
            "lock, so re-entering withdraw() has nothing to withdraw.",
        .example_label = "secure",
    };
    switch (role) {
        case AgentRole::Distillation: return kDistillation;
        case AgentRole::Developer: return kDeveloper;
        case AgentRole::Security: return kSecurity;
    }
    return kDistillation;
}

std::map<AgentRole, PromptTemplate> load_templates(const fs::path& path) {
    std::map<AgentRole, PromptTemplate> out;
    for (auto role : {AgentRole::Distillation, AgentRole::Developer, AgentRole::Security}) {
        out[role] = default_template(role);
    }
    Json root = Json::parse(read_text_file(path), nullptr, false);
    if (root.is_discarded() || !root.is_object()) {
        throw ConfigError(fmt::format("{}: expected a JSON object of templates", path.string()));
    }
    for (const auto& [key, value] : root.items()) {
        const AgentRole role = parse_role(key);
        const std::string where = fmt::format("{}: {}", path.string(), key);
        PromptTemplate& t = out[role];
        t.role_name = std::string(role_name(role));
        if (auto s = detail::optional_string(value, "system", where)) t.system = *s;
        if (auto s = detail::optional_string(value, "body", where)) t.body = *s;
        if (auto s = detail::optional_string(value, "example_rationale", where)) t.example_rationale = *s;
        if (auto s = detail::optional_string(value, "example_label", where)) t.example_label = *s;
        validate(t);
    }
    return out;
}

Sampling default_sampling(AgentRole role) {
    return Sampling{.temperature = role == AgentRole::Developer ? 0.8 : 0.2, .max_output_tokens = 4096};
}

void validate(const CompletionRequest& request) {
    if (request.messages.empty()) {
        throw ValidationError("completion request without messages");
    }
    if (request.messages.front().role != MessageRole::System) {
        throw ValidationError("completion request must start with a system message");
    }
    if (request.sampling.temperature < 0.0) {
        throw ValidationError("negative sampling temperature");
    }
    if (request.sampling.max_output_tokens <= 0) {
        throw ValidationError("max_output_tokens must be positive");
    }
}

CompletionRequest build_request(const PromptTemplate& tmpl, const Bindings& bindings, std::string model_name,
                                Sampling sampling) {
    CompletionRequest req{
        .agent_role = tmpl.role_name,
        .model_name = std::move(model_name),
        .messages = {{MessageRole::System, tmpl.system}, {MessageRole::User, render_prompt(tmpl, bindings)}},
        .sampling = sampling,
    };
    validate(req);
    return req;
}

std::string_view to_string(FinishReason r) {
    switch (r) {
        case FinishReason::Stop: return "stop";
        case FinishReason::Length: return "length";
        case FinishReason::Error: return "error";
    }
    return "error";
}

FinishReason parse_finish_reason(std::string_view text) {
    if (text == "stop") return FinishReason::Stop;
    if (text == "length") return FinishReason::Length;
    return FinishReason::Error;
}

std::string stub_key(std::string_view role, std::string_view rendered_prompt) {
    std::string material(role);
    material += '\n';
    material.append(rendered_prompt);
    return fmt::format("{}:{}", to_lower_ascii(role), sha256_hex(material).substr(0, 16));
}

std::string stub_key(const CompletionRequest& request) {
    std::string_view prompt;
    for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
        if (it->role == MessageRole::User) {
            prompt = it->content;
            break;
        }
    }
    return stub_key(request.agent_role, prompt);
}

FixtureMissError::FixtureMissError(std::string key)
    : Error(fmt::format("stub backend has no fixture for key '{}'", key)), key_(std::move(key)) {}

StubBackend::StubBackend(std::map<std::string, StubFixture, std::less<>> fixtures) : fixtures_(std::move(fixtures)) {}

StubBackend StubBackend::from_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot read stub fixtures '{}'", path.string()));
    }
    StubBackend stub;
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
        StubFixture f{detail::require_string(j, "content", where),
                      parse_finish_reason(detail::optional_string(j, "finish_reason", where).value_or("stop"))};
        stub.add(detail::require_string(j, "key", where), std::move(f));
    }
    return stub;
}

void StubBackend::save(const fs::path& path) const {
    std::string content;
    for (const auto& [key, f] : fixtures_) {
        Json j = Json::object();
        j["key"] = key;
        j["content"] = f.content;
        j["finish_reason"] = to_string(f.finish_reason);
        content += j.dump();
        content += '\n';
    }
    atomic_write_file(path, content);
}

void StubBackend::add(std::string key, StubFixture fixture) { fixtures_[std::move(key)] = std::move(fixture); }

CompletionResponse StubBackend::complete(const CompletionRequest& request) {
    validate(request);
    const std::string key = stub_key(request);
    auto it = fixtures_.find(key);
    if (it == fixtures_.end()) {
        throw FixtureMissError(key);
    }
    return CompletionResponse{
        .content = it->second.content,
        .finish_reason = it->second.finish_reason,
        .usage = {},
        .attempts = 1,
        .correlation_id = key,
    };
}

HttpError::HttpError(int status, std::string body)
    : Error(fmt::format("HTTP {}: {}", status, body.substr(0, 512))), status_(status) {}

RetryExhaustedError::RetryExhaustedError(int attempts, std::string last_error)
    : Error(fmt::format("retry budget exhausted after {} attempts: {}", attempts, last_error)), attempts_(attempts) {}

bool is_transient_status(int status) noexcept { return status == 429 || status == 408 || status >= 500; }

}  // namespace auditforge::gateway
