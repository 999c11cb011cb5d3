#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "auditforge/error.hpp"

namespace auditforge::gateway {

enum class AgentRole { Distillation, Developer, Security };

std::string_view role_name(AgentRole role);  // "Distillation", "Developer", "Security"
AgentRole parse_role(std::string_view name);

// Placeholders a template body may reference, written as {name}.
inline constexpr std::string_view kPlaceholders[] = {
    "seed_code", "label", "rationale", "scenario", "vulnerable_code", "example_rationale", "example_label",
};

struct PromptTemplate {
    std::string role_name;
    std::string system;
    std::string body;
    // Few-shot block; bound automatically to {example_rationale} / {example_label}.
    std::string example_rationale;
    std::string example_label;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

// Placeholder names referenced by `body`, in order of first appearance.
std::vector<std::string> referenced_placeholders(std::string_view body);

// Throws ValidationError on an undeclared placeholder or a missing example.
void validate(const PromptTemplate& tmpl);

// Single-pass substitution; substituted text is never rescanned. Bindings
// for placeholders the body does not use are logged and ignored.
std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings);

const PromptTemplate& default_template(AgentRole role);

// JSON object keyed by role name: {"Developer": {system, body, example_rationale, example_label}, ...}.
// Roles absent from the file keep their defaults.
std::map<AgentRole, PromptTemplate> load_templates(const std::filesystem::path& path);

enum class MessageRole { System, User };

struct Message {
    MessageRole role = MessageRole::User;
    std::string content;
};

struct Sampling {
    double temperature = 0.2;
    int max_output_tokens = 4096;
};

// 0.8 for the Developer agent, 0.2 otherwise.
Sampling default_sampling(AgentRole role);

struct CompletionRequest {
    std::string agent_role;  // role_name of the issuing agent; part of the stub key
    std::string model_name;
    std::vector<Message> messages;
    Sampling sampling;
};

void validate(const CompletionRequest& request);

// System message from the template, then the rendered body as the user message.
CompletionRequest build_request(const PromptTemplate& tmpl, const Bindings& bindings, std::string model_name,
                                Sampling sampling);

enum class FinishReason { Stop, Length, Error };

std::string_view to_string(FinishReason r);
FinishReason parse_finish_reason(std::string_view text);

struct Usage {
    long input_tokens = 0;
    long output_tokens = 0;
};

struct CompletionResponse {
    std::string content;
    FinishReason finish_reason = FinishReason::Stop;
    Usage usage;
    int attempts = 1;
    std::string correlation_id;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual CompletionResponse complete(const CompletionRequest& request) = 0;
    virtual std::string_view name() const = 0;
};

// ---- scripted stub ---------------------------------------------------------

// "<role>:<16 hex digits of sha256(role \n prompt)>". The prompt is the
// content of the last user message.
std::string stub_key(std::string_view role_name, std::string_view rendered_prompt);
std::string stub_key(const CompletionRequest& request);

class FixtureMissError : public Error {
public:
    explicit FixtureMissError(std::string key);
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

struct StubFixture {
    std::string content;
    FinishReason finish_reason = FinishReason::Stop;
};

class StubBackend final : public Backend {
public:
    StubBackend() = default;
    explicit StubBackend(std::map<std::string, StubFixture, std::less<>> fixtures);

    // JSONL of {key, content, finish_reason}.
    static StubBackend from_file(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    void add(std::string key, StubFixture fixture);
    std::size_t size() const noexcept { return fixtures_.size(); }

    CompletionResponse complete(const CompletionRequest& request) override;
    std::string_view name() const override { return "stub"; }

private:
    std::map<std::string, StubFixture, std::less<>> fixtures_;
};

// ---- remote chat-completion client -------------------------------------------

struct RemoteConfig {
    std::string endpoint_url;  // e.g. https://api.example.com/v1/chat/completions
    std::string api_key;
    int max_retries = 3;
    int parallelism = 4;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::seconds timeout{120};
};

class HttpError : public Error {
public:
    HttpError(int status, std::string body);
    int status() const noexcept { return status_; }

private:
    int status_;
};

class RetryExhaustedError : public Error {
public:
    RetryExhaustedError(int attempts, std::string last_error);
    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

// 429, 408 and 5xx are retried; any other non-2xx fails immediately.
bool is_transient_status(int status) noexcept;

class RemoteBackend final : public Backend {
public:
    explicit RemoteBackend(RemoteConfig config);
    ~RemoteBackend() override;

    CompletionResponse complete(const CompletionRequest& request) override;
    std::string_view name() const override { return "remote"; }

private:
    struct Endpoint;
    RemoteConfig config_;
    std::unique_ptr<Endpoint> endpoint_;
    std::counting_semaphore<1024> slots_;
    std::atomic<std::uint64_t> next_id_{1};
};

// HTTP attempts issued by every RemoteBackend in this process.
std::uint64_t network_operation_count() noexcept;

}  // namespace auditforge::gateway
