#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <thread>

#include <fmt/format.h>

#include "auditforge/gateway.hpp"
#include "auditforge/log.hpp"
#include "auditforge/util.hpp"

namespace auditforge::gateway {

namespace {

std::atomic<std::uint64_t> g_network_ops{0};

// Splits "https://host:port/v1/chat" into "https://host:port" and "/v1/chat".
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError(fmt::format("endpoint_url '{}' has no scheme", url));
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

Json request_body(const CompletionRequest& request) {
    Json messages = Json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", m.role == MessageRole::System ? "system" : "user"}, {"content", m.content}});
    }
    Json body = Json::object();
    body["model"] = request.model_name;
    body["messages"] = std::move(messages);
    body["temperature"] = request.sampling.temperature;
    body["max_tokens"] = request.sampling.max_output_tokens;
    return body;
}

CompletionResponse parse_reply(const std::string& text) {
    Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        throw FormatError("chat-completion reply without choices[0]");
    }
    const Json& choice = j["choices"][0];
    CompletionResponse r;
    if (choice.contains("message") && choice["message"].contains("content") &&
        choice["message"]["content"].is_string()) {
        r.content = choice["message"]["content"].get<std::string>();
    }
    r.finish_reason = choice.contains("finish_reason") && choice["finish_reason"].is_string()
                          ? parse_finish_reason(choice["finish_reason"].get<std::string>())
                          : FinishReason::Stop;
    if (r.finish_reason == FinishReason::Stop && r.content.empty()) {
        r.finish_reason = FinishReason::Error;
    }
    if (j.contains("usage") && j["usage"].is_object()) {
        r.usage.input_tokens = j["usage"].value("prompt_tokens", 0L);
        r.usage.output_tokens = j["usage"].value("completion_tokens", 0L);
    }
    return r;
}

}  // namespace

std::uint64_t network_operation_count() noexcept { return g_network_ops.load(); }

struct RemoteBackend::Endpoint {
    std::string base;
    std::string path;
};

RemoteBackend::RemoteBackend(RemoteConfig config)
    : config_(std::move(config)), slots_(std::clamp(config_.parallelism, 1, 1024)) {
    if (config_.endpoint_url.empty()) {
        throw ConfigError("remote backend requires endpoint_url");
    }
    if (config_.max_retries < 0) {
        throw ConfigError("max_retries must be non-negative");
    }
    auto [base, path] = split_url(config_.endpoint_url);
    endpoint_ = std::make_unique<Endpoint>(Endpoint{std::move(base), std::move(path)});
}

RemoteBackend::~RemoteBackend() = default;

CompletionResponse RemoteBackend::complete(const CompletionRequest& request) {
    validate(request);
    slots_.acquire();
    struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
    } release{slots_};

    const std::string correlation_id = fmt::format("af-{}", next_id_.fetch_add(1));
    const std::string body = request_body(request).dump();

    httplib::Client client(endpoint_->base);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    httplib::Headers headers{{"X-Request-Id", correlation_id}};
    if (!config_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.api_key);
    }

    const int budget = config_.max_retries + 1;
    std::string last_error;
    auto backoff = config_.initial_backoff;
    for (int attempt = 1; attempt <= budget; ++attempt) {
        ++g_network_ops;
        auto res = client.Post(endpoint_->path, headers, body, "application/json");
        if (res && res->status >= 200 && res->status < 300) {
            CompletionResponse r = parse_reply(res->body);
            r.attempts = attempt;
            r.correlation_id = correlation_id;
            log::info("gateway", "completion succeeded",
                      {{"correlation_id", correlation_id}, {"attempts", attempt}, {"role", request.agent_role}});
            return r;
        }
        if (res && !is_transient_status(res->status)) {
            log::warn("gateway", "non-transient HTTP failure",
                      {{"correlation_id", correlation_id}, {"status", res->status}, {"attempts", attempt}});
            throw HttpError(res->status, res->body);
        }
        last_error = res ? fmt::format("HTTP {}", res->status) : httplib::to_string(res.error());
        log::warn("gateway", "transient failure",
                  {{"correlation_id", correlation_id}, {"attempt", attempt}, {"error", last_error}});
        if (attempt < budget) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
    throw RetryExhaustedError(budget, last_error);
}

}  // namespace auditforge::gateway
