#include "auditforge/log.hpp"

#include <atomic>
#include <chrono>
#include <iostream>
#include <mutex>

#include <fmt/chrono.h>
#include <fmt/format.h>

namespace auditforge::log {

namespace {

std::atomic<Format> g_format{Format::Text};
std::atomic<Level> g_min_level{Level::Info};
std::mutex g_mutex;

std::string_view level_name(Level level) {
    switch (level) {
        case Level::Debug: return "debug";
        case Level::Info: return "info";
        case Level::Warn: return "warn";
        case Level::Error: return "error";
    }
    return "info";
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    return fmt::format("{:%Y-%m-%dT%H:%M:%S}.{:03d}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(now)), ms);
}

}  // namespace

void set_format(Format format) { g_format = format; }
void set_min_level(Level level) { g_min_level = level; }

void write(Level level, std::string_view stage, std::string_view message, const Json& fields) {
    if (level < g_min_level.load()) {
        return;
    }
    std::string line;
    if (g_format.load() == Format::Json) {
        Json rec = Json::object();
        rec["ts"] = timestamp();
        rec["level"] = level_name(level);
        rec["stage"] = stage;
        rec["msg"] = message;
        if (fields.is_object()) {
            for (const auto& [k, v] : fields.items()) {
                rec[k] = v;
            }
        }
        line = rec.dump();
    } else {
        line = fmt::format("{} [{}] {}: {}", timestamp(), level_name(level), stage, message);
        if (fields.is_object()) {
            for (const auto& [k, v] : fields.items()) {
                line += fmt::format(" {}={}", k, v.is_string() ? v.get<std::string>() : v.dump());
            }
        }
    }
    std::lock_guard lock(g_mutex);
    std::cerr << line << '\n';
}

}  // namespace auditforge::log
