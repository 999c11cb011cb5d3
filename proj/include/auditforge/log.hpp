#pragma once

#include <string>
#include <string_view>

#include "auditforge/util.hpp"

namespace auditforge::log {

enum class Format { Text, Json };
enum class Level { Debug, Info, Warn, Error };

void set_format(Format format);
void set_min_level(Level level);

// One line per record on stderr. `fields` is merged into the JSON record or
// rendered as key=value pairs in text mode.
void write(Level level, std::string_view stage, std::string_view message, const Json& fields = Json::object());

inline void info(std::string_view stage, std::string_view message, const Json& fields = Json::object()) {
    write(Level::Info, stage, message, fields);
}
inline void warn(std::string_view stage, std::string_view message, const Json& fields = Json::object()) {
    write(Level::Warn, stage, message, fields);
}
inline void debug(std::string_view stage, std::string_view message, const Json& fields = Json::object()) {
    write(Level::Debug, stage, message, fields);
}

}  // namespace auditforge::log
