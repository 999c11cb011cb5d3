#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace auditforge {

using Json = nlohmann::ordered_json;

// ---- hashing ---------------------------------------------------------------

// Lower-case hex SHA-256 of the bytes of `data`.
std::string sha256_hex(std::string_view data);

std::string sha256_file_hex(const std::filesystem::path& path);

constexpr std::uint64_t fnv1a64(std::string_view data) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---- text ------------------------------------------------------------------

std::string to_lower_ascii(std::string_view s);

// "Unchecked Low-Level Calls" -> "unchecked-low-level-calls"
std::string normalize_label_id(std::string_view s);

// Number of newline-delimited lines; a trailing newline does not open a new line.
std::size_t count_lines(std::string_view text) noexcept;

bool is_valid_utf8(std::string_view s) noexcept;

// ---- files -----------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path`.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

// Expands a single-directory glob ("preds/*.jsonl"). A pattern without
// wildcards is returned as-is when the file exists. Results are sorted.
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

// ---- JSON ------------------------------------------------------------------

// Parses `raw` as a JSON object. On failure, scans for balanced {...} blocks
// (string-aware) and returns the first one that parses as an object.
std::optional<Json> extract_json_object(std::string_view raw);

}  // namespace auditforge
