#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "auditforge/corpus.hpp"
#include "auditforge/distiller.hpp"
#include "auditforge/gateway.hpp"

namespace auditforge::testing {

// Reentrant bank contract; the external call and the late state update sit on
// lines 13-15 inside `withdraw`.
std::string bank_contract(std::string_view contract_name);
inline constexpr corpus::LineSpan kBankVulnSpan{13, 15};

// Same contract with the balance update moved before the call.
std::string fixed_bank_contract(std::string_view contract_name);

// Syntactically plausible contract with randomized identifiers and bodies.
std::string random_contract(std::mt19937_64& rng, int functions = 6);

corpus::DatasetEntry vulnerable_entry(std::string id, std::string text,
                                      std::vector<corpus::VulnerabilityAnnotation> annotations,
                                      corpus::Provenance provenance = corpus::Provenance::Manual);
corpus::DatasetEntry secure_entry(std::string id, std::string text,
                                  corpus::Provenance provenance = corpus::Provenance::Manual);

corpus::VulnerabilityAnnotation annotation(std::string label_id, std::optional<corpus::LineSpan> span,
                                           std::optional<std::string> function = std::nullopt);

// `n` manual seeds "seed-01".. each holding one reentrancy annotation.
std::vector<corpus::DatasetEntry> seed_entries(int n);

// Scripts every agent call that distiller::distill makes for `seeds` under
// the default templates, by replaying the request construction in order.
std::shared_ptr<gateway::StubBackend> script_distillation(std::span<const corpus::DatasetEntry> seeds,
                                                          std::span<const distiller::ScenarioDescriptor> catalog,
                                                          distiller::ScenarioPolicy policy,
                                                          const std::string& model_name);

// Random valid UTF-8 weighted toward characters that exercise text cleanup.
std::string random_utf8(std::mt19937_64& rng, std::size_t codepoints);

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace auditforge::testing
