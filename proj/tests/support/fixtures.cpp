#include "fixtures.hpp"

#include <atomic>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace auditforge::testing {

namespace fs = std::filesystem;
using corpus::DatasetEntry;

std::string bank_contract(std::string_view name) {
    return fmt::format(R"(// SPDX-License-Identifier: MIT
pragma solidity ^0.8.0;

contract {} {{
    mapping(address => uint256) public balances;

    function deposit() external payable {{
        balances[msg.sender] += msg.value;
    }}

    function withdraw(uint256 amount) external {{
        require(balances[msg.sender] >= amount, "insufficient");
        (bool ok, ) = msg.sender.call{{value: amount}}("");
        require(ok, "transfer failed");
        balances[msg.sender] -= amount;
    }}
}}
)",
                       name);
}

std::string fixed_bank_contract(std::string_view name) {
    return fmt::format(R"(// SPDX-License-Identifier: MIT
pragma solidity ^0.8.0;

contract {} {{
    mapping(address => uint256) public balances;

    function deposit() external payable {{
        balances[msg.sender] += msg.value;
    }}

    function withdraw(uint256 amount) external {{
        require(balances[msg.sender] >= amount, "insufficient");
        balances[msg.sender] -= amount;
        (bool sent, ) = payable(msg.sender).call{{value: amount}}("");
        require(sent, "withdrawal failed");
    }}
}}
)",
                       name);
}

namespace {

std::string identifier(std::mt19937_64& rng, int min_len = 5, int max_len = 11) {
    std::uniform_int_distribution<int> len(min_len, max_len);
    std::uniform_int_distribution<int> letter(0, 25);
    std::string s;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
        s += static_cast<char>('a' + letter(rng));
    }
    return s;
}

}  // namespace

std::string random_contract(std::mt19937_64& rng, int functions) {
    std::uniform_int_distribution<int> small(1, 999);
    std::uniform_int_distribution<int> pick(0, 4);
    std::string name = identifier(rng);
    name[0] = static_cast<char>(name[0] - 'a' + 'A');
    const std::string state = identifier(rng);
    const std::string ledger = identifier(rng);
    std::string out = fmt::format("pragma solidity ^0.8.{};\n\ncontract {} {{\n    uint256 private {};\n"
                                  "    mapping(address => uint256) internal {};\n",
                                  small(rng) % 20, name, state, ledger);
    for (int f = 0; f < functions; ++f) {
        const std::string fn = identifier(rng);
        const std::string arg = identifier(rng, 3, 6);
        const std::string local = identifier(rng, 3, 6);
        out += fmt::format("\n    function {}(uint256 {}) external returns (uint256) {{\n", fn, arg);
        out += fmt::format("        uint256 {} = {} * {} + {};\n", local, arg, small(rng), small(rng));
        switch (pick(rng)) {
            case 0: out += fmt::format("        if ({} > {}) {{ {} += {}; }}\n", local, small(rng), state, local); break;
            case 1: out += fmt::format("        {}[msg.sender] = {} ^ {};\n", ledger, local, small(rng)); break;
            case 2: out += fmt::format("        require({} != {}, \"{}\");\n", arg, small(rng), identifier(rng)); break;
            case 3: out += fmt::format("        for (uint256 i = 0; i < {}; i++) {{ {} -= i; }}\n", small(rng) % 9 + 1, local); break;
            default: out += fmt::format("        emit {}({}, {});\n", identifier(rng), local, small(rng)); break;
        }
        out += fmt::format("        return {} + {};\n    }}\n", local, state);
    }
    out += "}\n";
    return out;
}

corpus::VulnerabilityAnnotation annotation(std::string label_id, std::optional<corpus::LineSpan> span,
                                           std::optional<std::string> function) {
    corpus::VulnerabilityAnnotation a;
    a.category = corpus::CategoryAliases::builtin().resolve(label_id);
    a.label_name = label_id;
    a.label_id = std::move(label_id);
    a.span = span;
    a.function = std::move(function);
    a.rationale = "external call precedes the state update";
    return a;
}

DatasetEntry vulnerable_entry(std::string id, std::string text, std::vector<corpus::VulnerabilityAnnotation> annotations,
                              corpus::Provenance provenance) {
    corpus::ContractDocument doc(id, std::move(text), {corpus::OriginKind::ManualLabeled, "fixture"});
    return DatasetEntry{
        .entry_id = std::move(id),
        .contract = std::move(doc),
        .annotations = std::move(annotations),
        .polarity = corpus::Polarity::Vulnerable,
        .provenance = provenance,
    };
}

DatasetEntry secure_entry(std::string id, std::string text, corpus::Provenance provenance) {
    corpus::ContractDocument doc(id, std::move(text), {corpus::OriginKind::Synthetic, {}});
    return DatasetEntry{
        .entry_id = std::move(id),
        .contract = std::move(doc),
        .annotations = {},
        .polarity = corpus::Polarity::Secure,
        .provenance = provenance,
        .secure_rationale = "state is updated before any external call",
    };
}

std::vector<DatasetEntry> seed_entries(int n) {
    std::vector<DatasetEntry> out;
    for (int i = 1; i <= n; ++i) {
        const auto id = fmt::format("seed-{:02}", i);
        out.push_back(vulnerable_entry(id, bank_contract(fmt::format("Bank{}", i)),
                                       {annotation("reentrancy", kBankVulnSpan, "withdraw")}));
    }
    return out;
}

std::shared_ptr<gateway::StubBackend> script_distillation(std::span<const DatasetEntry> seeds,
                                                          std::span<const distiller::ScenarioDescriptor> catalog,
                                                          distiller::ScenarioPolicy policy,
                                                          const std::string& model_name) {
    auto stub = std::make_shared<gateway::StubBackend>();
    const auto agents = distiller::Agents::with_defaults(stub, model_name);
    distiller::ScenarioSelector selector({catalog.begin(), catalog.end()}, policy);
    int n = 0;
    for (const auto& seed : seeds) {
        ++n;
        const auto& scenario = selector.next();
        const std::string rationale = fmt::format("withdraw in {} sends ether before zeroing the balance", seed.entry_id);
        Json labels = Json::array({{{"label_id", "reentrancy"}, {"label_name", "Reentrancy"}, {"rationale", rationale}}});
        stub->add(gateway::stub_key(distiller::distillation_request(agents, seed.contract)),
                  {Json{{"labels", labels}}.dump()});

        const distiller::Triplet triplet{"reentrancy", "Reentrancy", rationale, scenario};
        const std::string contract_name = fmt::format("Synth{}{}", n, scenario.scenario_id.size());
        Json vuln_labels = Json::array({{{"label_id", "reentrancy"},
                                         {"rationale", fmt::format("{}: call before balance update", scenario.title)},
                                         {"span", {kBankVulnSpan.start, kBankVulnSpan.end}},
                                         {"function", "withdraw"}}});
        stub->add(gateway::stub_key(distiller::developer_request(agents, triplet)),
                  {Json{{"code", bank_contract(contract_name)}, {"labels", vuln_labels}}.dump()});

        const auto vuln = distiller::generate_vulnerable(agents, triplet, seed.entry_id + "-vuln");
        stub->add(gateway::stub_key(distiller::security_request(agents, vuln)),
                  {Json{{"code", fixed_bank_contract(contract_name)},
                        {"notes", "balance is decremented before the external call (checks-effects-interactions)"}}
                       .dump()});
    }
    return stub;
}

namespace {

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

}  // namespace

std::string random_utf8(std::mt19937_64& rng, std::size_t codepoints) {
    std::uniform_int_distribution<int> bucket(0, 99);
    auto in = [&](char32_t lo, char32_t hi) {
        return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng);
    };
    static constexpr std::string_view kSyntax = "/*\"'\\{}";
    std::string out;
    for (std::size_t i = 0; i < codepoints; ++i) {
        const int b = bucket(rng);
        char32_t cp;
        if (b < 30) cp = in('!', '~');
        else if (b < 40) cp = ' ';
        else if (b < 45) cp = '\t';
        else if (b < 57) cp = '\n';
        else if (b < 61) cp = '\r';
        else if (b < 69) cp = static_cast<unsigned char>(kSyntax[in(0, kSyntax.size() - 1)]);
        else if (b < 74) cp = in(0x01, 0x1F);
        else if (b < 76) cp = 0x7F;
        else if (b < 80) cp = in(0x80, 0x9F);
        else if (b < 87) cp = in(0xA0, 0x7FF);
        else if (b < 95) {
            cp = in(0x800, 0xFFFD);
            if (cp >= 0xD800 && cp <= 0xDFFF) cp = 0x4E2D;
        } else cp = in(0x10000, 0x10FFFF);
        append_utf8(out, cp);
    }
    return out;
}

TempDir::TempDir() {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto p = fs::temp_directory_path() / fmt::format("auditforge-test-{:08x}-{}", rd(), counter++);
        if (fs::create_directory(p)) {
            path_ = std::move(p);
            return;
        }
    }
    throw std::runtime_error("cannot create a temporary directory");
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

void write_file(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace auditforge::testing
