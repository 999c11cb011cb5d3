#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "auditforge/error.hpp"
#include "auditforge/log.hpp"
#include "auditforge/pipeline.hpp"

namespace fs = std::filesystem;
using namespace auditforge;

namespace {

struct Globals {
    std::string config;
    std::string out_dir;
    std::string log_format = "text";
    bool verbose = false;
};

pipeline::ProjectConfig base_config(const Globals& g) {
    pipeline::ProjectConfig c;
    if (!g.config.empty()) {
        c = pipeline::load_config(g.config);
    } else if (const char* key = std::getenv(pipeline::kApiKeyEnv.data())) {
        c.api_key = key;
    }
    if (!g.out_dir.empty()) {
        c.out_dir = g.out_dir;
    }
    return c;
}

void print_json(const Json& j) { std::cout << j.dump() << '\n'; }

gate::Candidate parse_candidate(const std::string& text) {
    const auto eq = text.rfind('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError(fmt::format("candidate '{}' is not <model_id>=<label_loss>", text));
    }
    try {
        return {text.substr(0, eq), std::stod(text.substr(eq + 1))};
    } catch (const std::exception&) {
        throw ConfigError(fmt::format("candidate '{}' has a non-numeric loss", text));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"auditforge: distill, preprocess, gate and evaluate smart-contract audit datasets"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Project config (YAML)");
    app.add_option("--out-dir", g.out_dir, "Output directory (overrides the config)");
    app.add_option("--log-format", g.log_format, "Log record format")->check(CLI::IsMember({"text", "json"}));
    app.add_flag("-v,--verbose", g.verbose, "Debug logging");

    // distill
    auto* distill = app.add_subcommand("distill", "Generate paired vulnerable/secure entries from seed contracts");
    std::string d_seeds, d_format, d_catalog, d_policy, d_fixtures, d_endpoint, d_model, d_out, d_failures;
    std::optional<int> d_parallelism;
    distill->add_option("--seeds", d_seeds, "Seed corpus");
    distill->add_option("--seeds-format", d_format, "annotated-json | entries-jsonl");
    distill->add_option("--catalog", d_catalog, "Scenario catalog (JSONL)");
    distill->add_option("--policy", d_policy, "round-robin | seeded-random[:seed]");
    distill->add_option("--fixtures", d_fixtures, "Stub backend fixtures (selects the stub backend)");
    distill->add_option("--endpoint", d_endpoint, "Chat-completion endpoint (selects the remote backend)");
    distill->add_option("--model", d_model, "Teacher model name");
    distill->add_option("--parallelism", d_parallelism, "Concurrent seeds");
    distill->add_option("--out", d_out, "Output entries file");
    distill->add_option("--failures", d_failures, "Failure log");

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "Deduplicate, convert to instructions and length-filter");
    std::string p_input, p_tokenizer, p_embedding;
    std::optional<std::size_t> p_max_tokens;
    std::optional<double> p_threshold;
    bool p_strip_comments = false;
    prep->add_option("--input", p_input, "Entries to preprocess");
    prep->add_option("--max-tokens", p_max_tokens, "Length limit per instruction record");
    prep->add_option("--dedup-threshold", p_threshold, "Cosine similarity at or above which an entry is dropped");
    prep->add_option("--tokenizer", p_tokenizer, "default-regex | external:<name>");
    prep->add_option("--embedding", p_embedding, "hashed-ngram | external:<name>");
    prep->add_flag("--strip-comments", p_strip_comments, "Remove comments from contract text");

    // gate
    auto* gate_cmd = app.add_subcommand("gate", "Loss computation and the iterative model gate");
    gate_cmd->require_subcommand(1);
    std::string state_path, predictions, dataset_path;

    auto* loss = gate_cmd->add_subcommand("loss", "Print a loss report");
    std::string l_mode = "exact", l_weighting = "none", l_model = "model";
    long l_n = 0, l_n_correct = 0;
    int l_version = 0;
    std::optional<double> l_lambda, l_p, l_g;
    loss->add_option("--mode", l_mode, "exact | assumed")->check(CLI::IsMember({"exact", "assumed"}));
    loss->add_option("--predictions", predictions, "pred/1 file glob (exact mode)");
    loss->add_option("--dataset", dataset_path, "Entries the predictions refer to (exact mode)");
    loss->add_option("--weighting", l_weighting, "none | by-label-count | by-valid-rationale-count");
    loss->add_option("--dataset-version", l_version, "Dataset version recorded in the report");
    loss->add_option("--model-id", l_model, "Model id (assumed mode)");
    loss->add_option("--n", l_n, "Record count (assumed mode)");
    loss->add_option("--n-correct", l_n_correct, "Correct record count (assumed mode)");
    loss->add_option("--lambda", l_lambda, "Rationale loss weight");
    loss->add_option("--p", l_p, "Assumed correct-label probability");
    loss->add_option("--g", l_g, "Assumed rationale-presence probability");

    auto* step = gate_cmd->add_subcommand("step", "Run one gate iteration");
    std::vector<std::string> candidates;
    step->add_option("--state", state_path, "Run-state file");
    step->add_option("--predictions", predictions, "pred/1 file glob");
    step->add_option("--candidate", candidates, "<model_id>=<label_loss> (starts a new run)");

    auto* exp = gate_cmd->add_subcommand("export-revisions", "Write flagged entries with model evidence");
    std::string e_out;
    exp->add_option("--state", state_path, "Run-state file");
    exp->add_option("--predictions", predictions, "pred/1 file glob");
    exp->add_option("--out", e_out, "Revision file")->required();

    auto* imp = gate_cmd->add_subcommand("import-revisions", "Apply a human-edited revision file");
    std::string i_in, i_out;
    imp->add_option("--state", state_path, "Run-state file");
    imp->add_option("--in", i_in, "Edited revision file")->required();
    imp->add_option("--out", i_out, "Next dataset version (default <out>/dataset_v<k+1>.jsonl)");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Score model audit reports against an annotated corpus");
    std::string v_corpus, v_reports, v_out, v_corpus_id, v_format;
    bool v_strict = false;
    eval->add_option("--corpus", v_corpus, "Annotated corpus (entries JSONL or annotated JSON)");
    eval->add_option("--reports", v_reports, "Directory of <model>__<entry>.txt|json reports");
    eval->add_option("--out", v_out, "Comparison table (.csv or .md)");
    eval->add_option("--corpus-id", v_corpus_id, "Corpus name in the table");
    eval->add_option("--format", v_format, "csv | markdown");
    eval->add_flag("--strict-labels", v_strict, "Require matching labels for a true positive");

    // run
    auto* run = app.add_subcommand("run", "Run pipeline stages in order");
    std::string r_stages = "all";
    run->add_option("--stages", r_stages, "Comma-separated subset of distill,preprocess,gate-step,evaluate");

    CLI11_PARSE(app, argc, argv);

    log::set_format(g.log_format == "json" ? log::Format::Json : log::Format::Text);
    log::set_min_level(g.verbose ? log::Level::Debug : log::Level::Info);

    try {
        auto config = base_config(g);
        if (!state_path.empty()) config.gate.state = state_path;
        if (!predictions.empty()) config.gate.predictions = predictions;

        if (*distill) {
            if (!d_seeds.empty()) config.distill.seeds = d_seeds;
            if (!d_format.empty()) config.distill.seeds_format = corpus::parse_corpus_format(d_format);
            if (!d_catalog.empty()) config.distill.catalog = fs::path(d_catalog);
            if (!d_policy.empty()) config.distill.policy = distiller::parse_policy(d_policy);
            if (!d_fixtures.empty()) {
                config.backend.kind = pipeline::BackendSettings::Kind::Stub;
                config.backend.fixtures = d_fixtures;
            }
            if (!d_endpoint.empty()) {
                config.backend.kind = pipeline::BackendSettings::Kind::Remote;
                config.backend.endpoint = d_endpoint;
            }
            if (!d_model.empty()) config.backend.model = d_model;
            if (d_parallelism) config.backend.parallelism = *d_parallelism;
            const auto result = pipeline::run_distill(config, pipeline::make_backend(config));
            const fs::path out = d_out.empty() ? config.out_dir / pipeline::artifacts::kDistilled : fs::path(d_out);
            const fs::path failures =
                d_failures.empty() ? out.parent_path() / pipeline::artifacts::kDistillFailures : fs::path(d_failures);
            if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
            corpus::write_entries(result.combined, out);
            distiller::write_failures(result.failures, failures);
            print_json({{"entries", result.combined.size()},
                        {"failures", result.failures.size()},
                        {"out", out.string()},
                        {"sha256", sha256_file_hex(out)}});
            return result.combined.empty() ? 1 : 0;
        }

        if (*prep) {
            if (!p_input.empty()) config.preprocess.input = fs::path(p_input);
            if (p_max_tokens) config.preprocess.max_tokens = *p_max_tokens;
            if (p_threshold) config.preprocess.dedup_threshold = *p_threshold;
            if (!p_tokenizer.empty()) config.preprocess.tokenizer = p_tokenizer;
            if (!p_embedding.empty()) config.preprocess.embedding = p_embedding;
            if (p_strip_comments) config.preprocess.cleaning.strip_comments = true;
            pipeline::run_pipeline(config, {pipeline::Stage::Preprocess});
            print_json({{"instructions", (config.out_dir / pipeline::artifacts::kInstructions).string()},
                        {"dataset", (config.out_dir / pipeline::artifacts::kDatasetV0).string()},
                        {"removal_report", (config.out_dir / pipeline::artifacts::kRemovalReport).string()}});
            return 0;
        }

        if (*loss) {
            if (l_lambda) config.gate.config.lambda = *l_lambda;
            if (l_p) config.gate.config.assumed_p = *l_p;
            if (l_g) config.gate.config.assumed_g = *l_g;
            gate::validate(config.gate.config);
            auto emit = [&](const gate::LossReport& r) {
                Json j = gate::to_json(r);
                j["verdict"] = gate::to_string(gate::classify_model(r.combined, config.gate.config));
                print_json(j);
            };
            if (l_mode == "assumed") {
                emit(gate::assumed_report(l_model, l_version, l_n, l_n_correct, config.gate.config));
                return 0;
            }
            auto records = pipeline::read_prediction_glob(config.gate.predictions);
            std::vector<corpus::DatasetEntry> dataset;
            if (!dataset_path.empty()) {
                dataset = corpus::load_annotated_corpus(dataset_path, corpus::CorpusFormat::EntriesJsonl);
            } else {
                for (const auto& r : records) {
                    if (!r.rationale_correct) {
                        throw ConfigError("predictions carry unresolved rationale verdicts; pass --dataset");
                    }
                }
            }
            const auto weighting = gate::parse_weighting(l_weighting);
            if (dataset.empty()) {
                std::map<std::string, std::vector<gate::PredictionRecord>> by_model;
                for (auto& r : records) by_model[r.model_id].push_back(std::move(r));
                for (const auto& [model, recs] : by_model) {
                    emit(gate::exact_report(model, l_version, recs, config.gate.config, weighting));
                }
            } else {
                for (const auto& r :
                     pipeline::loss_reports(std::move(records), dataset, l_version, config.gate.config, weighting)) {
                    emit(r);
                }
            }
            return 0;
        }

        if (*step) {
            for (const auto& c : candidates) config.gate.candidates.push_back(parse_candidate(c));
            const auto result = pipeline::run_gate_step(config);
            for (const auto& a : result.actions) {
                print_json({{"action", gate::to_string(a.kind)}, {"model_id", a.model_id}, {"loss", a.loss}});
            }
            Json summary = {{"k", result.state.k},
                            {"outcome", gate::to_string(result.state.outcome)},
                            {"revision_queue", result.state.revision_queue.size()}};
            if (result.state.d_train) summary["d_train"] = *result.state.d_train;
            if (result.revision_export) summary["revision_export"] = result.revision_export->string();
            print_json(summary);
            return 0;
        }

        if (*exp) {
            const auto state = gate::load_state(config.state_path());
            const auto dataset =
                corpus::load_annotated_corpus(state.dataset_chain.back(), corpus::CorpusFormat::EntriesJsonl);
            std::vector<gate::PredictionRecord> preds;
            if (!config.gate.predictions.empty()) preds = pipeline::read_prediction_glob(config.gate.predictions);
            const auto records = gate::build_revision_export(state, dataset, preds);
            gate::write_revisions(records, e_out);
            print_json({{"exported", records.size()}, {"out", e_out}});
            return 0;
        }

        if (*imp) {
            auto state = gate::load_state(config.state_path());
            const auto dataset =
                corpus::load_annotated_corpus(state.dataset_chain.back(), corpus::CorpusFormat::EntriesJsonl);
            const fs::path out =
                i_out.empty() ? config.out_dir / fmt::format("dataset_v{}.jsonl", state.k + 1) : fs::path(i_out);
            const auto revisions = gate::read_revisions(i_in);
            auto result = gate::apply_revisions(state, dataset, revisions, out.string());
            if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
            corpus::write_entries(result.dataset, out);
            gate::save_state(state, config.state_path());
            print_json({{"k", state.k},
                        {"dataset", out.string()},
                        {"changed", result.changed_ids},
                        {"added", result.added_ids},
                        {"dropped", result.dropped_ids}});
            return 0;
        }

        if (*eval) {
            if (!v_corpus.empty()) config.evaluate.corpus = v_corpus;
            if (!v_reports.empty()) config.evaluate.reports = v_reports;
            if (!v_corpus_id.empty()) config.evaluate.corpus_id = v_corpus_id;
            if (v_strict) config.evaluate.strict_labels = true;
            if (!v_format.empty()) {
                config.evaluate.format = evaluator::parse_table_format(v_format);
            } else if (!v_out.empty() && fs::path(v_out).extension() == ".md") {
                config.evaluate.format = evaluator::TableFormat::Markdown;
            }
            const auto cards = pipeline::run_evaluate(config);
            const auto table = evaluator::emit_comparison(cards, config.evaluate.format);
            if (v_out.empty()) {
                std::cout << table;
            } else {
                atomic_write_file(v_out, table);
            }
            return 0;
        }

        if (*run) {
            const auto reports = pipeline::run_pipeline(config, pipeline::parse_stages(r_stages));
            for (const auto& r : reports) {
                Json outputs = Json::array();
                for (const auto& p : r.outputs) outputs.push_back(p.string());
                print_json({{"stage", pipeline::to_string(r.stage)}, {"skipped", r.skipped}, {"outputs", outputs}});
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
