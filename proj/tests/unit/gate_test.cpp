#include <cmath>

#include <gtest/gtest.h>

#include "auditforge/gate.hpp"
#include "fixtures.hpp"

namespace af = auditforge;
namespace gate = af::gate;
using af::testing::TempDir;

namespace {

gate::PredictionRecord pred(std::string model, std::string entry, double p, double g, std::optional<bool> ok) {
    gate::PredictionRecord r;
    r.model_id = std::move(model);
    r.entry_id = std::move(entry);
    r.label_probability = p;
    r.rationale_presence = g;
    r.rationale_correct = ok;
    return r;
}

gate::LossReport report(std::string model, int k, double combined) {
    gate::LossReport r;
    r.model_id = std::move(model);
    r.dataset_version = k;
    r.n = 1;
    r.n_correct = 1;
    r.label_loss = combined;
    r.combined = combined;
    return r;
}

gate::GateState three_model_state() {
    const std::vector<gate::Candidate> c{{"alpha", 0.9}, {"beta", 1.0}, {"gamma", 1.05}};
    return gate::init_state(c, "d0.jsonl", {});
}

}  // namespace

TEST(Losses, LabelLossByHand) {
    const std::vector<gate::PredictionRecord> r{pred("m", "a", 0.9, 0.5, true), pred("m", "b", 0.5, 0.5, true),
                                                pred("m", "c", 0.2, 0.5, true)};
    EXPECT_NEAR(gate::label_loss(r), -(std::log(0.9) + std::log(0.5) + std::log(0.2)) / 3.0, 1e-12);
    EXPECT_THROW(gate::label_loss({}), af::ValidationError);
}

TEST(Losses, RationaleLossClampsPresence) {
    const std::vector<gate::PredictionRecord> r{pred("m", "a", 1.0, 0.8, true), pred("m", "b", 1.0, 0.8, false),
                                                pred("m", "c", 1.0, 1.0, false)};
    const double g_max = 1.0 - 1e-9;
    const double expected = -(std::log(0.8) + std::log(0.2) + std::log(1.0 - g_max)) / 3.0;
    EXPECT_NEAR(gate::rationale_loss(r), expected, 1e-9);
    EXPECT_TRUE(std::isfinite(gate::rationale_loss(r)));

    const std::vector<gate::PredictionRecord> unresolved{pred("m", "a", 1.0, 0.8, std::nullopt)};
    EXPECT_THROW(gate::rationale_loss(unresolved), af::ValidationError);
}

TEST(Losses, CombinedAndAssumed) {
    EXPECT_DOUBLE_EQ(gate::combined_loss(1.0, 2.0, 0.7), 2.4);
    EXPECT_NEAR(gate::assumed_label_loss(500, 50, 0.7), -(0.1 * std::log(0.7) + 0.9 * std::log(0.3)), 1e-12);
    EXPECT_NEAR(gate::assumed_label_loss(10, 10, 0.7), -std::log(0.7), 1e-12);
    EXPECT_NEAR(gate::assumed_rationale_loss(4, 1, 0.8), -(std::log(0.8) + 3 * std::log(0.2)) / 4, 1e-12);
    EXPECT_THROW(gate::assumed_label_loss(0, 0, 0.7), af::ValidationError);
    EXPECT_THROW(gate::assumed_label_loss(5, 6, 0.7), af::ValidationError);
    EXPECT_THROW(gate::assumed_label_loss(5, 1, 1.0), af::ValidationError);
}

TEST(Losses, WeightedByClassFrequency) {
    const std::vector<gate::PredictionRecord> r{pred("m", "a", 0.9, 0.5, true), pred("m", "b", 0.6, 0.5, true),
                                                pred("m", "c", 0.3, 0.5, false)};
    const std::vector<std::string> classes{"x", "x", "y"};
    // N=3, C=2: w_x = 3/(2*2), w_y = 3/(2*1).
    const double expected = -(0.75 * std::log(0.9) + 0.75 * std::log(0.6) + 1.5 * std::log(0.3)) / 3.0;
    EXPECT_NEAR(gate::weighted_label_loss(r, classes), expected, 1e-12);

    const std::vector<std::string> one_class{"x", "x", "x"};
    EXPECT_NEAR(gate::weighted_label_loss(r, one_class), gate::label_loss(r), 1e-12);

    const auto by_verdict = gate::weighting_classes(r, gate::Weighting::ByValidRationaleCount);
    EXPECT_EQ(by_verdict, (std::vector<std::string>{"valid", "valid", "invalid"}));
    EXPECT_THROW(gate::weighting_classes(r, gate::Weighting::ByLabelCount, {}), af::ValidationError);
    EXPECT_EQ(gate::parse_weighting("by-label-count"), gate::Weighting::ByLabelCount);
    EXPECT_EQ(gate::to_string(gate::Weighting::ByValidRationaleCount), "by-valid-rationale-count");
}

TEST(Losses, ExactReportCounts) {
    const std::vector<gate::PredictionRecord> r{pred("m", "a", 0.5, 0.9, true), pred("m", "b", 0.49, 0.1, false),
                                                pred("m", "c", 0.8, 0.7, true)};
    const auto rep = gate::exact_report("m", 2, r, {});
    EXPECT_EQ(rep.n, 3);
    EXPECT_EQ(rep.n_correct, 2);
    EXPECT_EQ(rep.n_incorrect, 1);
    EXPECT_DOUBLE_EQ(rep.lambda, 0.7);
    EXPECT_NEAR(rep.combined, rep.label_loss + 0.7 * rep.rationale_loss, 1e-12);
    EXPECT_EQ(gate::loss_report_from_json(gate::to_json(rep), "t"), rep);

    const std::vector<gate::PredictionRecord> mixed{pred("m", "a", 0.5, 0.9, true), pred("n", "b", 0.5, 0.9, true)};
    EXPECT_THROW(gate::exact_report("m", 0, mixed, {}), af::ValidationError);

    auto j = gate::to_json(rep);
    j["N_co"] = 3;
    EXPECT_THROW(gate::loss_report_from_json(j, "t"), af::Error);
}

TEST(Classify, BoundariesAreInclusive) {
    const gate::GateConfig c;
    EXPECT_EQ(gate::classify_model(0.84, c), gate::Verdict::WellOptimized);
    EXPECT_EQ(gate::classify_model(0.8400001, c), gate::Verdict::Acceptable);
    EXPECT_EQ(gate::classify_model(1.74, c), gate::Verdict::Acceptable);
    EXPECT_EQ(gate::classify_model(1.7400001, c), gate::Verdict::Unsuitable);
}

TEST(Classify, InitialFilterIsStrict) {
    const std::vector<gate::Candidate> c{{"a", 1.11}, {"b", 1.12}, {"c", 0.5}, {"d", 1.2}};
    EXPECT_EQ(gate::initial_filter(c, 1.12), (std::vector<std::string>{"a", "c"}));
}

TEST(Config, JsonKeysDefaultsAndValidation) {
    const auto c = gate::gate_config_from_json(af::Json::parse(R"({"L_l": 0.5, "revision_count": 3})"), "t");
    EXPECT_DOUBLE_EQ(c.l_l, 0.5);
    EXPECT_DOUBLE_EQ(c.l_h, 1.74);
    EXPECT_EQ(c.revision_count, 3u);
    EXPECT_EQ(gate::gate_config_from_json(gate::to_json(c), "t"), c);

    gate::GateConfig bad;
    bad.l_l = 2.0;
    EXPECT_THROW(gate::validate(bad), af::ConfigError);
    bad = {};
    bad.max_iterations = 0;
    EXPECT_THROW(gate::validate(bad), af::ConfigError);
}

TEST(Predictions, FileRoundTripWithUnresolvedVerdict) {
    TempDir dir;
    auto a = pred("m", "e1", 0.75, 0.25, std::nullopt);
    a.predicted_labels = {{"reentrancy", 0.75}, {"secure", 0.25}};
    a.raw_report = "{\"findings\":[]}";
    const std::vector<gate::PredictionRecord> recs{a, pred("m", "e2", 1.0, 0.0, false)};
    gate::write_predictions(recs, dir / "p.jsonl");
    EXPECT_EQ(gate::read_predictions(dir / "p.jsonl"), recs);

    af::testing::write_file(dir / "bad.jsonl",
                            R"({"schema":"pred/1","model_id":"m","entry_id":"e","label_probability":0,"rationale_presence":0.5})"
                            "\n");
    EXPECT_THROW(gate::read_predictions(dir / "bad.jsonl"), af::Error);
    af::testing::write_file(dir / "noschema.jsonl",
                            R"({"model_id":"m","entry_id":"e","label_probability":0.5,"rationale_presence":0.5})" "\n");
    EXPECT_THROW(gate::read_predictions(dir / "noschema.jsonl"), af::FormatError);
}

TEST(Predictions, ResolveVerdictsAgainstDataset) {
    const auto v = af::testing::vulnerable_entry(
        "v", af::testing::bank_contract("B"), {af::testing::annotation("reentrancy", af::testing::kBankVulnSpan)});
    const auto s = af::testing::secure_entry("s", af::testing::fixed_bank_contract("B"));
    const std::vector<af::corpus::DatasetEntry> data{v, s};
    std::vector<gate::PredictionRecord> recs{pred("m", "v", 0.9, 0.9, std::nullopt),
                                             pred("m", "s", 0.9, 0.9, std::nullopt),
                                             pred("m", "v", 0.9, 0.9, false)};
    recs[0].raw_report = R"({"findings":[{"label_id":"reentrancy","span":[13,15]}]})";
    recs[1].raw_report = R"({"findings":[{"label_id":"reentrancy","span":[13,15]}]})";
    recs[2].raw_report = recs[0].raw_report;
    gate::resolve_rationale_correctness(recs, data);
    EXPECT_EQ(recs[0].rationale_correct, true);
    EXPECT_EQ(recs[1].rationale_correct, false);
    EXPECT_EQ(recs[2].rationale_correct, false);  // explicit verdicts are kept

    std::vector<gate::PredictionRecord> ghost{pred("m", "ghost", 0.9, 0.9, std::nullopt)};
    EXPECT_THROW(gate::resolve_rationale_correctness(ghost, data), af::ValidationError);
    EXPECT_EQ(gate::true_labels(data).at("s"), "secure");
    EXPECT_EQ(gate::true_labels(data).at("v"), "reentrancy");
}

TEST(State, InitAppliesFilter) {
    const std::vector<gate::Candidate> c{{"a", 1.0}, {"b", 1.2}};
    const auto s = gate::init_state(c, "d0", {});
    EXPECT_EQ(s.k, 0);
    EXPECT_EQ(s.roster[0].status, gate::ModelStatus::Selected);
    EXPECT_EQ(s.roster[1].status, gate::ModelStatus::Removed);
    EXPECT_EQ(s.active_models(), (std::vector<std::string>{"a"}));
    EXPECT_EQ(s.outcome, gate::Outcome::Running);

    const std::vector<gate::Candidate> none{{"x", 2.0}};
    EXPECT_EQ(gate::init_state(none, "d0", {}).outcome, gate::Outcome::Exhausted);
}

TEST(State, JsonAndFileRoundTrip) {
    TempDir dir;
    auto s = three_model_state();
    s = gate::gate_step(s, std::vector{report("alpha", 0, 1.5), report("beta", 0, 1.9), report("gamma", 0, 1.6)},
                        std::vector{pred("alpha", "e1", 0.3, 0.5, true), pred("gamma", "e2", 0.4, 0.5, true)})
            .state;
    gate::save_state(s, dir / "state.json");
    EXPECT_EQ(gate::load_state(dir / "state.json"), s);
    EXPECT_EQ(gate::gate_state_from_json(gate::to_json(s), "t"), s);

    auto j = gate::to_json(s);
    j["dataset_chain"].push_back("extra");
    EXPECT_THROW(gate::gate_state_from_json(j, "t"), af::Error);
}

TEST(Step, FinishStopsAtFirstWellOptimizedModel) {
    const auto s = three_model_state();
    const auto r = gate::gate_step(
        s, std::vector{report("alpha", 0, 1.9), report("beta", 0, 0.84), report("gamma", 0, 0.5)});
    EXPECT_EQ(r.state.outcome, gate::Outcome::Finished);
    EXPECT_EQ(r.state.d_train, "d0.jsonl");
    ASSERT_EQ(r.actions.size(), 2u);
    EXPECT_EQ(r.actions[0], (gate::Action{gate::Action::Kind::Remove, "alpha", 1.9}));
    EXPECT_EQ(r.actions[1], (gate::Action{gate::Action::Kind::Finish, "beta", 0.84}));
    EXPECT_EQ(r.state.roster[2].status, gate::ModelStatus::Selected);
    EXPECT_THROW(gate::gate_step(r.state, {}), af::ValidationError);
}

TEST(Step, RevisionQueueRanksWorstEntries) {
    auto s = three_model_state();
    s.config.revision_count = 2;
    const std::vector<gate::PredictionRecord> preds{
        pred("alpha", "e1", 0.9, 0.5, true), pred("alpha", "e2", 0.2, 0.5, true), pred("alpha", "e3", 0.6, 0.5, true),
        pred("beta", "e3", 0.1, 0.5, true),  // beta is removed this round, so it does not rank entries
        pred("gamma", "e1", 0.4, 0.5, true), pred("gamma", "e4", 0.95, 0.5, true),
    };
    const auto r = gate::gate_step(
        s, std::vector{report("alpha", 0, 1.2), report("beta", 0, 2.0), report("gamma", 0, 1.7)}, preds);
    EXPECT_EQ(r.state.outcome, gate::Outcome::Running);
    EXPECT_TRUE(r.state.awaiting_revision);
    EXPECT_EQ(r.state.revision_queue, (std::vector<std::string>{"e2", "e1"}));
    EXPECT_EQ(r.state.roster[1].status, gate::ModelStatus::Removed);
    EXPECT_EQ(r.state.roster[0].status, gate::ModelStatus::FineTuned);
    EXPECT_THROW(gate::gate_step(r.state, std::vector{report("alpha", 0, 1.0), report("gamma", 0, 1.0)}),
                 af::ValidationError);
}

TEST(Step, RevisionFractionRoundsUp) {
    const std::vector<gate::Candidate> c{{"m", 1.0}};
    const auto s = gate::init_state(c, "d0", {});
    std::vector<gate::PredictionRecord> preds;
    for (int i = 0; i < 11; ++i) preds.push_back(pred("m", "e" + std::to_string(i), 0.1 + 0.05 * i, 0.5, true));
    const auto r = gate::gate_step(s, std::vector{report("m", 0, 1.0)}, preds);
    EXPECT_EQ(r.state.revision_queue, (std::vector<std::string>{"e0", "e1"}));
    const auto r40 = gate::gate_step(s, std::vector{report("m", 0, 1.0)}, preds, 40);
    EXPECT_EQ(r40.state.revision_queue.size(), 4u);
}

TEST(Step, InputErrors) {
    const auto s = three_model_state();
    const auto all = [](int k) {
        return std::vector{report("alpha", k, 1.0), report("beta", k, 1.0), report("gamma", k, 1.0)};
    };
    EXPECT_NO_THROW(gate::gate_step(s, all(0)));
    EXPECT_THROW(gate::gate_step(s, all(1)), af::ValidationError);
    auto missing = all(0);
    missing.pop_back();
    EXPECT_THROW(gate::gate_step(s, missing), af::ValidationError);
    auto dup = all(0);
    dup.push_back(report("alpha", 0, 1.0));
    EXPECT_THROW(gate::gate_step(s, dup), af::ValidationError);
    auto unknown = all(0);
    unknown.push_back(report("delta", 0, 1.0));
    EXPECT_THROW(gate::gate_step(s, unknown), af::ValidationError);

    const std::vector<gate::Candidate> c{{"a", 1.0}, {"b", 1.5}};
    const auto s2 = gate::init_state(c, "d0", {});
    EXPECT_THROW(gate::gate_step(s2, std::vector{report("a", 0, 1.0), report("b", 0, 1.0)}), af::ValidationError);
}

TEST(Step, ExhaustsWhenAllRemovedOrAtIterationCap) {
    const auto s = three_model_state();
    const auto removed =
        gate::gate_step(s, std::vector{report("alpha", 0, 1.8), report("beta", 0, 1.9), report("gamma", 0, 2.0)});
    EXPECT_EQ(removed.state.outcome, gate::Outcome::Exhausted);
    EXPECT_EQ(removed.actions.back().kind, gate::Action::Kind::Exhaust);

    gate::GateConfig cfg;
    cfg.max_iterations = 2;
    const std::vector<gate::Candidate> c{{"m", 1.0}};
    auto st = gate::init_state(c, "d0", cfg);
    const auto data = std::vector{af::testing::secure_entry("e0", af::testing::fixed_bank_contract("B"))};
    const std::vector<gate::PredictionRecord> preds{pred("m", "e0", 0.3, 0.5, true)};
    st = gate::gate_step(st, std::vector{report("m", 0, 1.0)}, preds).state;
    ASSERT_TRUE(st.awaiting_revision);
    gate::apply_revisions(st, data, {}, "d1");
    const auto last = gate::gate_step(st, std::vector{report("m", 1, 1.0)}, preds);
    EXPECT_EQ(last.state.outcome, gate::Outcome::Exhausted);
    EXPECT_TRUE(last.state.revision_queue.empty());
}

TEST(Revisions, ExportImportRoundTrip) {
    TempDir dir;
    const std::vector<af::corpus::DatasetEntry> d0{
        af::testing::vulnerable_entry("v", af::testing::bank_contract("A"),
                                      {af::testing::annotation("reentrancy", af::testing::kBankVulnSpan)}),
        af::testing::secure_entry("s", af::testing::fixed_bank_contract("A")),
        af::testing::secure_entry("t", af::testing::fixed_bank_contract("T")),
    };
    const std::vector<gate::Candidate> c{{"m", 1.0}, {"n", 1.0}};
    auto st = gate::init_state(c, "d0", {});
    st.config.revision_count = 2;
    const std::vector<gate::PredictionRecord> preds{pred("m", "v", 0.3, 0.5, true), pred("n", "v", 0.2, 0.5, true),
                                                    pred("m", "s", 0.4, 0.5, true), pred("m", "t", 0.99, 0.5, true)};
    st = gate::gate_step(st, std::vector{report("m", 0, 1.0), report("n", 0, 1.2)}, preds).state;
    ASSERT_EQ(st.revision_queue, (std::vector<std::string>{"v", "s"}));

    auto exported = gate::build_revision_export(st, d0, preds);
    ASSERT_EQ(exported.size(), 2u);
    EXPECT_EQ(exported[0].evidence.front().model_id, "n");
    gate::write_revisions(exported, dir / "rev.jsonl");
    auto back = gate::read_revisions(dir / "rev.jsonl");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].entry, exported[0].entry);
    EXPECT_EQ(back[0].evidence, exported[0].evidence);

    back[0].entry.annotations[0].rationale = "revised by a reviewer";
    back[1].drop = true;
    back.push_back({af::testing::secure_entry("new", af::testing::fixed_bank_contract("N")), {}, false});
    const auto result = gate::apply_revisions(st, d0, back, "d1");
    EXPECT_EQ(result.changed_ids, (std::vector<std::string>{"v"}));
    EXPECT_EQ(result.dropped_ids, (std::vector<std::string>{"s"}));
    EXPECT_EQ(result.added_ids, (std::vector<std::string>{"new"}));
    ASSERT_EQ(result.dataset.size(), 3u);
    for (const auto& e : result.dataset) EXPECT_EQ(e.dataset_version, 1);
    EXPECT_EQ(st.k, 1);
    EXPECT_EQ(st.dataset_chain, (std::vector<std::string>{"d0", "d1"}));
    EXPECT_FALSE(st.awaiting_revision);
    EXPECT_EQ(st.roster[0].status, gate::ModelStatus::Selected);

    EXPECT_THROW(gate::apply_revisions(st, result.dataset, {}, "d2"), af::ValidationError);
}

TEST(Revisions, DuplicateIdsRejected) {
    const std::vector<gate::Candidate> c{{"m", 1.0}};
    auto st = gate::init_state(c, "d0", {});
    const std::vector<gate::PredictionRecord> preds{pred("m", "s", 0.3, 0.5, true)};
    st = gate::gate_step(st, std::vector{report("m", 0, 1.0)}, preds).state;
    const auto e = af::testing::secure_entry("s", af::testing::fixed_bank_contract("A"));
    const std::vector<af::corpus::DatasetEntry> d0{e};
    const std::vector<gate::RevisionRecord> twice{{e, {}, false}, {e, {}, false}};
    EXPECT_THROW(gate::apply_revisions(st, d0, twice, "d1"), af::ValidationError);
}
