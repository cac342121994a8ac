#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cfope/annotate.hpp"
#include "cfope/format.hpp"
#include "support/test_util.hpp"

using namespace cfope;

namespace {

BehaviorDataset small_cohort(std::size_t n = 40, std::uint64_t seed = 19) {
    SimConfig config = SimConfig::defaults(Task::Potassium);
    config.n_patients = n;
    config.seed = seed;
    return generate_cohort(config);
}

double extract_number_after(const std::string& text, const std::string& marker) {
    const auto at = text.find(marker);
    REQUIRE(at != std::string::npos);
    std::size_t end = at + marker.size();
    while (end < text.size() && text[end] != ' ' && text[end] != '\n') ++end;
    return parse_double(text.substr(at + marker.size(), end - at - marker.size()));
}

}  // namespace

TEST_CASE("annotation budget") {
    CHECK(annotation_budget(100, ActionSpace::for_task(Task::Potassium)) == 300);
    CHECK(annotation_budget(0, ActionSpace::for_task(Task::Potassium)) == 0);
    CHECK(annotation_budget(1187, ActionSpace::for_task(Task::Sodium)) == 5935);
    CHECK(annotation_budget(7, 5) == 28);
    CHECK_THROWS_AS((void)annotation_budget(3, 0), std::invalid_argument);
}

TEST_CASE("select_annotation_targets") {
    const auto cohort = small_cohort();
    const std::size_t budget = annotation_budget(cohort.size(), cohort.actions);

    SUBCASE("the full budget enumerates every unobserved pair exactly once") {
        const auto targets = select_annotation_targets(cohort, budget, 1);
        CHECK(targets.size() == budget);
        std::set<std::pair<std::int64_t, std::size_t>> seen;
        for (const auto& t : targets) {
            CHECK(t.action_index != cohort.samples[t.sample_pos].action_index);
            seen.insert({t.sample_id, t.action_index});
        }
        CHECK(seen.size() == budget);
    }
    SUBCASE("deterministic per seed") {
        const auto a = select_annotation_targets(cohort, budget / 2, 5);
        const auto b = select_annotation_targets(cohort, budget / 2, 5);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].sample_id == b[i].sample_id);
            CHECK(a[i].action_index == b[i].action_index);
        }
        const auto c = select_annotation_targets(cohort, budget / 2, 6);
        bool differs = false;
        for (std::size_t i = 0; i < c.size(); ++i)
            differs = differs || c[i].sample_id != a[i].sample_id ||
                      c[i].action_index != a[i].action_index;
        CHECK(differs);
    }
    SUBCASE("selection frequencies stay within 5% of uniform over pairs") {
        const auto big = small_cohort(500, 23);
        const std::size_t total = annotation_budget(big.size(), big.actions);
        const auto targets = select_annotation_targets(big, total / 2, 9);
        std::map<std::size_t, std::size_t> available, selected;
        for (const auto& s : big.samples) {
            for (std::size_t a = 0; a < big.actions.size(); ++a)
                if (a != s.action_index) available[a] += 1;
        }
        for (const auto& t : targets) selected[t.action_index] += 1;
        for (const auto& [action, avail] : available) {
            const double expected = static_cast<double>(avail) / static_cast<double>(total);
            const double got =
                static_cast<double>(selected[action]) / static_cast<double>(targets.size());
            CHECK(std::abs(got - expected) < 0.05);
        }
    }
    SUBCASE("exceeding the budget names the formula") {
        CHECK_THROWS_WITH_AS((void)select_annotation_targets(cohort, budget + 1, 1),
                             doctest::Contains("N*(|A|-1)"), std::invalid_argument);
    }
}

TEST_CASE("annotation requests carry the task defaults") {
    const auto ctx = testutil::make_context();
    const auto k = AnnotationRequest::for_task(Task::Potassium, ctx, 20.0);
    CHECK(k.infusion_rate == 10.0);
    CHECK(k.horizon_hours == 3.0);
    const auto na = AnnotationRequest::for_task(Task::Sodium, testutil::make_context(126.0), 300.0);
    CHECK(na.infusion_rate == 30.0);
    CHECK_THROWS_AS((void)AnnotationRequest::for_task(Task::Potassium, ctx, 15.0),
                    std::invalid_argument);
}

TEST_CASE("build_prompt") {
    const auto ctx = testutil::make_context(3.1, 1.08);
    const auto request = AnnotationRequest::for_task(Task::Potassium, ctx, 20.0);
    const std::string domain = "Domain knowledge placeholder.";
    const std::string prompt = build_prompt(request, domain);

    SUBCASE("golden fixture comparison") {
        std::ifstream in(std::string(CFOPE_FIXTURE_DIR) + "/prompt_potassium_20meq.txt",
                         std::ios::binary);
        REQUIRE(in.good());
        std::ostringstream golden;
        golden << in.rdbuf();
        CHECK(prompt == golden.str());
    }
    SUBCASE("five sections appear in fixed order") {
        const char* sections[] = {"## Task information", "## Static covariates",
                                  "## Labs and medicines", "## Domain information",
                                  "## Prediction query"};
        std::size_t last = 0;
        for (const char* section : sections) {
            const auto at = prompt.find(section);
            REQUIRE(at != std::string::npos);
            CHECK(at >= last);
            last = at;
        }
        CHECK(prompt.find("four hours prior to treatment") != std::string::npos);
        CHECK(prompt.find("a JSON object containing two keys") != std::string::npos);
    }
    SUBCASE("byte stability") { CHECK(prompt == build_prompt(request, domain)); }
    SUBCASE("two doses differ only in the treatment line") {
        const auto other = AnnotationRequest::for_task(Task::Potassium, ctx, 40.0);
        const std::string prompt_b = build_prompt(other, domain);
        std::istringstream sa(prompt), sb(prompt_b);
        std::string la, lb;
        int differing = 0;
        while (std::getline(sa, la) && std::getline(sb, lb)) {
            if (la != lb) {
                ++differing;
                CHECK(la.find("dose of 20 mEq") != std::string::npos);
                CHECK(lb.find("dose of 40 mEq") != std::string::npos);
            }
        }
        CHECK(differing == 1);
    }
    SUBCASE("task rates: 10 vs 30 mEq/hr") {
        CHECK(prompt.find("rate of 10 mEq/hr") != std::string::npos);
        const auto na_request =
            AnnotationRequest::for_task(Task::Sodium, testutil::make_context(126.0), 300.0);
        const std::string na_prompt = build_prompt(na_request, domain);
        CHECK(na_prompt.find("rate of 30 mEq/hr") != std::string::npos);
        CHECK(na_prompt.find("serum sodium") != std::string::npos);
    }
    SUBCASE("prompt embeds the request numbers (round-trip extraction)") {
        CHECK(extract_number_after(prompt, " dose of ") == request.counterfactual_dose);
        CHECK(extract_number_after(prompt, " rate of ") == request.infusion_rate);
        CHECK(extract_number_after(prompt, "measured ") == request.horizon_hours);
        CHECK(extract_number_after(prompt, "Baseline serum potassium: ") == ctx.baseline_lab);
    }
    SUBCASE("missing features are reported by name") {
        auto broken = ctx;
        broken.respiratory_rate = std::nan("");
        const auto bad = AnnotationRequest::for_task(Task::Potassium, broken, 20.0);
        CHECK_THROWS_WITH_AS((void)build_prompt(bad, domain),
                             doctest::Contains("respiratory_rate"), std::invalid_argument);
    }
}

TEST_CASE("parse_response") {
    SUBCASE("well-formed object") {
        const auto p = parse_response(R"({"predicted_lab": 4.1, "justification": "stable"})",
                                      Task::Potassium);
        CHECK(p.lab == 4.1);
        CHECK(p.justification == "stable");
    }
    SUBCASE("numeric strings are accepted") {
        const auto p = parse_response(R"({"predicted_lab": "4.25", "justification": "j"})",
                                      Task::Potassium);
        CHECK(p.lab == 4.25);
    }
    SUBCASE("fenced object inside explanatory prose") {
        const std::string raw =
            "The patient's level should rise modestly.\n"
            "```json\n{\"predicted_lab\": 4.4, \"justification\": \"dose response\"}\n```\n"
            "Let me know if more detail would help.";
        const auto p = parse_response(raw, Task::Potassium);
        CHECK(p.lab == 4.4);
        CHECK(p.justification == "dose response");
    }
    SUBCASE("bare object embedded mid-sentence, with nested braces in strings") {
        const std::string raw =
            R"(Sure { not json } ... {"note": "a {brace} inside", "predicted_lab": 3.9, "justification": "ok"} trailing)";
        const auto p = parse_response(raw, Task::Potassium);
        CHECK(p.lab == 3.9);
    }
    SUBCASE("out-of-range potassium value") {
        CHECK_THROWS_AS(
            (void)parse_response(R"({"predicted_lab": 0.0, "justification": "x"})", Task::Potassium),
            ParseError);
        try {
            (void)parse_response(R"({"predicted_lab": 0.0, "justification": "x"})", Task::Potassium);
        } catch (const ParseError& e) {
            CHECK(e.kind() == ParseFailure::OutOfRange);
        }
    }
    SUBCASE("missing keys") {
        try {
            (void)parse_response(R"({"justification": "no lab"})", Task::Potassium);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind() == ParseFailure::MissingKey);
        }
        try {
            (void)parse_response(R"({"predicted_lab": 4.0})", Task::Potassium);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind() == ParseFailure::MissingKey);
        }
    }
    SUBCASE("non-numeric lab") {
        try {
            (void)parse_response(R"({"predicted_lab": "high", "justification": "x"})",
                                 Task::Potassium);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind() == ParseFailure::NotANumber);
        }
    }
    SUBCASE("no JSON at all") {
        try {
            (void)parse_response("the level should be around four", Task::Potassium);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.kind() == ParseFailure::MalformedJson);
        }
    }
}

TEST_CASE("oracle annotator") {
    SimConfig config = SimConfig::defaults(Task::Potassium);
    config.seed = 19;
    const auto cohort = small_cohort();

    SUBCASE("zero noise reproduces the outcome model exactly") {
        OracleAnnotator oracle(config, 0.0, 7);
        CHECK(oracle.id() == "oracle");
        const auto& s = cohort.samples[5];
        const auto request = AnnotationRequest::for_task(Task::Potassium, s.context, 40.0);
        const auto r = oracle.predict(request, s.id);
        CHECK(r.lab == config.lab_clamp.apply(outcome_model(s.context, 40.0, config)));
    }
    SUBCASE("noisy draws are keyed by (seed, sample, action)") {
        OracleAnnotator oracle(config, 0.3, 7);
        CHECK(oracle.id() == "noisy-oracle");
        const auto& s = cohort.samples[3];
        const auto request = AnnotationRequest::for_task(Task::Potassium, s.context, 20.0);
        const auto a = oracle.predict(request, s.id);
        const auto b = oracle.predict(request, s.id);
        CHECK(a.lab == b.lab);  // reproducible
        OracleAnnotator other_seed(config, 0.3, 8);
        CHECK(other_seed.predict(request, s.id).lab != a.lab);
    }
    SUBCASE("task mismatch is rejected") {
        OracleAnnotator oracle(config, 0.0, 7);
        const auto request =
            AnnotationRequest::for_task(Task::Sodium, testutil::make_context(126.0), 100.0);
        CHECK_THROWS_AS((void)oracle.predict(request, 0), std::invalid_argument);
    }
}

TEST_CASE("annotate_targets pipeline") {
    const auto cohort = small_cohort();
    SimConfig config = SimConfig::defaults(Task::Potassium);
    config.seed = 19;

    SUBCASE("annotations preserve selection order and satisfy the type invariants") {
        const auto targets = select_annotation_targets(cohort, 60, 3);
        OracleAnnotator oracle(config, 0.2, 11);
        const auto run = annotate_targets(cohort, targets, oracle);
        CHECK(run.n_failed == 0);
        REQUIRE(run.annotations.size() == targets.size());
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const auto& a = run.annotations.items[i];
            CHECK(a.sample_id == targets[i].sample_id);
            CHECK(a.action_index == targets[i].action_index);
            CHECK(a.action_index != cohort.samples[targets[i].sample_pos].action_index);
            CHECK(std::abs(a.reward - reward_of_lab(a.predicted_lab, cohort.reward_spec)) <= 1e-12);
            CHECK(a.source_id == "noisy-oracle");
        }
    }
    SUBCASE("results are order-independent") {
        auto targets = select_annotation_targets(cohort, 50, 3);
        OracleAnnotator oracle(config, 0.4, 11);
        const auto forward = annotate_targets(cohort, targets, oracle);
        std::reverse(targets.begin(), targets.end());
        const auto reversed = annotate_targets(cohort, targets, oracle);
        std::map<std::pair<std::int64_t, std::size_t>, double> expect;
        for (const auto& a : forward.annotations.items)
            expect[{a.sample_id, a.action_index}] = a.predicted_lab;
        for (const auto& a : reversed.annotations.items)
            CHECK(expect.at({a.sample_id, a.action_index}) == a.predicted_lab);
    }
    SUBCASE("failing annotators are dropped and counted") {
        struct Flaky final : Annotator {
            std::string id() const override { return "flaky"; }
            AnnotatorResult predict(const AnnotationRequest& request, std::int64_t sample_id) override {
                if (sample_id % 3 == 0) throw std::runtime_error("scripted failure");
                return {request.context.baseline_lab + 0.5, "ok", "", ""};
            }
        };
        const auto targets = select_annotation_targets(cohort, 30, 5);
        std::size_t expected_failures = 0;
        for (const auto& t : targets) expected_failures += t.sample_id % 3 == 0 ? 1 : 0;
        Flaky flaky;
        const auto run = annotate_targets(cohort, targets, flaky);
        CHECK(run.n_failed == expected_failures);
        CHECK(run.annotations.size() == targets.size() - expected_failures);
    }
    SUBCASE("targets at observed actions are rejected") {
        std::vector<AnnotationTarget> bad{{cohort.samples[0].id, 0, cohort.samples[0].action_index}};
        OracleAnnotator oracle(config, 0.0, 1);
        CHECK_THROWS_AS((void)annotate_targets(cohort, bad, oracle), std::invalid_argument);
    }
}

TEST_CASE("aggregate_sources") {
    const auto cohort = small_cohort();
    SimConfig config = SimConfig::defaults(Task::Potassium);
    config.seed = 19;
    const auto targets =
        select_annotation_targets(cohort, annotation_budget(cohort.size(), cohort.actions), 2);
    OracleAnnotator first(config, 0.3, 100, "source-a");
    OracleAnnotator second(config, 0.3, 200, "source-b");
    const auto run_a = annotate_targets(cohort, targets, first);
    const auto run_b = annotate_targets(cohort, targets, second);
    const std::vector<AnnotationSet> sources{run_a.annotations, run_b.annotations};

    SUBCASE("one source is an identity for both modes") {
        const std::vector<AnnotationSet> one{run_a.annotations};
        const auto pooled = aggregate_sources(one, AggregationMode::Pool);
        CHECK(pooled.size() == run_a.annotations.size());
        for (std::size_t i = 0; i < pooled.size(); ++i)
            CHECK(pooled.items[i].predicted_lab == run_a.annotations.items[i].predicted_lab);
        const auto averaged = aggregate_sources(one, AggregationMode::Average);
        CHECK(averaged.size() == run_a.annotations.size());
        std::map<std::pair<std::int64_t, std::size_t>, double> labs;
        for (const auto& a : run_a.annotations.items)
            labs[{a.sample_id, a.action_index}] = a.predicted_lab;
        for (const auto& a : averaged.items)
            CHECK(a.predicted_lab == labs.at({a.sample_id, a.action_index}));
    }
    SUBCASE("pooling two full budgets doubles the row count and keeps rewards bit-exact") {
        const auto pooled = aggregate_sources(sources, AggregationMode::Pool);
        CHECK(pooled.size() == 2 * annotation_budget(cohort.size(), cohort.actions));
        for (std::size_t i = 0; i < run_a.annotations.size(); ++i)
            CHECK(pooled.items[i].reward == run_a.annotations.items[i].reward);
        for (std::size_t i = 0; i < run_b.annotations.size(); ++i)
            CHECK(pooled.items[run_a.annotations.size() + i].reward ==
                  run_b.annotations.items[i].reward);
    }
    SUBCASE("averaging keeps one row per pair with the mean lab and recomputed reward") {
        const auto averaged = aggregate_sources(sources, AggregationMode::Average);
        CHECK(averaged.size() == annotation_budget(cohort.size(), cohort.actions));
        std::map<std::pair<std::int64_t, std::size_t>, std::pair<double, double>> by_key;
        for (const auto& a : run_a.annotations.items)
            by_key[{a.sample_id, a.action_index}].first = a.predicted_lab;
        for (const auto& a : run_b.annotations.items)
            by_key[{a.sample_id, a.action_index}].second = a.predicted_lab;
        for (const auto& a : averaged.items) {
            const auto [la, lb] = by_key.at({a.sample_id, a.action_index});
            CHECK(std::abs(a.predicted_lab - 0.5 * (la + lb)) <= 1e-12);
            CHECK(std::abs(a.reward - reward_of_lab(a.predicted_lab, cohort.reward_spec)) <= 1e-12);
        }
    }
    SUBCASE("two-source mean example: labs 4.0 and 4.4 average to 4.2") {
        AnnotationSet sa, sb;
        sa.task = sb.task = Task::Potassium;
        sa.items.push_back(make_annotation(1, 2, 4.0, cohort.reward_spec, "a", ""));
        sb.items.push_back(make_annotation(1, 2, 4.4, cohort.reward_spec, "b", ""));
        const std::vector<AnnotationSet> two{sa, sb};
        const auto merged = aggregate_sources(two, AggregationMode::Average);
        REQUIRE(merged.size() == 1);
        CHECK(merged.items[0].predicted_lab == doctest::Approx(4.2).epsilon(1e-12));
        CHECK(merged.items[0].reward ==
              doctest::Approx(reward_of_lab(4.2, cohort.reward_spec)).epsilon(1e-12));

        const auto reward_avg = aggregate_sources(two, AggregationMode::Average, true);
        CHECK(reward_avg.items[0].reward ==
              doctest::Approx(0.5 * (reward_of_lab(4.0, cohort.reward_spec) +
                                     reward_of_lab(4.4, cohort.reward_spec)))
                  .epsilon(1e-12));
    }
    SUBCASE("mixed tasks are rejected") {
        AnnotationSet sodium;
        sodium.task = Task::Sodium;
        const std::vector<AnnotationSet> mixed{run_a.annotations, sodium};
        CHECK_THROWS_AS((void)aggregate_sources(mixed, AggregationMode::Pool),
                        std::invalid_argument);
    }
}

TEST_CASE("annotations JSONL round-trip") {
    const auto cohort = small_cohort();
    SimConfig config = SimConfig::defaults(Task::Potassium);
    config.seed = 19;
    OracleAnnotator oracle(config, 0.25, 3);
    const auto targets = select_annotation_targets(cohort, 25, 4);
    auto run = annotate_targets(cohort, targets, oracle);
    run.annotations.items[0].created_at = "2026-01-01T00:00:00Z";
    run.annotations.items[0].prompt_sha256 = "deadbeef";

    const std::string text = annotations_to_jsonl(run.annotations);
    std::istringstream in(text);
    const AnnotationSet parsed = read_annotations_jsonl(in, Task::Potassium);
    REQUIRE(parsed.size() == run.annotations.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        const auto& a = parsed.items[i];
        const auto& b = run.annotations.items[i];
        CHECK(a.sample_id == b.sample_id);
        CHECK(a.action_index == b.action_index);
        CHECK(a.predicted_lab == b.predicted_lab);
        CHECK(a.reward == b.reward);
        CHECK(a.source_id == b.source_id);
        CHECK(a.created_at == b.created_at);
        CHECK(a.prompt_sha256 == b.prompt_sha256);
    }
    CHECK(annotations_to_jsonl(parsed) == text);

    std::istringstream bad("not json\n");
    CHECK_THROWS_AS((void)read_annotations_jsonl(bad, Task::Potassium), std::invalid_argument);
}
