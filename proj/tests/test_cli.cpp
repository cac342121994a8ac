#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <unistd.h>
#include <fstream>
#include <sstream>

#include "cfope/dataset_io.hpp"
#include "cfope/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include "support/test_util.hpp"

using namespace cfope;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("cfope_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

ExperimentConfig small_config(const fs::path& out_dir, std::size_t n_patients = 240) {
    ExperimentConfig config;
    config.task = Task::Potassium;
    config.split = SplitKind::Dosage;
    config.simulate = SimConfig::defaults(Task::Potassium);
    config.simulate->n_patients = n_patients;
    config.simulate->seed = 7;
    config.annotator.kind = AnnotatorKind::Oracle;
    config.schedule = {30, 60};
    config.n_boot = 25;
    config.entropy_step = 20;
    config.seed = 7;
    config.out_dir = out_dir.string();
    return config;
}

}  // namespace

TEST_CASE("cmd_simulate writes the cohort CSV and split manifest deterministically") {
    TempDir dir("simulate");
    ExperimentConfig config = small_config(dir.path);
    config.simulate = SimConfig::defaults(Task::Potassium);  // full 1622-patient default
    config.simulate->seed = 7;

    const auto out = cmd_simulate(config);
    CHECK(out.cohort.size() == 1622);
    const std::string csv = slurp(out.csv_path);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1623);  // header + rows
    CHECK(csv.find("\r") == std::string::npos);
    CHECK(csv.substr(0, csv.find('\n')) == cohort_csv_header());

    const auto rerun = cmd_simulate(config);
    CHECK(slurp(rerun.csv_path) == csv);  // byte-identical

    const std::string manifest = slurp(out.manifest_path);
    CHECK(manifest.find("\"split\": \"dosage\"") != std::string::npos);
    CHECK(manifest.find("dosage_threshold") != std::string::npos);
}

TEST_CASE("cohort CSV round-trips through read_cohort_csv") {
    TempDir dir("roundtrip");
    const auto out = cmd_simulate(small_config(dir.path));
    std::ifstream in(out.csv_path);
    const BehaviorDataset parsed = read_cohort_csv(in, Task::Potassium);
    REQUIRE(parsed.size() == out.cohort.size());
    CHECK(cohort_to_csv(parsed) == cohort_to_csv(out.cohort));
}

TEST_CASE("invalid configs fail naming the field") {
    TempDir dir("invalid");
    ExperimentConfig config = small_config(dir.path);
    config.simulate->n_patients = 0;
    CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("n_patients"), ConfigError);

    ExperimentConfig both = small_config(dir.path);
    both.csv_path = "also.csv";
    CHECK_THROWS_WITH_AS(both.validate(), doctest::Contains("data"), ConfigError);

    ExperimentConfig neither = small_config(dir.path);
    neither.simulate.reset();
    CHECK_THROWS_WITH_AS(neither.validate(), doctest::Contains("data"), ConfigError);

    ExperimentConfig oracle_csv = small_config(dir.path);
    oracle_csv.simulate.reset();
    oracle_csv.csv_path = "x.csv";
    CHECK_THROWS_WITH_AS(oracle_csv.validate(), doctest::Contains("annotator.kind"), ConfigError);

    ExperimentConfig bad_boot = small_config(dir.path);
    bad_boot.n_boot = 0;
    CHECK_THROWS_WITH_AS(bad_boot.validate(), doctest::Contains("n_boot"), ConfigError);
}

TEST_CASE("experiment config round-trips through JSON losslessly") {
    TempDir dir("config");
    ExperimentConfig config = small_config(dir.path);
    config.annotator.kind = AnnotatorKind::Noisy;
    config.annotator.noise_sd = 0.45;
    config.aggregation = AggregationMode::Average;
    config.timestamp = "2026-02-03T04:05:06Z";
    config.factual_eval_n = 12;

    const auto j = config.to_json();
    const ExperimentConfig restored = ExperimentConfig::from_json(j);
    CHECK(restored.to_json() == j);

    ExperimentConfig llm = small_config(dir.path);
    llm.annotator.kind = AnnotatorKind::Llm;
    llm.annotator.endpoint.base_url = "http://127.0.0.1:9999";
    llm.annotator.endpoint.model_name = "m";
    llm.annotator.endpoint.temperature = std::nullopt;
    CHECK(ExperimentConfig::from_json(llm.to_json()).to_json() == llm.to_json());
}

TEST_CASE("cmd_annotate with the oracle matches simulator rewards and honors the budget") {
    TempDir dir("annotate");
    ExperimentConfig config = small_config(dir.path);

    const auto out = cmd_annotate(config, 40);
    CHECK(out.n_failed == 0);
    REQUIRE(out.annotations.size() == 40);

    const LoadedExperiment loaded = load_experiment(config);
    for (const auto& a : out.annotations.items) {
        // zero-noise oracle: predicted lab is the clamped outcome-model value
        const Sample* sample = nullptr;
        for (const auto& s : loaded.split.behavior.samples)
            if (s.id == a.sample_id) sample = &s;
        REQUIRE(sample != nullptr);
        const double dose = loaded.split.behavior.actions.dosages[a.action_index];
        const double expected =
            loaded.sim->lab_clamp.apply(outcome_model(sample->context, dose, *loaded.sim));
        CHECK(a.predicted_lab == expected);
        CHECK(a.reward == reward_of_lab(expected, loaded.split.behavior.reward_spec));
        CHECK(a.created_at.empty());  // no wall clock unless pinned
    }

    SUBCASE("rerun is byte-identical") {
        const std::string first = slurp(out.jsonl_path);
        const auto again = cmd_annotate(config, 40);
        CHECK(slurp(again.jsonl_path) == first);
    }
    SUBCASE("budget violations cite the formula") {
        const std::size_t budget =
            annotation_budget(loaded.split.behavior.size(), loaded.split.behavior.actions);
        CHECK_THROWS_WITH_AS((void)cmd_annotate(config, budget + 1),
                             doctest::Contains("N*(|A|-1)"), std::invalid_argument);
    }
    SUBCASE("pinned timestamps land in every record") {
        ExperimentConfig pinned = config;
        pinned.timestamp = "2026-01-02T03:04:05Z";
        const auto stamped = cmd_annotate(pinned, 10);
        for (const auto& a : stamped.annotations.items)
            CHECK(a.created_at == "2026-01-02T03:04:05Z");
    }
}

TEST_CASE("cmd_annotate against the bundled mock server matches the golden JSONL") {
    TempDir dir("mock_golden");
    ExperimentConfig config = small_config(dir.path, 60);
    config.annotator.kind = AnnotatorKind::Mock;
    config.timestamp = "2026-01-01T00:00:00Z";
    config.annotator.domain_text = "Domain knowledge placeholder.";

    const auto out = cmd_annotate(config, 12);
    CHECK(out.n_failed == 0);
    const std::string produced = slurp(out.jsonl_path);
    const std::string golden = slurp(fs::path(CFOPE_FIXTURE_DIR) / "mock_annotations.jsonl");
    CHECK(produced == golden);
}

TEST_CASE("cache replay reproduces the mock run with the network disabled") {
    TempDir dir("replay");
    ExperimentConfig config = small_config(dir.path, 60);
    config.annotator.kind = AnnotatorKind::Mock;
    config.annotator.cache_dir = (dir.path / "cache").string();
    config.timestamp = "";  // created_at comes from the cache entries

    const auto first = cmd_annotate(config, 15);
    CHECK(first.n_failed == 0);
    const std::string bytes = slurp(first.jsonl_path);

    // Same cache, but an endpoint with nothing listening: every completion
    // must come from the cache.
    ExperimentConfig offline = config;
    offline.annotator.kind = AnnotatorKind::Llm;
    offline.annotator.endpoint.base_url = "http://127.0.0.1:1";
    offline.annotator.endpoint.model_name = "mock-lab";
    offline.annotator.endpoint.temperature = 0.0;
    offline.annotator.endpoint.max_retries = 0;
    offline.annotator.endpoint.timeout_seconds = 0.2;
    offline.out_dir = (dir.path / "offline").string();

    const auto replay = cmd_annotate(offline, 15);
    CHECK(replay.n_failed == 0);
    CHECK(slurp(replay.jsonl_path) == bytes);
}

TEST_CASE("cmd_evaluate produces the full report and is idempotent") {
    TempDir dir("evaluate");
    ExperimentConfig config = small_config(dir.path);
    config.factual_eval_n = 30;

    const auto out = cmd_evaluate(config);
    const EvalReport& report = out.report;
    CHECK(report.truth_source == "oracle");
    CHECK(report.schedule.size() == 2);
    CHECK(report.schedule[1].dm_plus.rmse < report.dm.rmse);  // dosage split improves
    CHECK(report.t_tests.size() == 2);
    CHECK(report.entropy.points.size() >= 2);
    CHECK(report.annotator_f1.has_value());
    CHECK(*report.annotator_f1 > 0.0);
    CHECK_FALSE(report.age_strata.empty());
    CHECK_FALSE(report.gender_strata.empty());

    for (const char* artifact : {"report.json", "rmse_vs_count.csv", "entropy_curve.csv",
                                 "t_tests.csv", "rmse_vs_count.svg", "entropy_curve.svg",
                                 "annotations.jsonl"}) {
        CHECK(fs::exists(dir.path / artifact));
    }

    const std::string report_bytes = slurp(out.report_path);
    const std::string annotation_bytes = slurp(dir.path / "annotations.jsonl");
    const auto rerun = cmd_evaluate(config);
    CHECK(slurp(rerun.report_path) == report_bytes);
    CHECK(slurp(dir.path / "annotations.jsonl") == annotation_bytes);

    SUBCASE("report summary renders") {
        const std::string summary = cmd_report(config);
        CHECK(summary.find("DM RMSE") != std::string::npos);
        CHECK(summary.find("dosage") != std::string::npos);
    }
}

TEST_CASE("gender split evaluation reports the null case without failing") {
    TempDir dir("gender");
    ExperimentConfig config = small_config(dir.path, 400);
    config.split = SplitKind::Gender;
    config.schedule = {40};

    const auto out = cmd_evaluate(config);
    CHECK(out.report.dm.rmse < 0.02);
    CHECK(out.report.t_tests.size() == 1);  // reported either way
}

TEST_CASE("evaluation can aggregate existing annotation files") {
    TempDir dir("aggregate");
    ExperimentConfig base = small_config(dir.path);

    ExperimentConfig source_a = base;
    source_a.annotator.kind = AnnotatorKind::Noisy;
    source_a.annotator.noise_sd = 0.2;
    source_a.out_dir = (dir.path / "a").string();
    const auto run_a = cmd_annotate(source_a, 60);

    ExperimentConfig source_b = source_a;
    source_b.seed = 8;  // different oracle noise stream
    source_b.out_dir = (dir.path / "b").string();
    const auto run_b = cmd_annotate(source_b, 60);

    ExperimentConfig eval = base;
    eval.annotation_files = {run_a.jsonl_path.string(), run_b.jsonl_path.string()};
    eval.aggregation = AggregationMode::Pool;
    eval.out_dir = (dir.path / "eval").string();
    const auto out = cmd_evaluate(eval);
    CHECK(out.report.schedule.back().effective == 60);

    eval.aggregation = AggregationMode::Average;
    eval.out_dir = (dir.path / "eval_avg").string();
    const auto averaged = cmd_evaluate(eval);
    CHECK(averaged.report.schedule.back().effective == 60);
}

TEST_CASE("cmd_clone_policy writes reloadable policies with accuracies") {
    TempDir dir("clone");
    ExperimentConfig config = small_config(dir.path, 400);
    const auto out = cmd_clone_policy(config);
    CHECK(out.behavior.validation_accuracy > 0.5);
    CHECK(out.target.validation_accuracy > 0.5);
    CHECK(fs::exists(out.behavior_path));
    CHECK(fs::exists(out.target_path));

    std::ifstream in(out.target_path);
    nlohmann::json j;
    in >> j;
    CHECK(j.contains("validation_accuracy"));
    const Policy restored = Policy::from_json(j);
    const auto probs = restored.prob(testutil::make_context());
    double sum = 0.0;
    for (const double p : probs) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("sodium task runs the whole protocol") {
    TempDir dir("sodium");
    ExperimentConfig config;
    config.task = Task::Sodium;
    config.split = SplitKind::Dosage;
    config.simulate = SimConfig::defaults(Task::Sodium);
    config.simulate->n_patients = 260;
    config.simulate->seed = 7;
    config.annotator.kind = AnnotatorKind::Oracle;
    config.schedule = {40};
    config.n_boot = 20;
    config.entropy_step = 20;
    config.seed = 7;
    config.out_dir = (dir.path / "na").string();

    const auto out = cmd_evaluate(config);
    CHECK(out.report.task == "sodium");
    CHECK(out.report.entropy.max_entropy == doctest::Approx(std::log(6.0)));
    CHECK(out.report.schedule.back().dm_plus.rmse < out.report.dm.rmse);
}

TEST_CASE("the d0 ablation flag switches the context distribution") {
    TempDir dir("d0");
    ExperimentConfig config = small_config(dir.path);
    const auto behavior_d0 = cmd_evaluate(config);
    ExperimentConfig ablation = config;
    ablation.use_target_contexts = true;
    ablation.out_dir = (dir.path / "target_d0").string();
    const auto target_d0 = cmd_evaluate(ablation);
    CHECK(behavior_d0.report.truth != target_d0.report.truth);
    CHECK(ExperimentConfig::from_json(ablation.to_json()).use_target_contexts);
}

TEST_CASE("ope binary: exit codes and field-naming config errors") {
    TempDir dir("binary");
    const fs::path cfg = dir.path / "cfg.json";
    {
        ExperimentConfig config = small_config(dir.path / "out", 80);
        std::ofstream out(cfg);
        out << config.to_json().dump(2) << "\n";
    }
    const std::string binary = CFOPE_OPE_BINARY;
    const std::string log = (dir.path / "log.txt").string();

    int rc = std::system((binary + " simulate --config " + cfg.string() + " > " + log + " 2>&1").c_str());
    CHECK(rc == 0);
    CHECK(fs::exists(dir.path / "out" / "cohort.csv"));

    // Invalid config: nonzero exit naming the field.
    const fs::path bad = dir.path / "bad.json";
    {
        ExperimentConfig config = small_config(dir.path / "out2", 80);
        auto j = config.to_json();
        j["data"]["simulate"]["n_patients"] = 0;
        std::ofstream out(bad);
        out << j.dump(2) << "\n";
    }
    rc = std::system((binary + " simulate --config " + bad.string() + " > " + log + " 2>&1").c_str());
    CHECK(rc != 0);
    CHECK(slurp(log).find("n_patients") != std::string::npos);

    rc = std::system((binary + " evaluate --config " + dir.path.string() + "/missing.json > " + log + " 2>&1").c_str());
    CHECK(rc != 0);
}

TEST_CASE("a zero entry in the schedule reduces DM+ to the DM baseline") {
    TempDir dir("zero_schedule");
    ExperimentConfig config = small_config(dir.path);
    config.schedule = {0, 30};
    const auto out = cmd_evaluate(config);
    REQUIRE(out.report.schedule.size() == 2);
    CHECK(out.report.schedule[0].effective == 0);
    CHECK(out.report.schedule[0].dm_plus.rmse == out.report.dm.rmse);  // bit-equal reduction
    CHECK(out.report.schedule[1].effective == 30);
}

TEST_CASE("cmd_entropy_curve writes the table") {
    TempDir dir("entropy");
    ExperimentConfig config = small_config(dir.path);
    const auto out = cmd_entropy_curve(config);
    CHECK(fs::exists(out.csv_path));
    const std::string csv = slurp(out.csv_path);
    CHECK(csv.rfind("annotations,entropy,max_entropy\n", 0) == 0);
    CHECK(out.curve.points.back().count == 60);
}

TEST_CASE("csv ingestion path evaluates with the empirical truth") {
    TempDir dir("ingest");
    ExperimentConfig sim_config = small_config(dir.path, 300);
    const auto simulated = cmd_simulate(sim_config);

    ExperimentConfig config = small_config(dir.path);
    config.simulate.reset();
    config.csv_path = simulated.csv_path.string();
    config.annotator.kind = AnnotatorKind::Mock;
    config.schedule = {20};
    config.out_dir = (dir.path / "ingest_eval").string();

    const auto out = cmd_evaluate(config);
    CHECK(out.report.truth_source == "target_empirical");
    CHECK(out.report.truth == doctest::Approx(out.report.target_empirical_value));
}
