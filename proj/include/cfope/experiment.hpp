// Experiment orchestration: configuration files, the annotator factory, and
// the end-to-end commands behind the CLI subcommands.
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfope/annotate.hpp"
#include "cfope/cohort_sim.hpp"
#include "cfope/eval_harness.hpp"
#include "cfope/mock_lab_server.hpp"
#include "cfope/policy_learn.hpp"

namespace cfope {

class ConfigError : public std::runtime_error {
  public:
    ConfigError(std::string field, const std::string& message)
        : std::runtime_error("config field '" + field + "': " + message),
          field_(std::move(field)) {}

    const std::string& field() const { return field_; }

  private:
    std::string field_;
};

enum class AnnotatorKind { Oracle, Noisy, Llm, Mock };

const char* annotator_kind_name(AnnotatorKind kind);
AnnotatorKind annotator_kind_from_name(const std::string& name);

// Stand-in for the proprietary clinical reference paragraph; callers supply
// their own domain text in production configurations.
extern const char* const kDefaultDomainText;

struct AnnotatorSpec {
    AnnotatorKind kind = AnnotatorKind::Oracle;
    double noise_sd = 0.3;           // noisy oracle only
    LlmEndpointConfig endpoint;      // llm only
    std::string cache_dir;           // llm/mock; defaults to <out_dir>/cache
    std::string domain_text = kDefaultDomainText;
};

struct ExperimentConfig {
    Task task = Task::Potassium;
    SplitKind split = SplitKind::Dosage;
    std::optional<SimConfig> simulate;   // exactly one of simulate / csv_path
    std::optional<std::string> csv_path;
    AnnotatorSpec annotator;
    // Existing JSONL sources; when non-empty, evaluation aggregates these
    // instead of querying the annotator.
    std::vector<std::string> annotation_files;
    AggregationMode aggregation = AggregationMode::Pool;
    // Empirical initial-context distribution for the direct method (and the
    // oracle truth): the behavior side by default, the target side for
    // ablations.
    bool use_target_contexts = false;
    std::vector<std::size_t> schedule = {100, 250, 500};
    int n_boot = 500;
    std::size_t entropy_step = 50;
    // When > 0 (simulate mode), the annotator also predicts this many observed
    // actions for the weighted-F1 and error-stratification tables.
    std::size_t factual_eval_n = 0;
    std::uint64_t seed = 7;
    // Pinned created_at for emitted annotations; empty keeps cache-provided
    // timestamps (LLM) or leaves the field empty (oracle), so reruns are
    // byte-identical.
    std::string timestamp;
    std::string out_dir = "out";

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load_file(const std::filesystem::path& path);
};

nlohmann::ordered_json sim_config_to_json(const SimConfig& config);
SimConfig sim_config_from_json(const nlohmann::json& j, Task task, std::uint64_t default_seed);

// Sub-stream tags for the master seed.
namespace seed_tag {
constexpr std::uint64_t kCloneBehavior = 2;
constexpr std::uint64_t kCloneTarget = 3;
constexpr std::uint64_t kSelect = 4;
constexpr std::uint64_t kOracleNoise = 5;
constexpr std::uint64_t kBootstrap = 6;
}  // namespace seed_tag

struct LoadedExperiment {
    BehaviorDataset cohort;
    CohortSplit split;
    std::optional<SimConfig> sim;
};

LoadedExperiment load_experiment(const ExperimentConfig& config);

/// Owns whatever the annotator needs to stay alive (mock server, client).
struct AnnotatorHandle {
    std::unique_ptr<Annotator> annotator;
    std::shared_ptr<LlmClient> client;
    std::unique_ptr<MockLabServer> server;
    int max_concurrency = 1;
};

AnnotatorHandle make_annotator(const ExperimentConfig& config,
                               const std::optional<SimConfig>& sim);

struct SimulateOutput {
    BehaviorDataset cohort;
    CohortSplit split;
    std::filesystem::path csv_path;
    std::filesystem::path manifest_path;
};

SimulateOutput cmd_simulate(const ExperimentConfig& config);

struct CloneOutput {
    CloneResult behavior;
    CloneResult target;
    std::filesystem::path behavior_path;
    std::filesystem::path target_path;
};

CloneOutput cmd_clone_policy(const ExperimentConfig& config);

struct AnnotateOutput {
    AnnotationSet annotations;
    std::size_t n_requested = 0;
    std::size_t n_failed = 0;
    std::filesystem::path jsonl_path;
};

/// Annotates `count` uniformly selected (sample, unobserved-action) pairs of
/// the behavior side (count = 0 means the largest schedule entry).
AnnotateOutput cmd_annotate(const ExperimentConfig& config, std::size_t count = 0);

struct EvaluateOutput {
    EvalReport report;
    std::filesystem::path report_path;
};

EvaluateOutput cmd_evaluate(const ExperimentConfig& config);

struct EntropyCurveOutput {
    EntropyCurve curve;
    std::filesystem::path csv_path;
};

EntropyCurveOutput cmd_entropy_curve(const ExperimentConfig& config);

/// Renders the human-readable summary of a previously written report.json.
std::string cmd_report(const ExperimentConfig& config);

}  // namespace cfope
