// The experimental protocol: bootstrap RMSE against ground truth, paired
// significance tests, weighted F1 over lab categories, action-distribution
// entropy, error stratification, and the serialized evaluation report.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cfope/estimators.hpp"

namespace cfope {

/// sqrt(mean((estimate - truth)^2)).
double rmse(std::span<const double> estimates, double truth);

struct BootstrapResult {
    std::vector<double> estimates;   // one per replicate
    std::vector<double> abs_errors;  // |estimate - truth|
    double rmse = 0.0;
    double standard_error = 0.0;  // sd(abs_errors) / sqrt(n_boot)
};

struct RmseSummary {
    double rmse = 0.0;
    double standard_error = 0.0;
    double bar_lo = 0.0;  // rmse - se, truncated at 0
    double bar_hi = 0.0;
};

RmseSummary summarize(const BootstrapResult& result);

/// Patient-level bootstrap of the direct method: each replicate resamples the
/// behavior dataset with replacement (a sample's annotations travel with it),
/// refits the reward model, and re-estimates over the resampled contexts.
/// Replicate resampling depends only on (seed, replicate, N), so runs that
/// share a seed are paired replicate-by-replicate, and samples are processed
/// in id order so the result is invariant to input permutation. Pass
/// annotations = nullptr for plain DM.
BootstrapResult bootstrap_dm_rmse(const BehaviorDataset& dataset, const AnnotationSet* annotations,
                                  const Policy& policy_e, double truth, int n_boot,
                                  std::uint64_t seed, const RewardModelOptions& options = {});

/// Same protocol for the importance-sampling baseline (policies held fixed).
BootstrapResult bootstrap_is_rmse(const BehaviorDataset& dataset, const Policy& policy_e,
                                  const Policy& policy_b, double truth, int n_boot,
                                  std::uint64_t seed);

struct TTestResult {
    double t = 0.0;
    double p_value = 1.0;
    bool significant = false;  // p < 0.05 and t > 0 (improvement direction)
};

/// Paired t-test on per-replicate differences d_i = errors_a[i] - errors_b[i]
/// (t > 0 when b improves on a). Two-sided p-value. Zero-variance differences
/// use the convention: all-equal lists give (0, 1, false); a constant nonzero
/// difference gives (+/-inf, 0, t > 0).
TTestResult paired_t_test(std::span<const double> errors_a, std::span<const double> errors_b);

/// Class boundaries for the clinically relevant lab categories.
std::span<const double> lab_class_boundaries(Task task);
std::size_t lab_class(double lab, Task task);

/// Support-weighted F1 over the lab categories; zero-support classes carry no
/// weight.
double weighted_f1(std::span<const double> predicted_labs, std::span<const double> true_labs,
                   Task task);

/// Natural-log entropy of the empirical action frequencies over behavior
/// samples plus annotations (0 ln 0 = 0). Bounded by ln |A|.
double action_entropy(const BehaviorDataset& dataset, const AnnotationSet* annotations);

struct EntropyCurvePoint {
    std::size_t count = 0;
    double entropy = 0.0;
};

struct EntropyCurve {
    std::vector<EntropyCurvePoint> points;
    double max_entropy = 0.0;  // ln |A|
};

/// Entropy after each batch of `step` annotations added in stream order,
/// starting from the behavior-only point at count 0.
EntropyCurve entropy_curve(const BehaviorDataset& dataset, const AnnotationSet& stream,
                           std::size_t step);

enum class Strata { AgeBins, Gender };

struct StratumError {
    std::string label;
    std::size_t count = 0;
    double mean_abs_error = 0.0;
};

/// Mean absolute lab error per stratum (age bins 18-40 / 40-60 / 60-80 / 80+,
/// or gender). Empty strata are absent from the table.
std::vector<StratumError> stratified_error(std::span<const double> predicted_labs,
                                           std::span<const double> true_labs,
                                           std::span<const ClinicalContext> contexts,
                                           Strata strata);

struct TTestRow {
    std::string comparison;
    TTestResult result;
};

struct SchedulePoint {
    std::size_t requested = 0;
    std::size_t effective = 0;  // after failed annotations were dropped
    RmseSummary dm_plus;
    double entropy = 0.0;
};

struct EvalReport {
    std::string task;
    std::string split;
    std::uint64_t seed = 0;
    std::size_t n_behavior = 0;
    std::size_t n_target = 0;

    double truth = 0.0;
    std::string truth_source;  // "oracle" or "target_empirical"
    double target_empirical_value = 0.0;
    double behavior_empirical_value = 0.0;

    double behavior_clone_accuracy = 0.0;
    double target_clone_accuracy = 0.0;
    bool behavior_clone_degenerate = false;
    bool target_clone_degenerate = false;

    double dm_point = 0.0;
    IsResult is_point;
    RmseSummary dm;
    std::optional<RmseSummary> is;
    std::vector<SchedulePoint> schedule;
    std::vector<TTestRow> t_tests;
    EntropyCurve entropy;

    std::optional<double> annotator_f1;
    std::string annotator_id;
    std::vector<StratumError> age_strata;
    std::vector<StratumError> gender_strata;

    nlohmann::ordered_json to_json() const;
    std::string rmse_table_csv() const;
    std::string entropy_table_csv() const;
    std::string t_test_table_csv() const;
    std::string rmse_svg() const;
    std::string entropy_svg() const;
};

}  // namespace cfope
