// Off-policy value estimators: the direct method (DM), the
// annotation-augmented direct method (DM+), and an importance-sampling
// baseline, together with the linear reward-model fit they share.
#pragma once

#include <Eigen/Dense>
#include <span>

#include "cfope/annotate.hpp"
#include "cfope/policy_learn.hpp"

namespace cfope {

// Ridge strength used when a fit is automatically regularized (fewer rows
// than coefficients) and the recommended value for rank-deficient designs
// such as behavior datasets that never observed some actions.
constexpr double kDefaultRidgeLambda = 1e-6;

struct RewardModelOptions {
    // Context features: the 15 predictive features; cohort attributes join
    // only when explicitly enabled.
    bool include_baseline_lab = false;
    bool include_comorbidity_flag = false;
    // Context x action interaction columns (off by default; plain additive
    // design otherwise).
    bool interactions = false;
    // 0 means ordinary least squares; rank-deficient designs then throw
    // RankDeficientError instead of silently regularizing.
    double ridge_lambda = 0.0;
};

class RankDeficientError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Linear reward model over standardized context features, reference-coded
/// action indicators (action 0 is the baseline level; a full one-hot plus
/// intercept would be structurally collinear), optional interactions, and an
/// intercept.
class RewardModel {
  public:
    RewardModel() = default;
    RewardModel(ActionSpace actions, RewardModelOptions options, FeatureScaler scaler,
                Eigen::VectorXd weights);

    const ActionSpace& actions() const { return actions_; }
    const Eigen::VectorXd& weights() const { return weights_; }
    const RewardModelOptions& options() const { return options_; }

    std::size_t n_coefficients() const;

    // Design row for (context, action); exposed for the test oracles.
    Eigen::VectorXd features(const ClinicalContext& context, std::size_t action_index) const;

    double predict(const ClinicalContext& context, std::size_t action_index) const;
    // Clipped to [0, 1]; the estimators consume this form.
    double predict_clipped(const ClinicalContext& context, std::size_t action_index) const;

  private:
    Eigen::VectorXd raw_context(const ClinicalContext& context) const;

    ActionSpace actions_;
    RewardModelOptions options_;
    FeatureScaler scaler_;
    Eigen::VectorXd weights_;
};

/// Least squares over the unweighted union of behavior samples and
/// counterfactual annotations (annotations resolve contexts by sample_id).
/// Rows are canonically ordered before fitting, so the result is invariant to
/// input order. With fewer rows than coefficients the fit falls back to ridge
/// with kDefaultRidgeLambda; otherwise a rank-deficient design throws
/// RankDeficientError unless options.ridge_lambda > 0.
RewardModel fit_reward_model(const BehaviorDataset& dataset, const AnnotationSet* annotations,
                             const RewardModelOptions& options = {});

/// (1/M) sum over contexts of sum_a pi(a|s) * clip(R(s,a), 0, 1); the context
/// collection is the empirical initial-state distribution.
double dm_value(const Policy& policy, std::span<const ClinicalContext> contexts,
                const RewardModel& model);

/// dm_value with the reward model refit on dataset plus annotations. With an
/// empty annotation set this is exactly dm_value of the DM fit.
double dm_plus_value(const Policy& policy, std::span<const ClinicalContext> contexts,
                     const BehaviorDataset& dataset, const AnnotationSet& annotations,
                     const RewardModelOptions& options = {});

struct IsResult {
    double value = 0.0;
    double max_weight = 0.0;
    double mean_weight = 0.0;   // ~1 when the propensity ratio is calibrated
    double ess_fraction = 0.0;  // effective sample size / N
    // Flagged when the ratios are degenerate (ess_fraction < 0.1) or the mean
    // weight is far from 1 (target policy mass concentrated on actions the
    // floored behavior propensities never produced).
    bool high_variance = false;
};

/// Importance-sampling baseline: mean of (pi_e/pi_b)(a_i|s_i) * r_i over the
/// behavior dataset, with both propensities floored.
IsResult is_value(const Policy& policy_e, const Policy& policy_b, const BehaviorDataset& dataset);

}  // namespace cfope
