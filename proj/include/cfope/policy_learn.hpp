// Behavior cloning of discrete dosing policies: multinomial logistic
// regression on standardized context features, fit by damped Newton.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "cfope/bandit_core.hpp"

namespace cfope {

// Probabilities below this are floored (then renormalized) when a policy is
// used as a propensity model. Raw probabilities are left untouched for the
// direct-method estimators.
constexpr double kPropensityFloor = 1e-3;

struct FeatureScaler {
    std::vector<double> mean;
    std::vector<double> scale;  // 1.0 where the training column is constant

    static FeatureScaler fit(const Eigen::MatrixXd& rows);
    Eigen::VectorXd apply(const Eigen::VectorXd& row) const;
};

// Context features used for policy cloning. baseline_lab is included by
// default (it drives dosing); comorbidity_flag is excluded to mirror the
// 15-feature predictive context.
struct PolicyFeatureSpec {
    bool include_baseline_lab = true;
    bool include_comorbidity_flag = false;

    std::size_t dimension() const {
        return kNumPredictiveFeatures + (include_baseline_lab ? 1 : 0) +
               (include_comorbidity_flag ? 1 : 0);
    }
    Eigen::VectorXd extract(const ClinicalContext& context) const;
};

class Policy {
  public:
    Policy() = default;
    Policy(ActionSpace actions, PolicyFeatureSpec features, FeatureScaler scaler,
           Eigen::MatrixXd weights);

    // Point-mass policy on one action (represented with a large intercept so
    // it stays inside the linear-softmax family).
    static Policy point_mass(ActionSpace actions, PolicyFeatureSpec features, FeatureScaler scaler,
                             std::size_t action_index);

    const ActionSpace& actions() const { return actions_; }
    const Eigen::MatrixXd& weights() const { return weights_; }
    const PolicyFeatureSpec& feature_spec() const { return features_; }

    // Raw softmax probabilities; sums to 1, entries >= 0.
    std::vector<double> prob(const ClinicalContext& context) const;

    // Floored-and-renormalized probabilities for inverse propensity scores.
    std::vector<double> propensity(const ClinicalContext& context) const;

    nlohmann::ordered_json to_json() const;
    static Policy from_json(const nlohmann::json& j);

  private:
    Eigen::VectorXd scores(const ClinicalContext& context) const;

    ActionSpace actions_;
    PolicyFeatureSpec features_;
    FeatureScaler scaler_;
    Eigen::MatrixXd weights_;  // n_actions x (dimension + 1), intercept last
};

struct CloneOptions {
    double train_frac = 0.8;
    double l2 = 1e-4;
    double gradient_tolerance = 1e-6;
    int max_iterations = 10000;
    PolicyFeatureSpec features;
};

struct CloneResult {
    Policy policy;
    double validation_accuracy = 0.0;
    // True when the dataset contained a single distinct action and the
    // returned policy is a point mass with nominal accuracy 1.0.
    bool degenerate_single_action = false;
};

/// Fits the policy on a seeded train split and reports top-1 accuracy on the
/// held-out split. Deterministic given (dataset, seed, options).
CloneResult clone_policy(const BehaviorDataset& dataset, std::uint64_t seed,
                         const CloneOptions& options = {});

}  // namespace cfope
