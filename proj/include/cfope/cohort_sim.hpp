// Synthetic patient cohort generator with a documented dose-response outcome
// model, behavior/target cohort splits, and an exact policy-value oracle.
//
// All numeric defaults below are free parameters of the test bed chosen for a
// plausible shape (monotone dose response, under-range baselines, renal
// modulation), not claims about medicine.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>

#include "cfope/bandit_core.hpp"
#include "cfope/rng.hpp"

namespace cfope {

struct GaussianFeature {
    double mean = 0.0;
    double sd = 0.0;
    double lo = 0.0;
    double hi = 0.0;

    double sample(Rng& rng) const;
};

// Zero with probability (1 - prob), otherwise a clamped Gaussian amount.
struct MedicationFeature {
    double prob = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    double lo = 0.0;
    double hi = 0.0;

    double sample(Rng& rng) const;
};

struct FeatureParams {
    GaussianFeature age{66.0, 16.0, 18.0, 99.0};
    double male_fraction = 0.5;
    GaussianFeature weight{80.0, 18.0, 38.0, 180.0};
    GaussianFeature height{168.0, 10.0, 140.0, 205.0};
    GaussianFeature heart_rate{86.0, 15.0, 40.0, 160.0};
    GaussianFeature respiratory_rate{18.0, 4.0, 8.0, 40.0};
    GaussianFeature spo2{96.5, 2.0, 78.0, 100.0};
    GaussianFeature systolic_bp{124.0, 18.0, 70.0, 210.0};
    GaussianFeature diastolic_bp{72.0, 12.0, 35.0, 120.0};
    GaussianFeature serum_creatinine{1.0, 0.4, 0.3, 3.5};
    // Comorbid patients draw creatinine from a shifted mean.
    double creatinine_comorbid_shift = 0.6;
    MedicationFeature nacl_09{0.45, 650.0, 300.0, 0.0, 3000.0};
    MedicationFeature dextrose_5{0.30, 500.0, 250.0, 0.0, 2500.0};
    MedicationFeature propofol{0.12, 120.0, 60.0, 0.0, 500.0};
    MedicationFeature norepinephrine{0.08, 4.0, 2.0, 0.0, 20.0};
    MedicationFeature insulin{0.20, 8.0, 4.0, 0.0, 40.0};
    double comorbidity_rate = 0.30;
    GaussianFeature baseline_lab{2.9, 0.45, 1.8, 3.6};
};

// Heuristic dosing rule: softmax over -(z_j - c)^2 / temperature where
// z_j = dose_j / dose_unit and c = gain * (anchor - baseline_lab) minus a
// caution term for comorbid patients. Lower baseline labs score higher doses;
// the quadratic form keeps the rule inside the linear-softmax family so that
// behavior cloning can recover it.
struct BehaviorPolicyParams {
    double gain = 0.0;
    double anchor = 0.0;
    double temperature = 0.1;
    double comorbid_caution = 0.3;
    double dose_unit = 1.0;
};

// E[next_lab] = baseline_lab + drift + kappa * dose * (1 + rho * flag) * g(creatinine),
// g(c) = clamp(c / creatinine_scale, g_lo, g_hi). For potassium rho > 0
// (renal disease slows clearance, larger rise per mEq); for sodium rho < 0
// (cirrhosis blunts the response).
struct OutcomeParams {
    double drift = 0.0;
    double kappa = 0.0;
    double rho = 0.0;
    double creatinine_scale = 1.0;
    double g_lo = 0.5;
    double g_hi = 2.0;
};

struct LabClamp {
    double lo = 0.0;
    double hi = 0.0;

    double apply(double lab) const { return lab < lo ? lo : (lab > hi ? hi : lab); }
    bool contains(double lab) const { return lab >= lo && lab <= hi; }
};

/// Physiologic lab range per task: [1.5, 9.0] mEq/L for serum potassium,
/// [100, 180] mEq/L for serum sodium. Simulated labs are clamped to it and
/// annotator responses outside it are rejected.
LabClamp physiologic_range(Task task);

struct SimConfig {
    Task task = Task::Potassium;
    std::size_t n_patients = 0;
    std::uint64_t seed = 0;
    double noise_sd = 0.0;  // mEq/L on the next lab
    FeatureParams features;
    BehaviorPolicyParams behavior;
    OutcomeParams outcome;
    LabClamp lab_clamp;

    static SimConfig defaults(Task task);

    // Throws std::invalid_argument naming the first malformed field.
    void validate() const;
};

ClinicalContext sample_context(const SimConfig& config, Rng& rng);

/// Expected next lab before noise and clamping. Throws if the dose is not a
/// level of the task's action space.
double outcome_model(const ClinicalContext& context, double dose_meq, const SimConfig& config);

/// The heuristic behavior policy's probability vector over the action space.
std::vector<double> behavior_action_probabilities(const ClinicalContext& context,
                                                  const SimConfig& config);

/// Deterministic per seed: contexts, heuristic behavior actions, and noisy
/// clamped outcome labs with rewards.
BehaviorDataset generate_cohort(const SimConfig& config);

enum class SplitKind { Gender, Comorbidity, Dosage };

const char* split_kind_name(SplitKind kind);
SplitKind split_kind_from_name(const std::string& name);

struct CohortSplit {
    SplitKind kind = SplitKind::Gender;
    BehaviorDataset behavior;
    BehaviorDataset target;
    // Dose threshold actually used (dosage split only).
    std::optional<double> dosage_threshold;
};

/// Disjoint, exhaustive partition. Gender: behavior = female. Comorbidity:
/// behavior = flag absent. Dosage: behavior = dose strictly below the
/// threshold (cohort median dose unless overridden). Throws on a degenerate
/// (empty-sided) split.
CohortSplit split_cohort(const BehaviorDataset& cohort, SplitKind kind,
                         std::optional<double> dosage_threshold = std::nullopt);

using PolicyFn = std::function<std::vector<double>(const ClinicalContext&)>;

/// E[reward | context, action] with the outcome noise integrated exactly:
/// piecewise Gauss-Legendre over the reward function's smooth segments plus
/// the clamp-boundary point masses. Absolute error well below 1e-6.
double expected_reward(const ClinicalContext& context, std::size_t action_index,
                       const SimConfig& config);

/// Ground-truth value of `policy` under the empirical context distribution of
/// `contexts`: mean over contexts of sum_a pi(a|s) E[reward | s, a].
double true_value(const PolicyFn& policy, std::span<const ClinicalContext> contexts,
                  const SimConfig& config);

/// Same, over n_mc contexts freshly sampled from the configured feature
/// distribution.
double true_value_sampled(const PolicyFn& policy, const SimConfig& config, std::size_t n_mc,
                          std::uint64_t seed);

}  // namespace cfope
