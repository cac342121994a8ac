// Core domain types for the dosing contextual bandit: action spaces, patient
// contexts, the clinical reward function, and logged behavior datasets.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfope {

enum class Task { Potassium, Sodium };

enum class Gender { Female, Male };

const char* task_name(Task task);
Task task_from_name(const std::string& name);

/// Discrete dose levels in mEq. Index 0 is always the no-treatment action.
struct ActionSpace {
    Task task;
    std::vector<double> dosages;

    static ActionSpace for_task(Task task);

    std::size_t size() const { return dosages.size(); }
    double dose(std::size_t index) const { return dosages.at(index); }

    // Index of an exact dose level; throws if the dose is not in the space.
    std::size_t index_of(double dose_meq) const;
};

/// Reference range [lower, upper] with the shared Gaussian tail scale. Both
/// tasks decay with scale 2.5 mEq/L outside the range.
struct RewardSpec {
    double lower = 0.0;
    double upper = 0.0;
    double decay_scale = 2.5;

    static RewardSpec for_task(Task task);
};

/// reward(x) = exp(-((x-lower)/scale)^2 / 2) below the range, 1 inside,
/// exp(-((x-upper)/scale)^2 / 2) above. Continuous, valued in (0, 1].
double reward_of_lab(double lab, const RewardSpec& spec);

constexpr std::size_t kNumPredictiveFeatures = 15;

/// Patient state four hours prior to treatment. The 15 predictive features
/// plus two cohort attributes (comorbidity_flag, baseline_lab) that drive the
/// simulator and cohort splits but are excluded from estimator features by
/// default.
struct ClinicalContext {
    double age = 0.0;                   // years
    Gender gender = Gender::Female;
    double weight = 0.0;                // kg
    double height = 0.0;                // cm
    double heart_rate = 0.0;            // bpm
    double respiratory_rate = 0.0;      // breaths/min
    double spo2 = 0.0;                  // percent
    double systolic_bp = 0.0;           // mmHg
    double diastolic_bp = 0.0;          // mmHg
    double serum_creatinine = 0.0;      // mg/dL
    double nacl_09_given = 0.0;         // mL
    double dextrose_5_given = 0.0;      // mL
    double propofol_given = 0.0;        // mg
    double norepinephrine_given = 0.0;  // mg
    double insulin_given = 0.0;         // units

    bool comorbidity_flag = false;  // renal disease (potassium) / cirrhosis (sodium)
    double baseline_lab = 0.0;      // pre-treatment serum level, mEq/L

    // The 15 predictive features in canonical order (gender encoded F=0, M=1).
    std::array<double, kNumPredictiveFeatures> predictive_features() const;

    // Throws std::invalid_argument naming the offending field if any quantity
    // is non-finite, negative where physiology forbids it, or spo2 is outside
    // [0, 100].
    void validate() const;

    // Name of the first feature (canonical order, then comorbidity_flag and
    // baseline_lab) holding a non-finite value, or empty if complete.
    std::string first_missing_field() const;
};

const std::array<const char*, kNumPredictiveFeatures>& predictive_feature_names();

/// One logged decision: context, chosen dose, observed next lab, and the
/// reward implied by that lab.
struct Sample {
    std::int64_t id = 0;
    ClinicalContext context;
    std::size_t action_index = 0;
    double next_lab = 0.0;
    double reward = 0.0;
};

// Builds a Sample with reward computed from the lab, keeping the
// reward-consistency invariant by construction.
Sample make_sample(std::int64_t id, ClinicalContext context, std::size_t action_index,
                   double next_lab, const RewardSpec& spec);

struct BehaviorDataset {
    Task task = Task::Potassium;
    ActionSpace actions;
    RewardSpec reward_spec;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    std::vector<ClinicalContext> contexts() const;
    std::vector<double> rewards() const;

    static BehaviorDataset empty_like(const BehaviorDataset& other) {
        return BehaviorDataset{other.task, other.actions, other.reward_spec, {}};
    }
};

/// Arithmetic mean of logged rewards; the empirical policy value of the
/// dataset's own behavior policy.
double policy_value_empirical(const BehaviorDataset& dataset);

}  // namespace cfope
