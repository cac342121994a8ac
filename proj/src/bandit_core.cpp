#include "cfope/bandit_core.hpp"

#include <cmath>
#include <numeric>

namespace cfope {

const char* task_name(Task task) {
    return task == Task::Potassium ? "potassium" : "sodium";
}

Task task_from_name(const std::string& name) {
    if (name == "potassium") return Task::Potassium;
    if (name == "sodium") return Task::Sodium;
    throw std::invalid_argument("unknown task: " + name);
}

ActionSpace ActionSpace::for_task(Task task) {
    if (task == Task::Potassium) return ActionSpace{task, {0.0, 10.0, 20.0, 40.0}};
    return ActionSpace{task, {0.0, 100.0, 200.0, 300.0, 400.0, 500.0}};
}

std::size_t ActionSpace::index_of(double dose_meq) const {
    for (std::size_t i = 0; i < dosages.size(); ++i) {
        if (dosages[i] == dose_meq) return i;
    }
    throw std::invalid_argument("dose " + std::to_string(dose_meq) + " mEq is not in the action space");
}

RewardSpec RewardSpec::for_task(Task task) {
    if (task == Task::Potassium) return RewardSpec{3.5, 4.5, 2.5};
    return RewardSpec{135.0, 145.0, 2.5};
}

double reward_of_lab(double lab, const RewardSpec& spec) {
    if (!std::isfinite(lab)) throw std::invalid_argument("reward_of_lab: lab value must be finite");
    if (!(spec.lower < spec.upper) || !(spec.decay_scale > 0.0))
        throw std::invalid_argument("reward_of_lab: malformed reward spec");
    if (lab < spec.lower) {
        const double z = (lab - spec.lower) / spec.decay_scale;
        return std::exp(-0.5 * z * z);
    }
    if (lab > spec.upper) {
        const double z = (lab - spec.upper) / spec.decay_scale;
        return std::exp(-0.5 * z * z);
    }
    return 1.0;
}

std::array<double, kNumPredictiveFeatures> ClinicalContext::predictive_features() const {
    return {age,
            gender == Gender::Male ? 1.0 : 0.0,
            weight,
            height,
            heart_rate,
            respiratory_rate,
            spo2,
            systolic_bp,
            diastolic_bp,
            serum_creatinine,
            nacl_09_given,
            dextrose_5_given,
            propofol_given,
            norepinephrine_given,
            insulin_given};
}

const std::array<const char*, kNumPredictiveFeatures>& predictive_feature_names() {
    static const std::array<const char*, kNumPredictiveFeatures> names = {
        "age",
        "gender",
        "weight",
        "height",
        "heart_rate",
        "respiratory_rate",
        "spo2",
        "systolic_bp",
        "diastolic_bp",
        "serum_creatinine",
        "nacl_09_given",
        "dextrose_5_given",
        "propofol_given",
        "norepinephrine_given",
        "insulin_given"};
    return names;
}

std::string ClinicalContext::first_missing_field() const {
    const auto values = predictive_features();
    const auto& names = predictive_feature_names();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) return names[i];
    }
    if (!std::isfinite(baseline_lab)) return "baseline_lab";
    return "";
}

void ClinicalContext::validate() const {
    const std::string missing = first_missing_field();
    if (!missing.empty()) throw std::invalid_argument("context field is not finite: " + missing);
    const auto values = predictive_features();
    const auto& names = predictive_feature_names();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] < 0.0)
            throw std::invalid_argument(std::string("context field must be non-negative: ") + names[i]);
    }
    if (spo2 > 100.0) throw std::invalid_argument("context field out of range: spo2");
    if (baseline_lab < 0.0) throw std::invalid_argument("context field must be non-negative: baseline_lab");
}

Sample make_sample(std::int64_t id, ClinicalContext context, std::size_t action_index,
                   double next_lab, const RewardSpec& spec) {
    Sample s;
    s.id = id;
    s.context = std::move(context);
    s.action_index = action_index;
    s.next_lab = next_lab;
    s.reward = reward_of_lab(next_lab, spec);
    return s;
}

std::vector<ClinicalContext> BehaviorDataset::contexts() const {
    std::vector<ClinicalContext> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.context);
    return out;
}

std::vector<double> BehaviorDataset::rewards() const {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.reward);
    return out;
}

double policy_value_empirical(const BehaviorDataset& dataset) {
    if (dataset.empty()) throw std::invalid_argument("policy_value_empirical: dataset is empty");
    double sum = 0.0;
    for (const auto& s : dataset.samples) sum += s.reward;
    return sum / static_cast<double>(dataset.size());
}

}  // namespace cfope
