// Shared fixture helpers for the unit suites.
#pragma once

#include "cfope/bandit_core.hpp"
#include "cfope/cohort_sim.hpp"

namespace testutil {

inline cfope::ClinicalContext make_context(double baseline_lab = 3.0, double creatinine = 1.0,
                                           cfope::Gender gender = cfope::Gender::Female,
                                           bool comorbid = false, double age = 60.0) {
    cfope::ClinicalContext c;
    c.age = age;
    c.gender = gender;
    c.weight = 80.0;
    c.height = 168.0;
    c.heart_rate = 86.0;
    c.respiratory_rate = 18.0;
    c.spo2 = 97.0;
    c.systolic_bp = 124.0;
    c.diastolic_bp = 72.0;
    c.serum_creatinine = creatinine;
    c.nacl_09_given = 500.0;
    c.dextrose_5_given = 0.0;
    c.propofol_given = 0.0;
    c.norepinephrine_given = 0.0;
    c.insulin_given = 5.0;
    c.comorbidity_flag = comorbid;
    c.baseline_lab = baseline_lab;
    return c;
}

// Small bare dataset with directly set rewards (for fit tests that need
// arbitrary responses).
inline cfope::BehaviorDataset empty_dataset(cfope::Task task = cfope::Task::Potassium) {
    cfope::BehaviorDataset d;
    d.task = task;
    d.actions = cfope::ActionSpace::for_task(task);
    d.reward_spec = cfope::RewardSpec::for_task(task);
    return d;
}

}  // namespace testutil
