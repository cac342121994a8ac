// Cohort CSV serialization. Fixed schema, UTF-8, LF line endings, shortest
// round-trip float formatting; the byte-exact contract for golden tests.
#pragma once

#include <iosfwd>
#include <string>

#include "cfope/bandit_core.hpp"

namespace cfope {

// patient_id, the 15 predictive features in canonical order, comorbidity_flag,
// baseline_lab, action_mEq, next_lab, reward.
std::string cohort_csv_header();

std::string cohort_to_csv(const BehaviorDataset& dataset);
void write_cohort_csv(std::ostream& out, const BehaviorDataset& dataset);

/// Parses a cohort CSV for the given task. Rewards are recomputed from
/// next_lab and must agree with the stored column to 1e-9; gender accepts
/// F/M or 0/1. Throws with the offending line number on malformed input.
BehaviorDataset read_cohort_csv(std::istream& in, Task task);

}  // namespace cfope
