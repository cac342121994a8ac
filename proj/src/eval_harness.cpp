#include "cfope/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>

#include "cfope/format.hpp"
#include "cfope/rng.hpp"
#include "cfope/svg_plot.hpp"

namespace cfope {
namespace {

double sample_sd(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 2) return 0.0;
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (const double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(n - 1));
}

// Indices of dataset.samples in id order; the canonical base for resampling.
std::vector<std::size_t> canonical_order(const BehaviorDataset& dataset) {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dataset.samples[a].id < dataset.samples[b].id;
    });
    return order;
}

BootstrapResult finalize(std::vector<double> estimates, double truth) {
    BootstrapResult result;
    result.estimates = std::move(estimates);
    result.abs_errors.reserve(result.estimates.size());
    double sq = 0.0;
    for (const double e : result.estimates) {
        const double err = e - truth;
        result.abs_errors.push_back(std::abs(err));
        sq += err * err;
    }
    result.rmse = std::sqrt(sq / static_cast<double>(result.estimates.size()));
    result.standard_error =
        sample_sd(result.abs_errors) / std::sqrt(static_cast<double>(result.abs_errors.size()));
    return result;
}

double entropy_of_counts(std::span<const std::size_t> counts, std::size_t total) {
    double h = 0.0;
    for (const std::size_t c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace

double rmse(std::span<const double> estimates, double truth) {
    if (estimates.empty()) throw std::invalid_argument("rmse: empty estimate list");
    double sq = 0.0;
    for (const double e : estimates) sq += (e - truth) * (e - truth);
    return std::sqrt(sq / static_cast<double>(estimates.size()));
}

RmseSummary summarize(const BootstrapResult& result) {
    RmseSummary s;
    s.rmse = result.rmse;
    s.standard_error = result.standard_error;
    s.bar_lo = std::max(0.0, result.rmse - result.standard_error);
    s.bar_hi = result.rmse + result.standard_error;
    return s;
}

BootstrapResult bootstrap_dm_rmse(const BehaviorDataset& dataset, const AnnotationSet* annotations,
                                  const Policy& policy_e, double truth, int n_boot,
                                  std::uint64_t seed, const RewardModelOptions& options) {
    if (n_boot < 1) throw std::invalid_argument("bootstrap_dm_rmse: n_boot must be >= 1");
    if (dataset.empty()) throw std::invalid_argument("bootstrap_dm_rmse: dataset is empty");

    const auto order = canonical_order(dataset);
    std::unordered_map<std::int64_t, std::vector<const Annotation*>> annotations_by_id;
    if (annotations) {
        for (const auto& a : annotations->items) annotations_by_id[a.sample_id].push_back(&a);
    }

    const std::size_t n = dataset.size();
    std::vector<double> estimates;
    estimates.reserve(static_cast<std::size_t>(n_boot));
    for (int r = 0; r < n_boot; ++r) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(r));
        BehaviorDataset resample = BehaviorDataset::empty_like(dataset);
        resample.samples.reserve(n);
        AnnotationSet resample_annotations;
        resample_annotations.task = dataset.task;
        std::vector<ClinicalContext> contexts;
        contexts.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Sample& s = dataset.samples[order[rng.uniform_index(n)]];
            resample.samples.push_back(s);
            contexts.push_back(s.context);
            if (annotations) {
                const auto it = annotations_by_id.find(s.id);
                if (it != annotations_by_id.end()) {
                    for (const Annotation* a : it->second) resample_annotations.items.push_back(*a);
                }
            }
        }
        const RewardModel model = fit_reward_model(
            resample, annotations ? &resample_annotations : nullptr, options);
        estimates.push_back(dm_value(policy_e, contexts, model));
    }
    return finalize(std::move(estimates), truth);
}

BootstrapResult bootstrap_is_rmse(const BehaviorDataset& dataset, const Policy& policy_e,
                                  const Policy& policy_b, double truth, int n_boot,
                                  std::uint64_t seed) {
    if (n_boot < 1) throw std::invalid_argument("bootstrap_is_rmse: n_boot must be >= 1");
    if (dataset.empty()) throw std::invalid_argument("bootstrap_is_rmse: dataset is empty");

    const auto order = canonical_order(dataset);
    const std::size_t n = dataset.size();
    std::vector<double> estimates;
    estimates.reserve(static_cast<std::size_t>(n_boot));
    for (int r = 0; r < n_boot; ++r) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(r));
        BehaviorDataset resample = BehaviorDataset::empty_like(dataset);
        resample.samples.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            resample.samples.push_back(dataset.samples[order[rng.uniform_index(n)]]);
        estimates.push_back(is_value(policy_e, policy_b, resample).value);
    }
    return finalize(std::move(estimates), truth);
}

TTestResult paired_t_test(std::span<const double> errors_a, std::span<const double> errors_b) {
    if (errors_a.size() != errors_b.size())
        throw std::invalid_argument("paired_t_test: replicate lists differ in length");
    const std::size_t n = errors_a.size();
    if (n < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");

    std::vector<double> diffs(n);
    for (std::size_t i = 0; i < n; ++i) diffs[i] = errors_a[i] - errors_b[i];
    const double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / static_cast<double>(n);
    const double sd = sample_sd(diffs);

    TTestResult result;
    if (sd == 0.0) {
        if (mean == 0.0) return TTestResult{0.0, 1.0, false};
        result.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
        result.p_value = 0.0;
        result.significant = mean > 0.0;
        return result;
    }
    result.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    result.p_value = 2.0 * boost::math::cdf(dist, -std::abs(result.t));
    result.significant = result.p_value < 0.05 && result.t > 0.0;
    return result;
}

std::span<const double> lab_class_boundaries(Task task) {
    static const double potassium[] = {3.2, 5.0, 6.0};
    static const double sodium[] = {118.0, 135.0, 152.0, 169.0};
    if (task == Task::Potassium) return {potassium, 3};
    return {sodium, 4};
}

std::size_t lab_class(double lab, Task task) {
    const auto boundaries = lab_class_boundaries(task);
    std::size_t c = 0;
    for (const double b : boundaries) {
        if (lab >= b) ++c;
    }
    return c;
}

double weighted_f1(std::span<const double> predicted_labs, std::span<const double> true_labs,
                   Task task) {
    if (predicted_labs.size() != true_labs.size())
        throw std::invalid_argument("weighted_f1: prediction and truth lengths differ");
    if (predicted_labs.empty()) throw std::invalid_argument("weighted_f1: empty input");

    const std::size_t n_classes = lab_class_boundaries(task).size() + 1;
    std::vector<double> tp(n_classes, 0.0), fp(n_classes, 0.0), fn(n_classes, 0.0);
    for (std::size_t i = 0; i < predicted_labs.size(); ++i) {
        const std::size_t pc = lab_class(predicted_labs[i], task);
        const std::size_t tc = lab_class(true_labs[i], task);
        if (pc == tc) {
            tp[pc] += 1.0;
        } else {
            fp[pc] += 1.0;
            fn[tc] += 1.0;
        }
    }
    double weighted = 0.0;
    double support_total = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        const double support = tp[c] + fn[c];
        if (support == 0.0) continue;  // zero-support classes carry no weight
        const double denom = 2.0 * tp[c] + fp[c] + fn[c];
        const double f1 = denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
        weighted += support * f1;
        support_total += support;
    }
    return weighted / support_total;
}

double action_entropy(const BehaviorDataset& dataset, const AnnotationSet* annotations) {
    const std::size_t n_actions = dataset.actions.size();
    std::vector<std::size_t> counts(n_actions, 0);
    std::size_t total = 0;
    for (const auto& s : dataset.samples) {
        counts.at(s.action_index) += 1;
        ++total;
    }
    if (annotations) {
        if (annotations->task != dataset.task)
            throw std::invalid_argument("action_entropy: annotation task does not match dataset");
        for (const auto& a : annotations->items) {
            counts.at(a.action_index) += 1;
            ++total;
        }
    }
    if (total == 0) throw std::invalid_argument("action_entropy: no records");
    return entropy_of_counts(counts, total);
}

EntropyCurve entropy_curve(const BehaviorDataset& dataset, const AnnotationSet& stream,
                           std::size_t step) {
    if (step < 1) throw std::invalid_argument("entropy_curve: step must be >= 1");
    const std::size_t n_actions = dataset.actions.size();
    if (stream.task != dataset.task)
        throw std::invalid_argument("entropy_curve: annotation task does not match dataset");

    std::vector<std::size_t> counts(n_actions, 0);
    std::size_t total = 0;
    for (const auto& s : dataset.samples) {
        counts.at(s.action_index) += 1;
        ++total;
    }
    if (total == 0 && stream.empty()) throw std::invalid_argument("entropy_curve: no records");

    EntropyCurve curve;
    curve.max_entropy = std::log(static_cast<double>(n_actions));
    curve.points.push_back({0, entropy_of_counts(counts, total)});
    std::size_t consumed = 0;
    while (consumed < stream.size()) {
        const std::size_t batch = std::min(step, stream.size() - consumed);
        for (std::size_t i = 0; i < batch; ++i) {
            counts.at(stream.items[consumed + i].action_index) += 1;
            ++total;
        }
        consumed += batch;
        curve.points.push_back({consumed, entropy_of_counts(counts, total)});
    }
    return curve;
}

std::vector<StratumError> stratified_error(std::span<const double> predicted_labs,
                                           std::span<const double> true_labs,
                                           std::span<const ClinicalContext> contexts,
                                           Strata strata) {
    if (predicted_labs.size() != true_labs.size() || predicted_labs.size() != contexts.size())
        throw std::invalid_argument("stratified_error: input lengths differ");

    static const char* age_labels[] = {"18-40", "40-60", "60-80", "80+"};
    static const char* gender_labels[] = {"F", "M"};
    const std::size_t n_strata = strata == Strata::AgeBins ? 4 : 2;

    std::vector<double> error_sum(n_strata, 0.0);
    std::vector<std::size_t> count(n_strata, 0);
    for (std::size_t i = 0; i < predicted_labs.size(); ++i) {
        std::size_t bin;
        if (strata == Strata::AgeBins) {
            const double age = contexts[i].age;
            bin = age < 40.0 ? 0 : age < 60.0 ? 1 : age < 80.0 ? 2 : 3;
        } else {
            bin = contexts[i].gender == Gender::Male ? 1 : 0;
        }
        error_sum[bin] += std::abs(predicted_labs[i] - true_labs[i]);
        count[bin] += 1;
    }

    std::vector<StratumError> table;
    for (std::size_t b = 0; b < n_strata; ++b) {
        if (count[b] == 0) continue;  // empty strata are absent, not zero
        table.push_back({strata == Strata::AgeBins ? age_labels[b] : gender_labels[b], count[b],
                         error_sum[b] / static_cast<double>(count[b])});
    }
    return table;
}

nlohmann::ordered_json EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["task"] = task;
    j["split"] = split;
    j["seed"] = seed;
    j["n_behavior"] = n_behavior;
    j["n_target"] = n_target;
    j["truth"] = truth;
    j["truth_source"] = truth_source;
    j["target_empirical_value"] = target_empirical_value;
    j["behavior_empirical_value"] = behavior_empirical_value;
    j["cloning"] = {{"behavior_accuracy", behavior_clone_accuracy},
                    {"target_accuracy", target_clone_accuracy},
                    {"behavior_degenerate", behavior_clone_degenerate},
                    {"target_degenerate", target_clone_degenerate}};
    j["point_estimates"] = {{"dm", dm_point},
                            {"is",
                             {{"value", is_point.value},
                              {"max_weight", is_point.max_weight},
                              {"mean_weight", is_point.mean_weight},
                              {"ess_fraction", is_point.ess_fraction},
                              {"high_variance", is_point.high_variance}}}};
    const auto rmse_json = [](const RmseSummary& s) {
        return nlohmann::ordered_json{{"rmse", s.rmse},
                                      {"standard_error", s.standard_error},
                                      {"bar_lo", s.bar_lo},
                                      {"bar_hi", s.bar_hi}};
    };
    j["dm_rmse"] = rmse_json(dm);
    if (is) j["is_rmse"] = rmse_json(*is);
    j["schedule"] = nlohmann::ordered_json::array();
    for (const auto& point : schedule) {
        nlohmann::ordered_json p;
        p["requested"] = point.requested;
        p["effective"] = point.effective;
        p["dm_plus_rmse"] = rmse_json(point.dm_plus);
        p["entropy"] = point.entropy;
        j["schedule"].push_back(p);
    }
    j["t_tests"] = nlohmann::ordered_json::array();
    for (const auto& row : t_tests) {
        j["t_tests"].push_back({{"comparison", row.comparison},
                                {"t", row.result.t},
                                {"p_value", row.result.p_value},
                                {"significant", row.result.significant}});
    }
    j["entropy_curve"] = nlohmann::ordered_json::array();
    for (const auto& point : entropy.points)
        j["entropy_curve"].push_back({{"count", point.count}, {"entropy", point.entropy}});
    j["max_entropy"] = entropy.max_entropy;
    if (annotator_f1) {
        j["annotator_eval"] = {{"annotator", annotator_id}, {"weighted_f1", *annotator_f1}};
        auto strata_json = [](const std::vector<StratumError>& rows) {
            nlohmann::ordered_json out = nlohmann::ordered_json::array();
            for (const auto& r : rows)
                out.push_back({{"stratum", r.label},
                               {"count", r.count},
                               {"mean_abs_error", r.mean_abs_error}});
            return out;
        };
        j["annotator_eval"]["age_strata"] = strata_json(age_strata);
        j["annotator_eval"]["gender_strata"] = strata_json(gender_strata);
    }
    return j;
}

std::string EvalReport::rmse_table_csv() const {
    std::ostringstream out;
    out << "estimator,annotations,rmse,standard_error,bar_lo,bar_hi\n";
    const auto row = [&](const std::string& name, std::size_t count, const RmseSummary& s) {
        out << name << "," << count << "," << format_double(s.rmse) << ","
            << format_double(s.standard_error) << "," << format_double(s.bar_lo) << ","
            << format_double(s.bar_hi) << "\n";
    };
    row("dm", 0, dm);
    if (is) row("is", 0, *is);
    for (const auto& point : schedule) row("dm_plus", point.effective, point.dm_plus);
    return out.str();
}

std::string EvalReport::entropy_table_csv() const {
    std::ostringstream out;
    out << "annotations,entropy,max_entropy\n";
    for (const auto& point : entropy.points)
        out << point.count << "," << format_double(point.entropy) << ","
            << format_double(entropy.max_entropy) << "\n";
    return out.str();
}

std::string EvalReport::t_test_table_csv() const {
    std::ostringstream out;
    out << "comparison,t,p_value,significant\n";
    for (const auto& row : t_tests)
        out << row.comparison << "," << format_double(row.result.t) << ","
            << format_double(row.result.p_value) << "," << (row.result.significant ? 1 : 0) << "\n";
    return out.str();
}

std::string EvalReport::rmse_svg() const {
    std::vector<SvgSeries> series;
    SvgSeries dm_plus{"DM+ (annotated)", "#d62728", false, {}};
    for (const auto& point : schedule)
        dm_plus.points.emplace_back(static_cast<double>(point.effective), point.dm_plus.rmse);
    SvgSeries baseline{"DM baseline", "#1f77b4", true, {}};
    if (!schedule.empty()) {
        baseline.points.emplace_back(0.0, dm.rmse);
        baseline.points.emplace_back(static_cast<double>(schedule.back().effective), dm.rmse);
    } else {
        baseline.points.emplace_back(0.0, dm.rmse);
        baseline.points.emplace_back(1.0, dm.rmse);
    }
    series.push_back(dm_plus);
    series.push_back(baseline);
    return svg_line_chart("RMSE vs counterfactual annotations", "annotations", "RMSE", series);
}

std::string EvalReport::entropy_svg() const {
    std::vector<SvgSeries> series;
    SvgSeries curve{"H(A)", "#2ca02c", false, {}};
    for (const auto& point : entropy.points)
        curve.points.emplace_back(static_cast<double>(point.count), point.entropy);
    SvgSeries max_line{"ln|A|", "#7f7f7f", true, {}};
    const double last =
        entropy.points.empty() ? 1.0 : static_cast<double>(entropy.points.back().count);
    max_line.points.emplace_back(0.0, entropy.max_entropy);
    max_line.points.emplace_back(std::max(last, 1.0), entropy.max_entropy);
    series.push_back(curve);
    series.push_back(max_line);
    return svg_line_chart("Marginal action entropy", "annotations", "H(A)", series);
}

}  // namespace cfope
