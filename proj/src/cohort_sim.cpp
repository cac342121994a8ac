#include "cfope/cohort_sim.hpp"

#include <algorithm>
#include <cmath>

namespace cfope {
namespace {

double clamp(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }

double normal_pdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
}

double normal_cdf(double x, double mean, double sd) {
    return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0)));
}

// Gauss-Legendre nodes/weights on [-1, 1], computed once by Newton iteration
// on the Legendre recurrence.
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;

    explicit GaussLegendre(int n) : nodes(n), weights(n) {
        for (int i = 0; i < (n + 1) / 2; ++i) {
            double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= n; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-15) break;
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
    }
};

const GaussLegendre& gl64() {
    static const GaussLegendre table(64);
    return table;
}

// Integral of f over [lo, hi] by 64-point Gauss-Legendre.
template <typename F>
double integrate(F&& f, double lo, double hi) {
    const auto& q = gl64();
    const double half = 0.5 * (hi - lo);
    const double mid = 0.5 * (hi + lo);
    double acc = 0.0;
    for (std::size_t i = 0; i < q.nodes.size(); ++i) {
        acc += q.weights[i] * f(mid + half * q.nodes[i]);
    }
    return acc * half;
}

void require(bool ok, const char* field) {
    if (!ok) throw std::invalid_argument(std::string("invalid simulator config field: ") + field);
}

void check_feature(const GaussianFeature& f, const char* field) {
    require(std::isfinite(f.mean) && f.sd >= 0.0 && f.lo <= f.hi, field);
}

void check_medication(const MedicationFeature& f, const char* field) {
    require(f.prob >= 0.0 && f.prob <= 1.0 && f.sd >= 0.0 && f.lo <= f.hi, field);
}

}  // namespace

double GaussianFeature::sample(Rng& rng) const { return clamp(rng.normal(mean, sd), lo, hi); }

double MedicationFeature::sample(Rng& rng) const {
    const double present = rng.uniform();
    const double amount = clamp(rng.normal(mean, sd), lo, hi);
    return present < prob ? amount : 0.0;
}

LabClamp physiologic_range(Task task) {
    if (task == Task::Potassium) return LabClamp{1.5, 9.0};
    return LabClamp{100.0, 180.0};
}

SimConfig SimConfig::defaults(Task task) {
    SimConfig config;
    config.task = task;
    if (task == Task::Potassium) {
        config.n_patients = 1622;
        config.noise_sd = 0.25;
        config.features.baseline_lab = {2.6, 0.5, 1.6, 3.4};
        config.features.comorbidity_rate = 0.30;
        config.features.creatinine_comorbid_shift = 0.6;
        config.behavior = {4.5, 3.0, 0.05, 0.15, 10.0};
        config.outcome = {-0.05, 0.02, 0.5, 1.0, 0.5, 2.0};
        config.lab_clamp = physiologic_range(task);
    } else {
        config.n_patients = 1187;
        config.noise_sd = 2.0;
        config.features.baseline_lab = {126.0, 6.0, 108.0, 134.0};
        config.features.comorbidity_rate = 0.25;
        config.features.creatinine_comorbid_shift = 0.2;
        config.behavior = {0.35, 133.5, 0.05, 0.15, 100.0};
        config.outcome = {-0.05, 0.01, -0.3, 1.0, 0.5, 2.0};
        config.lab_clamp = physiologic_range(task);
    }
    return config;
}

void SimConfig::validate() const {
    require(n_patients > 0, "n_patients");
    require(noise_sd >= 0.0, "noise_sd");
    check_feature(features.age, "features.age");
    require(features.male_fraction >= 0.0 && features.male_fraction <= 1.0, "features.male_fraction");
    check_feature(features.weight, "features.weight");
    check_feature(features.height, "features.height");
    check_feature(features.heart_rate, "features.heart_rate");
    check_feature(features.respiratory_rate, "features.respiratory_rate");
    check_feature(features.spo2, "features.spo2");
    check_feature(features.systolic_bp, "features.systolic_bp");
    check_feature(features.diastolic_bp, "features.diastolic_bp");
    check_feature(features.serum_creatinine, "features.serum_creatinine");
    check_medication(features.nacl_09, "features.nacl_09");
    check_medication(features.dextrose_5, "features.dextrose_5");
    check_medication(features.propofol, "features.propofol");
    check_medication(features.norepinephrine, "features.norepinephrine");
    check_medication(features.insulin, "features.insulin");
    require(features.comorbidity_rate >= 0.0 && features.comorbidity_rate <= 1.0,
            "features.comorbidity_rate");
    check_feature(features.baseline_lab, "features.baseline_lab");
    require(behavior.temperature > 0.0, "behavior.temperature");
    require(behavior.dose_unit > 0.0, "behavior.dose_unit");
    require(outcome.creatinine_scale > 0.0, "outcome.creatinine_scale");
    require(outcome.g_lo <= outcome.g_hi, "outcome.g_lo");
    require(lab_clamp.lo < lab_clamp.hi, "lab_clamp");
}

ClinicalContext sample_context(const SimConfig& config, Rng& rng) {
    const auto& f = config.features;
    ClinicalContext ctx;
    ctx.age = f.age.sample(rng);
    ctx.gender = rng.uniform() < f.male_fraction ? Gender::Male : Gender::Female;
    ctx.weight = f.weight.sample(rng);
    ctx.height = f.height.sample(rng);
    ctx.heart_rate = f.heart_rate.sample(rng);
    ctx.respiratory_rate = f.respiratory_rate.sample(rng);
    ctx.spo2 = f.spo2.sample(rng);
    ctx.systolic_bp = f.systolic_bp.sample(rng);
    ctx.diastolic_bp = f.diastolic_bp.sample(rng);
    ctx.comorbidity_flag = rng.uniform() < f.comorbidity_rate;
    GaussianFeature creat = f.serum_creatinine;
    if (ctx.comorbidity_flag) creat.mean += f.creatinine_comorbid_shift;
    ctx.serum_creatinine = creat.sample(rng);
    ctx.nacl_09_given = f.nacl_09.sample(rng);
    ctx.dextrose_5_given = f.dextrose_5.sample(rng);
    ctx.propofol_given = f.propofol.sample(rng);
    ctx.norepinephrine_given = f.norepinephrine.sample(rng);
    ctx.insulin_given = f.insulin.sample(rng);
    ctx.baseline_lab = f.baseline_lab.sample(rng);
    return ctx;
}

double outcome_model(const ClinicalContext& context, double dose_meq, const SimConfig& config) {
    ActionSpace::for_task(config.task).index_of(dose_meq);  // membership check
    const auto& o = config.outcome;
    const double g = clamp(context.serum_creatinine / o.creatinine_scale, o.g_lo, o.g_hi);
    const double comorbid = context.comorbidity_flag ? 1.0 + o.rho : 1.0;
    return context.baseline_lab + o.drift + o.kappa * dose_meq * comorbid * g;
}

std::vector<double> behavior_action_probabilities(const ClinicalContext& context,
                                                  const SimConfig& config) {
    const ActionSpace actions = ActionSpace::for_task(config.task);
    const auto& b = config.behavior;
    const double target = b.gain * (b.anchor - context.baseline_lab) -
                          (context.comorbidity_flag ? b.comorbid_caution : 0.0);
    std::vector<double> scores(actions.size());
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < actions.size(); ++j) {
        const double z = actions.dosages[j] / b.dose_unit;
        scores[j] = -(z - target) * (z - target) / b.temperature;
        max_score = std::max(max_score, scores[j]);
    }
    double norm = 0.0;
    for (auto& s : scores) {
        s = std::exp(s - max_score);
        norm += s;
    }
    for (auto& s : scores) s /= norm;
    return scores;
}

BehaviorDataset generate_cohort(const SimConfig& config) {
    config.validate();
    BehaviorDataset dataset;
    dataset.task = config.task;
    dataset.actions = ActionSpace::for_task(config.task);
    dataset.reward_spec = RewardSpec::for_task(config.task);
    dataset.samples.reserve(config.n_patients);

    Rng rng(config.seed);
    for (std::size_t i = 0; i < config.n_patients; ++i) {
        ClinicalContext ctx = sample_context(config, rng);
        const auto probs = behavior_action_probabilities(ctx, config);
        const std::size_t action = rng.categorical(probs);
        const double noise = rng.normal(0.0, 1.0) * config.noise_sd;
        const double mean_lab = outcome_model(ctx, dataset.actions.dosages[action], config);
        const double lab = config.lab_clamp.apply(mean_lab + noise);
        dataset.samples.push_back(make_sample(static_cast<std::int64_t>(i), std::move(ctx), action,
                                              lab, dataset.reward_spec));
    }
    return dataset;
}

const char* split_kind_name(SplitKind kind) {
    switch (kind) {
        case SplitKind::Gender: return "gender";
        case SplitKind::Comorbidity: return "comorbidity";
        case SplitKind::Dosage: return "dosage";
    }
    return "unknown";
}

SplitKind split_kind_from_name(const std::string& name) {
    if (name == "gender") return SplitKind::Gender;
    if (name == "comorbidity") return SplitKind::Comorbidity;
    if (name == "dosage") return SplitKind::Dosage;
    throw std::invalid_argument("unknown split kind: " + name);
}

CohortSplit split_cohort(const BehaviorDataset& cohort, SplitKind kind,
                         std::optional<double> dosage_threshold) {
    CohortSplit split;
    split.kind = kind;
    split.behavior = BehaviorDataset::empty_like(cohort);
    split.target = BehaviorDataset::empty_like(cohort);

    std::optional<double> threshold = dosage_threshold;
    if (kind == SplitKind::Dosage && !threshold) {
        if (cohort.empty()) throw std::invalid_argument("split_cohort: empty cohort");
        std::vector<double> doses;
        doses.reserve(cohort.size());
        for (const auto& s : cohort.samples) doses.push_back(cohort.actions.dosages[s.action_index]);
        std::sort(doses.begin(), doses.end());
        const std::size_t n = doses.size();
        threshold = (n % 2 == 1) ? doses[n / 2] : 0.5 * (doses[n / 2 - 1] + doses[n / 2]);
    }
    split.dosage_threshold = kind == SplitKind::Dosage ? threshold : std::nullopt;

    for (const auto& s : cohort.samples) {
        bool to_target = false;
        switch (kind) {
            case SplitKind::Gender: to_target = s.context.gender == Gender::Male; break;
            case SplitKind::Comorbidity: to_target = s.context.comorbidity_flag; break;
            case SplitKind::Dosage:
                to_target = cohort.actions.dosages[s.action_index] >= *threshold;
                break;
        }
        (to_target ? split.target : split.behavior).samples.push_back(s);
    }

    if (split.behavior.empty() || split.target.empty()) {
        throw std::runtime_error(std::string("degenerate ") + split_kind_name(kind) +
                                 " split: one partition is empty");
    }
    return split;
}

double expected_reward(const ClinicalContext& context, std::size_t action_index,
                       const SimConfig& config) {
    const ActionSpace actions = ActionSpace::for_task(config.task);
    const RewardSpec spec = RewardSpec::for_task(config.task);
    const double mu = outcome_model(context, actions.dose(action_index), config);
    const double sigma = config.noise_sd;
    const double lo = config.lab_clamp.lo;
    const double hi = config.lab_clamp.hi;

    if (sigma == 0.0) return reward_of_lab(config.lab_clamp.apply(mu), spec);

    // Clamp boundaries contribute point masses; between them the integrand is
    // smooth on each side of the reference range, so integrate segment-wise.
    double value = reward_of_lab(lo, spec) * normal_cdf(lo, mu, sigma) +
                   reward_of_lab(hi, spec) * (1.0 - normal_cdf(hi, mu, sigma));

    // Restrict each smooth segment to the noise distribution's effective
    // support so the nodes resolve narrow spikes (mass beyond 10 sigma is
    // far below the error budget).
    const double support_lo = mu - 10.0 * sigma;
    const double support_hi = mu + 10.0 * sigma;
    const double cuts[4] = {lo, clamp(spec.lower, lo, hi), clamp(spec.upper, lo, hi), hi};
    for (int seg = 0; seg < 3; ++seg) {
        const double a = std::max(cuts[seg], support_lo);
        const double b = std::min(cuts[seg + 1], support_hi);
        if (b <= a) continue;
        value += integrate(
            [&](double x) { return reward_of_lab(x, spec) * normal_pdf(x, mu, sigma); }, a, b);
    }
    return value;
}

double true_value(const PolicyFn& policy, std::span<const ClinicalContext> contexts,
                  const SimConfig& config) {
    if (contexts.empty()) throw std::invalid_argument("true_value: no contexts supplied");
    const std::size_t n_actions = ActionSpace::for_task(config.task).size();
    double total = 0.0;
    for (const auto& ctx : contexts) {
        const auto probs = policy(ctx);
        if (probs.size() != n_actions)
            throw std::invalid_argument("true_value: policy probability vector has wrong length");
        double v = 0.0;
        for (std::size_t a = 0; a < n_actions; ++a) {
            if (probs[a] == 0.0) continue;
            v += probs[a] * expected_reward(ctx, a, config);
        }
        total += v;
    }
    return total / static_cast<double>(contexts.size());
}

double true_value_sampled(const PolicyFn& policy, const SimConfig& config, std::size_t n_mc,
                          std::uint64_t seed) {
    if (n_mc == 0) throw std::invalid_argument("true_value_sampled: n_mc must be positive");
    Rng rng(seed);
    std::vector<ClinicalContext> contexts;
    contexts.reserve(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i) contexts.push_back(sample_context(config, rng));
    return true_value(policy, contexts, config);
}

}  // namespace cfope
