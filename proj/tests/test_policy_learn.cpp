#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cfope/cohort_sim.hpp"
#include "cfope/policy_learn.hpp"
#include "support/frozen_fixtures.hpp"
#include "support/test_util.hpp"

using namespace cfope;

namespace {

BehaviorDataset default_potassium_cohort(std::uint64_t seed = 7) {
    SimConfig config = SimConfig::defaults(Task::Potassium);
    config.seed = seed;
    return generate_cohort(config);
}

}  // namespace

TEST_CASE("cloning the heuristic dosing rule beats 90% validation accuracy") {
    const auto cohort = default_potassium_cohort();
    const auto result = clone_policy(cohort, 1);
    CHECK_FALSE(result.degenerate_single_action);
    CHECK(result.validation_accuracy > 0.90);
}

TEST_CASE("single-action datasets clone to a point mass") {
    BehaviorDataset d = testutil::empty_dataset();
    for (int i = 0; i < 20; ++i)
        d.samples.push_back(make_sample(i, testutil::make_context(2.5 + 0.02 * i), 2, 4.0,
                                        d.reward_spec));
    const auto result = clone_policy(d, 3);
    CHECK(result.degenerate_single_action);
    CHECK(result.validation_accuracy == 1.0);

    const auto probs = result.policy.prob(testutil::make_context());
    CHECK(probs[2] == doctest::Approx(1.0).epsilon(1e-9));

    // Floored propensity of a point mass: (1 - (|A|-1) eps') with eps' the
    // renormalized floor.
    const auto floored = result.policy.propensity(testutil::make_context());
    const double eps_prime = kPropensityFloor / (1.0 + 3.0 * kPropensityFloor);
    CHECK(floored[2] == doctest::Approx(1.0 - 3.0 * eps_prime).epsilon(1e-9));
    CHECK(floored[0] == doctest::Approx(eps_prime).epsilon(1e-9));
    double sum = 0.0;
    for (const double p : floored) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("known logistic generator is recovered within 0.05 at 10^4 samples") {
    // Two informative features (baseline_lab, serum_creatinine); everything
    // else constant. Actions 0/1 drawn from a logistic rule.
    BehaviorDataset d = testutil::empty_dataset();
    Rng rng(12);
    const double w_baseline = 2.0, w_creat = -1.0, intercept = 0.3;
    const double baseline_mu = 3.0, baseline_sd = 0.4, creat_mu = 1.2, creat_sd = 0.35;
    for (int i = 0; i < 10'000; ++i) {
        const double baseline = rng.normal(baseline_mu, baseline_sd);
        const double creat = std::max(0.1, rng.normal(creat_mu, creat_sd));
        auto ctx = testutil::make_context(baseline, creat);
        const double z = w_baseline * (baseline - baseline_mu) / baseline_sd +
                         w_creat * (creat - creat_mu) / creat_sd + intercept;
        const double p1 = 1.0 / (1.0 + std::exp(-z));
        const std::size_t action = rng.uniform() < p1 ? 1 : 0;
        d.samples.push_back(make_sample(i, std::move(ctx), action, 4.0, d.reward_spec));
    }
    const auto result = clone_policy(d, 5);
    CHECK_FALSE(result.degenerate_single_action);

    Rng probe(77);
    for (int i = 0; i < 50; ++i) {
        const double baseline = probe.normal(baseline_mu, baseline_sd);
        const double creat = std::max(0.1, probe.normal(creat_mu, creat_sd));
        const auto ctx = testutil::make_context(baseline, creat);
        const double z = w_baseline * (baseline - baseline_mu) / baseline_sd +
                         w_creat * (creat - creat_mu) / creat_sd + intercept;
        const double p1 = 1.0 / (1.0 + std::exp(-z));
        const auto probs = result.policy.prob(ctx);
        CHECK(std::abs(probs[1] - p1) < 0.05);
    }
}

TEST_CASE("zero weights give the uniform propensity vector") {
    const auto actions = ActionSpace::for_task(Task::Potassium);
    PolicyFeatureSpec features;
    FeatureScaler scaler;
    scaler.mean.assign(features.dimension(), 0.0);
    scaler.scale.assign(features.dimension(), 1.0);
    const Policy policy(actions, features, scaler,
                        Eigen::MatrixXd::Zero(4, static_cast<Eigen::Index>(features.dimension() + 1)));
    const auto probs = policy.prob(testutil::make_context());
    for (const double p : probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
    const auto floored = policy.propensity(testutil::make_context());
    for (const double p : floored) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("propensity matches the frozen reference softmax") {
    const auto actions = ActionSpace::for_task(Task::Potassium);
    PolicyFeatureSpec features;  // 15 predictive + baseline_lab
    REQUIRE(features.dimension() == 16);
    FeatureScaler scaler;
    scaler.mean = frozen::softmax_scaler_mean;
    scaler.scale = frozen::softmax_scaler_scale;
    Eigen::MatrixXd weights(4, 17);
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 17; ++j) weights(k, j) = frozen::softmax_weights[k][j];

    const auto& raw = frozen::softmax_raw_features;
    ClinicalContext ctx;
    ctx.age = raw[0];
    ctx.gender = raw[1] == 1.0 ? Gender::Male : Gender::Female;
    ctx.weight = raw[2];
    ctx.height = raw[3];
    ctx.heart_rate = raw[4];
    ctx.respiratory_rate = raw[5];
    ctx.spo2 = raw[6];
    ctx.systolic_bp = raw[7];
    ctx.diastolic_bp = raw[8];
    ctx.serum_creatinine = raw[9];
    ctx.nacl_09_given = raw[10];
    ctx.dextrose_5_given = raw[11];
    ctx.propofol_given = raw[12];
    ctx.norepinephrine_given = raw[13];
    ctx.insulin_given = raw[14];
    ctx.baseline_lab = raw[15];

    const Policy policy(actions, features, scaler, weights);
    const auto probs = policy.prob(ctx);
    REQUIRE(probs.size() == frozen::softmax_expected_probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k)
        CHECK(probs[k] == doctest::Approx(frozen::softmax_expected_probs[k]).epsilon(1e-9));
}

TEST_CASE("softmax scores are translation invariant") {
    const auto cohort = default_potassium_cohort();
    const auto result = clone_policy(cohort, 2);
    Eigen::MatrixXd shifted = result.policy.weights();
    shifted.col(shifted.cols() - 1).array() += 13.75;  // constant on every intercept

    // Rebuild with the original scaler by serializing and patching weights.
    auto j = result.policy.to_json();
    std::vector<std::vector<double>> rows;
    for (Eigen::Index k = 0; k < shifted.rows(); ++k)
        rows.emplace_back(shifted.row(k).begin(), shifted.row(k).end());
    j["weights"] = rows;
    const Policy same_scaler = Policy::from_json(j);

    Rng rng(6);
    SimConfig config = SimConfig::defaults(Task::Potassium);
    for (int i = 0; i < 25; ++i) {
        const auto ctx = sample_context(config, rng);
        const auto a = result.policy.prob(ctx);
        const auto b = same_scaler.prob(ctx);
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-12);
    }
}

TEST_CASE("cloning is deterministic and accuracy comes from held-out data") {
    SimConfig config = SimConfig::defaults(Task::Potassium);
    config.n_patients = 400;
    config.seed = 13;
    const auto cohort = generate_cohort(config);
    const auto a = clone_policy(cohort, 42);
    const auto b = clone_policy(cohort, 42);
    CHECK(a.validation_accuracy == b.validation_accuracy);
    CHECK(a.policy.weights() == b.policy.weights());

    const auto c = clone_policy(cohort, 43);  // different split
    CHECK(a.policy.weights() != c.policy.weights());
}

TEST_CASE("policy probabilities are a simplex point") {
    const auto cohort = default_potassium_cohort();
    const auto result = clone_policy(cohort, 2);
    Rng rng(31);
    SimConfig config = SimConfig::defaults(Task::Potassium);
    for (int i = 0; i < 100; ++i) {
        const auto probs = result.policy.prob(sample_context(config, rng));
        double sum = 0.0;
        for (const double p : probs) {
            CHECK(p >= 0.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("policy JSON round-trip preserves behavior") {
    const auto cohort = default_potassium_cohort();
    const auto result = clone_policy(cohort, 2);
    const Policy restored = Policy::from_json(result.policy.to_json());
    Rng rng(8);
    SimConfig config = SimConfig::defaults(Task::Potassium);
    for (int i = 0; i < 25; ++i) {
        const auto ctx = sample_context(config, rng);
        CHECK(result.policy.prob(ctx) == restored.prob(ctx));
    }
    CHECK_THROWS_AS((void)clone_policy(cohort, 1, CloneOptions{.train_frac = 1.5}),
                    std::invalid_argument);
}
