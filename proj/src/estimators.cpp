#include "cfope/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace cfope {
namespace {

struct FitRow {
    std::int64_t sample_id;
    std::size_t action_index;
    bool is_annotation;
    const std::string* source_id;  // empty string for behavior rows
    const ClinicalContext* context;
    double reward;
};

const std::string kBehaviorSource;

}  // namespace

RewardModel::RewardModel(ActionSpace actions, RewardModelOptions options, FeatureScaler scaler,
                         Eigen::VectorXd weights)
    : actions_(std::move(actions)),
      options_(options),
      scaler_(std::move(scaler)),
      weights_(std::move(weights)) {
    if (static_cast<std::size_t>(weights_.size()) != n_coefficients())
        throw std::invalid_argument("reward model: weight vector length mismatch");
}

std::size_t RewardModel::n_coefficients() const {
    if (actions_.size() == 0) return 0;
    const std::size_t d = kNumPredictiveFeatures + (options_.include_baseline_lab ? 1 : 0) +
                          (options_.include_comorbidity_flag ? 1 : 0);
    const std::size_t indicators = actions_.size() - 1;
    return d + indicators + (options_.interactions ? d * indicators : 0) + 1;
}

Eigen::VectorXd RewardModel::raw_context(const ClinicalContext& context) const {
    const std::size_t d = kNumPredictiveFeatures + (options_.include_baseline_lab ? 1 : 0) +
                          (options_.include_comorbidity_flag ? 1 : 0);
    Eigen::VectorXd out(static_cast<Eigen::Index>(d));
    const auto base = context.predictive_features();
    Eigen::Index j = 0;
    for (const double v : base) out[j++] = v;
    if (options_.include_baseline_lab) out[j++] = context.baseline_lab;
    if (options_.include_comorbidity_flag) out[j++] = context.comorbidity_flag ? 1.0 : 0.0;
    return out;
}

Eigen::VectorXd RewardModel::features(const ClinicalContext& context,
                                      std::size_t action_index) const {
    if (action_index >= actions_.size())
        throw std::invalid_argument("reward model: action index out of range");
    const Eigen::VectorXd ctx = scaler_.apply(raw_context(context));
    const auto d = ctx.size();
    const auto indicators = static_cast<Eigen::Index>(actions_.size() - 1);

    Eigen::VectorXd row = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_coefficients()));
    row.head(d) = ctx;
    if (action_index > 0) row[d + static_cast<Eigen::Index>(action_index) - 1] = 1.0;
    if (options_.interactions && action_index > 0) {
        const Eigen::Index offset = d + indicators + (static_cast<Eigen::Index>(action_index) - 1) * d;
        row.segment(offset, d) = ctx;
    }
    row[row.size() - 1] = 1.0;  // intercept
    return row;
}

double RewardModel::predict(const ClinicalContext& context, std::size_t action_index) const {
    return features(context, action_index).dot(weights_);
}

double RewardModel::predict_clipped(const ClinicalContext& context, std::size_t action_index) const {
    return std::clamp(predict(context, action_index), 0.0, 1.0);
}

RewardModel fit_reward_model(const BehaviorDataset& dataset, const AnnotationSet* annotations,
                             const RewardModelOptions& options) {
    if (dataset.empty()) throw std::invalid_argument("fit_reward_model: dataset is empty");
    if (annotations && annotations->task != dataset.task)
        throw std::invalid_argument("fit_reward_model: annotation task does not match dataset");

    std::vector<FitRow> rows;
    rows.reserve(dataset.size() + (annotations ? annotations->size() : 0));
    for (const auto& s : dataset.samples) {
        rows.push_back({s.id, s.action_index, false, &kBehaviorSource, &s.context, s.reward});
    }
    if (annotations && !annotations->empty()) {
        // Resolve annotation contexts through the dataset; duplicate ids (as in
        // bootstrap resamples) all map to the same context.
        std::unordered_map<std::int64_t, const ClinicalContext*> context_by_id;
        context_by_id.reserve(dataset.size());
        for (const auto& s : dataset.samples) context_by_id.emplace(s.id, &s.context);
        for (const auto& a : annotations->items) {
            const auto it = context_by_id.find(a.sample_id);
            if (it == context_by_id.end())
                throw std::invalid_argument("fit_reward_model: annotation references sample " +
                                            std::to_string(a.sample_id) +
                                            " absent from the dataset");
            if (a.action_index >= dataset.actions.size())
                throw std::invalid_argument("fit_reward_model: annotation action out of range");
            rows.push_back({a.sample_id, a.action_index, true, &a.source_id, it->second, a.reward});
        }
    }

    // Canonical row order makes the fit invariant to input order: equal keys
    // can only carry identical design rows, so ties are harmless.
    std::stable_sort(rows.begin(), rows.end(), [](const FitRow& a, const FitRow& b) {
        if (a.sample_id != b.sample_id) return a.sample_id < b.sample_id;
        if (a.action_index != b.action_index) return a.action_index < b.action_index;
        if (a.is_annotation != b.is_annotation) return !a.is_annotation;
        return *a.source_id < *b.source_id;
    });

    // Standardization statistics over the union's raw context features.
    const std::size_t d = kNumPredictiveFeatures + (options.include_baseline_lab ? 1 : 0) +
                          (options.include_comorbidity_flag ? 1 : 0);
    const std::size_t indicators = dataset.actions.size() - 1;
    const std::size_t n_coeffs = d + indicators + (options.interactions ? d * indicators : 0) + 1;
    Eigen::MatrixXd raw(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto base = rows[i].context->predictive_features();
        Eigen::Index j = 0;
        for (const double v : base) raw(static_cast<Eigen::Index>(i), j++) = v;
        if (options.include_baseline_lab)
            raw(static_cast<Eigen::Index>(i), j++) = rows[i].context->baseline_lab;
        if (options.include_comorbidity_flag)
            raw(static_cast<Eigen::Index>(i), j++) = rows[i].context->comorbidity_flag ? 1.0 : 0.0;
    }
    FeatureScaler scaler = FeatureScaler::fit(raw);

    RewardModel shape(dataset.actions, options, scaler,
                      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_coeffs)));
    const auto p = static_cast<Eigen::Index>(n_coeffs);

    Eigen::MatrixXd design(static_cast<Eigen::Index>(rows.size()), p);
    Eigen::VectorXd response(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        design.row(static_cast<Eigen::Index>(i)) =
            shape.features(*rows[i].context, rows[i].action_index).transpose();
        response[static_cast<Eigen::Index>(i)] = rows[i].reward;
    }

    double lambda = options.ridge_lambda;
    if (lambda == 0.0 && design.rows() < p) lambda = kDefaultRidgeLambda;

    Eigen::VectorXd weights;
    if (lambda > 0.0) {
        Eigen::MatrixXd gram = design.transpose() * design;
        gram.diagonal().array() += lambda;
        weights = gram.ldlt().solve(design.transpose() * response);
    } else {
        const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
        if (qr.rank() < p)
            throw RankDeficientError(
                "fit_reward_model: design is rank-deficient (unobserved actions or collinear "
                "features); set options.ridge_lambda (e.g. 1e-6) to regularize");
        weights = qr.solve(response);
    }
    return RewardModel(dataset.actions, options, std::move(scaler), std::move(weights));
}

double dm_value(const Policy& policy, std::span<const ClinicalContext> contexts,
                const RewardModel& model) {
    if (contexts.empty()) throw std::invalid_argument("dm_value: no contexts supplied");
    if (policy.actions().size() != model.actions().size())
        throw std::invalid_argument("dm_value: policy and model action spaces differ");
    double total = 0.0;
    for (const auto& ctx : contexts) {
        const auto probs = policy.prob(ctx);
        double v = 0.0;
        for (std::size_t a = 0; a < probs.size(); ++a) {
            if (probs[a] == 0.0) continue;
            v += probs[a] * model.predict_clipped(ctx, a);
        }
        total += v;
    }
    return total / static_cast<double>(contexts.size());
}

double dm_plus_value(const Policy& policy, std::span<const ClinicalContext> contexts,
                     const BehaviorDataset& dataset, const AnnotationSet& annotations,
                     const RewardModelOptions& options) {
    const RewardModel model = fit_reward_model(dataset, &annotations, options);
    return dm_value(policy, contexts, model);
}

IsResult is_value(const Policy& policy_e, const Policy& policy_b, const BehaviorDataset& dataset) {
    if (dataset.empty()) throw std::invalid_argument("is_value: dataset is empty");
    if (policy_e.actions().size() != policy_b.actions().size())
        throw std::invalid_argument("is_value: policies have different action spaces");

    IsResult result;
    double weight_sum = 0.0;
    double weight_sq_sum = 0.0;
    double value_sum = 0.0;
    for (const auto& s : dataset.samples) {
        const auto pe = policy_e.propensity(s.context);
        const auto pb = policy_b.propensity(s.context);
        const double w = pe[s.action_index] / pb[s.action_index];
        value_sum += w * s.reward;
        weight_sum += w;
        weight_sq_sum += w * w;
        result.max_weight = std::max(result.max_weight, w);
    }
    const double n = static_cast<double>(dataset.size());
    result.value = value_sum / n;
    result.mean_weight = weight_sum / n;
    const double ess = weight_sq_sum > 0.0 ? weight_sum * weight_sum / weight_sq_sum : 0.0;
    result.ess_fraction = ess / n;
    result.high_variance =
        result.ess_fraction < 0.1 || result.mean_weight < 0.5 || result.mean_weight > 2.0;
    return result;
}

}  // namespace cfope
