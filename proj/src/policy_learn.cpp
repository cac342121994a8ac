#include "cfope/policy_learn.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cfope/rng.hpp"

namespace cfope {
namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& scores) {
    Eigen::VectorXd p = (scores.array() - scores.maxCoeff()).exp();
    return p / p.sum();
}

// Mean negative log-likelihood plus (l2/2) * ||W||^2 over all coefficients
// (intercept included, which keeps the objective strictly convex and the
// softmax parametrization identifiable).
double objective(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& design,
                 const std::vector<std::size_t>& labels, double l2) {
    const Eigen::MatrixXd scores = design * weights.transpose();  // n x K
    double nll = 0.0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double m = scores.row(i).maxCoeff();
        const double lse = m + std::log((scores.row(i).array() - m).exp().sum());
        nll += lse - scores(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]));
    }
    nll /= static_cast<double>(scores.rows());
    return nll + 0.5 * l2 * weights.squaredNorm();
}

}  // namespace

FeatureScaler FeatureScaler::fit(const Eigen::MatrixXd& rows) {
    FeatureScaler scaler;
    const auto n = static_cast<double>(rows.rows());
    scaler.mean.resize(static_cast<std::size_t>(rows.cols()));
    scaler.scale.resize(static_cast<std::size_t>(rows.cols()));
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
        const double mean = rows.col(j).mean();
        const double var = (rows.col(j).array() - mean).square().sum() / n;
        const double sd = std::sqrt(var);
        scaler.mean[static_cast<std::size_t>(j)] = mean;
        scaler.scale[static_cast<std::size_t>(j)] = sd > 0.0 ? sd : 1.0;
    }
    return scaler;
}

Eigen::VectorXd FeatureScaler::apply(const Eigen::VectorXd& row) const {
    if (static_cast<std::size_t>(row.size()) != mean.size())
        throw std::invalid_argument("feature scaler: dimension mismatch");
    Eigen::VectorXd out(row.size());
    for (Eigen::Index j = 0; j < row.size(); ++j) {
        const auto k = static_cast<std::size_t>(j);
        out[j] = (row[j] - mean[k]) / scale[k];
    }
    return out;
}

Eigen::VectorXd PolicyFeatureSpec::extract(const ClinicalContext& context) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(dimension()));
    const auto base = context.predictive_features();
    Eigen::Index j = 0;
    for (const double v : base) out[j++] = v;
    if (include_baseline_lab) out[j++] = context.baseline_lab;
    if (include_comorbidity_flag) out[j++] = context.comorbidity_flag ? 1.0 : 0.0;
    return out;
}

Policy::Policy(ActionSpace actions, PolicyFeatureSpec features, FeatureScaler scaler,
               Eigen::MatrixXd weights)
    : actions_(std::move(actions)),
      features_(features),
      scaler_(std::move(scaler)),
      weights_(std::move(weights)) {
    if (static_cast<std::size_t>(weights_.rows()) != actions_.size() ||
        static_cast<std::size_t>(weights_.cols()) != features_.dimension() + 1)
        throw std::invalid_argument("policy: weight matrix shape mismatch");
}

Policy Policy::point_mass(ActionSpace actions, PolicyFeatureSpec features, FeatureScaler scaler,
                          std::size_t action_index) {
    Eigen::MatrixXd weights =
        Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(actions.size()),
                              static_cast<Eigen::Index>(features.dimension() + 1));
    weights(static_cast<Eigen::Index>(action_index), weights.cols() - 1) = 50.0;
    return Policy(std::move(actions), features, std::move(scaler), std::move(weights));
}

Eigen::VectorXd Policy::scores(const ClinicalContext& context) const {
    Eigen::VectorXd x(weights_.cols());
    x.head(weights_.cols() - 1) = scaler_.apply(features_.extract(context));
    x[weights_.cols() - 1] = 1.0;
    return weights_ * x;
}

std::vector<double> Policy::prob(const ClinicalContext& context) const {
    const Eigen::VectorXd p = softmax(scores(context));
    return {p.data(), p.data() + p.size()};
}

std::vector<double> Policy::propensity(const ClinicalContext& context) const {
    std::vector<double> p = prob(context);
    double sum = 0.0;
    for (auto& v : p) {
        v = std::max(v, kPropensityFloor);
        sum += v;
    }
    for (auto& v : p) v /= sum;
    return p;
}

nlohmann::ordered_json Policy::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["kind"] = "policy";
    j["task"] = task_name(actions_.task);
    j["dosages"] = actions_.dosages;
    j["include_baseline_lab"] = features_.include_baseline_lab;
    j["include_comorbidity_flag"] = features_.include_comorbidity_flag;
    j["scaler_mean"] = scaler_.mean;
    j["scaler_scale"] = scaler_.scale;
    std::vector<std::vector<double>> rows;
    for (Eigen::Index k = 0; k < weights_.rows(); ++k) {
        rows.emplace_back(weights_.row(k).begin(), weights_.row(k).end());
    }
    j["weights"] = rows;
    return j;
}

Policy Policy::from_json(const nlohmann::json& j) {
    if (j.at("kind").get<std::string>() != "policy")
        throw std::invalid_argument("policy json: wrong kind");
    const Task task = task_from_name(j.at("task").get<std::string>());
    ActionSpace actions = ActionSpace::for_task(task);
    if (j.at("dosages").get<std::vector<double>>() != actions.dosages)
        throw std::invalid_argument("policy json: dosages do not match the task's action space");
    PolicyFeatureSpec features;
    features.include_baseline_lab = j.at("include_baseline_lab").get<bool>();
    features.include_comorbidity_flag = j.at("include_comorbidity_flag").get<bool>();
    FeatureScaler scaler;
    scaler.mean = j.at("scaler_mean").get<std::vector<double>>();
    scaler.scale = j.at("scaler_scale").get<std::vector<double>>();
    const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd weights(static_cast<Eigen::Index>(rows.size()),
                            static_cast<Eigen::Index>(rows.empty() ? 0 : rows[0].size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t c = 0; c < rows[k].size(); ++c)
            weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = rows[k][c];
    }
    return Policy(std::move(actions), features, std::move(scaler), std::move(weights));
}

CloneResult clone_policy(const BehaviorDataset& dataset, std::uint64_t seed,
                         const CloneOptions& options) {
    if (dataset.empty()) throw std::invalid_argument("clone_policy: dataset is empty");
    if (!(options.train_frac > 0.0 && options.train_frac < 1.0))
        throw std::invalid_argument("clone_policy: train_frac must be in (0, 1)");

    const std::size_t n = dataset.size();
    const std::size_t n_actions = dataset.actions.size();
    const auto dim = static_cast<Eigen::Index>(options.features.dimension());

    Eigen::MatrixXd raw(static_cast<Eigen::Index>(n), dim);
    for (std::size_t i = 0; i < n; ++i)
        raw.row(static_cast<Eigen::Index>(i)) = options.features.extract(dataset.samples[i].context);

    std::set<std::size_t> distinct;
    for (const auto& s : dataset.samples) distinct.insert(s.action_index);
    if (distinct.size() < 2) {
        // Single observed action: cloning is trivial and accuracy is nominal.
        FeatureScaler scaler = FeatureScaler::fit(raw);
        Policy policy = Policy::point_mass(dataset.actions, options.features, std::move(scaler),
                                           *distinct.begin());
        return CloneResult{std::move(policy), 1.0, true};
    }

    // Seed-reproducible shuffle, then train/validation split.
    Rng rng(seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + rng.uniform_index(n - i);
        std::swap(order[i], order[j]);
    }
    std::size_t n_train = static_cast<std::size_t>(options.train_frac * static_cast<double>(n));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

    Eigen::MatrixXd train_raw(static_cast<Eigen::Index>(n_train), dim);
    std::vector<std::size_t> train_labels(n_train);
    for (std::size_t i = 0; i < n_train; ++i) {
        train_raw.row(static_cast<Eigen::Index>(i)) = raw.row(static_cast<Eigen::Index>(order[i]));
        train_labels[i] = dataset.samples[order[i]].action_index;
    }
    FeatureScaler scaler = FeatureScaler::fit(train_raw);

    Eigen::MatrixXd design(static_cast<Eigen::Index>(n_train), dim + 1);
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
        design.row(i).head(dim) = scaler.apply(train_raw.row(i).transpose()).transpose();
        design(i, dim) = 1.0;
    }

    const auto k_actions = static_cast<Eigen::Index>(n_actions);
    const Eigen::Index p = dim + 1;
    Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(k_actions, p);
    const double inv_n = 1.0 / static_cast<double>(n_train);

    double current = objective(weights, design, train_labels, options.l2);
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        const Eigen::MatrixXd scores = design * weights.transpose();
        Eigen::MatrixXd probs(scores.rows(), scores.cols());
        for (Eigen::Index i = 0; i < scores.rows(); ++i)
            probs.row(i) = softmax(scores.row(i).transpose()).transpose();

        Eigen::MatrixXd residual = probs;
        for (std::size_t i = 0; i < n_train; ++i)
            residual(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(train_labels[i])) -= 1.0;
        const Eigen::MatrixXd grad =
            residual.transpose() * design * inv_n + options.l2 * weights;  // K x p
        if (grad.cwiseAbs().maxCoeff() < options.gradient_tolerance) break;

        // Full multinomial Hessian in (class-major) block form.
        Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(k_actions * p, k_actions * p);
        for (Eigen::Index k = 0; k < k_actions; ++k) {
            for (Eigen::Index l = k; l < k_actions; ++l) {
                Eigen::ArrayXd w = probs.col(k).array() * ((k == l ? 1.0 : 0.0) - probs.col(l).array());
                const Eigen::MatrixXd block =
                    design.transpose() * w.matrix().asDiagonal() * design * inv_n;
                hess.block(k * p, l * p, p, p) = block;
                if (l != k) hess.block(l * p, k * p, p, p) = block;
            }
        }
        hess.diagonal().array() += options.l2;

        Eigen::VectorXd grad_vec(k_actions * p);
        for (Eigen::Index k = 0; k < k_actions; ++k)
            grad_vec.segment(k * p, p) = grad.row(k).transpose();
        const Eigen::VectorXd step_vec = hess.ldlt().solve(-grad_vec);
        Eigen::MatrixXd step(k_actions, p);
        for (Eigen::Index k = 0; k < k_actions; ++k)
            step.row(k) = step_vec.segment(k * p, p).transpose();

        // Backtracking line search (Armijo).
        const double slope = (grad.array() * step.array()).sum();
        double t = 1.0;
        double next = objective(weights + t * step, design, train_labels, options.l2);
        int halvings = 0;
        while (next > current + 1e-4 * t * slope && halvings < 40) {
            t *= 0.5;
            ++halvings;
            next = objective(weights + t * step, design, train_labels, options.l2);
        }
        weights += t * step;
        current = next;
    }

    Policy policy(dataset.actions, options.features, std::move(scaler), std::move(weights));

    std::size_t correct = 0;
    for (std::size_t i = n_train; i < n; ++i) {
        const auto& sample = dataset.samples[order[i]];
        const auto probs = policy.prob(sample.context);
        const std::size_t argmax =
            static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
        if (argmax == sample.action_index) ++correct;
    }
    const double accuracy = static_cast<double>(correct) / static_cast<double>(n - n_train);
    return CloneResult{std::move(policy), accuracy, false};
}

}  // namespace cfope
