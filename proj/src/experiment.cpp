#include "cfope/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cfope/dataset_io.hpp"
#include "cfope/format.hpp"

namespace cfope {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

const char* const kDefaultDomainText =
    "The most predictive features for the post-treatment serum level are the baseline lab value, "
    "the administered dose, renal function (serum creatinine), relevant comorbidities, body "
    "composition, and concurrently administered fluids and insulin. Responses scale with dose and "
    "are damped or amplified by clearance.";

const char* annotator_kind_name(AnnotatorKind kind) {
    switch (kind) {
        case AnnotatorKind::Oracle: return "oracle";
        case AnnotatorKind::Noisy: return "noisy";
        case AnnotatorKind::Llm: return "llm";
        case AnnotatorKind::Mock: return "mock";
    }
    return "unknown";
}

AnnotatorKind annotator_kind_from_name(const std::string& name) {
    if (name == "oracle") return AnnotatorKind::Oracle;
    if (name == "noisy") return AnnotatorKind::Noisy;
    if (name == "llm") return AnnotatorKind::Llm;
    if (name == "mock") return AnnotatorKind::Mock;
    throw ConfigError("annotator.kind", "unknown annotator: " + name);
}

namespace {

ordered_json gaussian_to_json(const GaussianFeature& f) {
    return ordered_json{{"mean", f.mean}, {"sd", f.sd}, {"lo", f.lo}, {"hi", f.hi}};
}

GaussianFeature gaussian_from_json(const json& j, GaussianFeature base) {
    base.mean = j.value("mean", base.mean);
    base.sd = j.value("sd", base.sd);
    base.lo = j.value("lo", base.lo);
    base.hi = j.value("hi", base.hi);
    return base;
}

ordered_json medication_to_json(const MedicationFeature& f) {
    return ordered_json{
        {"prob", f.prob}, {"mean", f.mean}, {"sd", f.sd}, {"lo", f.lo}, {"hi", f.hi}};
}

MedicationFeature medication_from_json(const json& j, MedicationFeature base) {
    base.prob = j.value("prob", base.prob);
    base.mean = j.value("mean", base.mean);
    base.sd = j.value("sd", base.sd);
    base.lo = j.value("lo", base.lo);
    base.hi = j.value("hi", base.hi);
    return base;
}

void write_text_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << content;
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

PolicyFn policy_fn(const Policy& policy) {
    return [&policy](const ClinicalContext& ctx) { return policy.prob(ctx); };
}

AnnotationSet prefix(const AnnotationSet& set, std::size_t k) {
    AnnotationSet out;
    out.task = set.task;
    out.items.assign(set.items.begin(),
                     set.items.begin() + static_cast<std::ptrdiff_t>(std::min(k, set.size())));
    return out;
}

}  // namespace

ordered_json sim_config_to_json(const SimConfig& c) {
    ordered_json j;
    j["n_patients"] = c.n_patients;
    j["seed"] = c.seed;
    j["noise_sd"] = c.noise_sd;
    ordered_json f;
    f["age"] = gaussian_to_json(c.features.age);
    f["male_fraction"] = c.features.male_fraction;
    f["weight"] = gaussian_to_json(c.features.weight);
    f["height"] = gaussian_to_json(c.features.height);
    f["heart_rate"] = gaussian_to_json(c.features.heart_rate);
    f["respiratory_rate"] = gaussian_to_json(c.features.respiratory_rate);
    f["spo2"] = gaussian_to_json(c.features.spo2);
    f["systolic_bp"] = gaussian_to_json(c.features.systolic_bp);
    f["diastolic_bp"] = gaussian_to_json(c.features.diastolic_bp);
    f["serum_creatinine"] = gaussian_to_json(c.features.serum_creatinine);
    f["creatinine_comorbid_shift"] = c.features.creatinine_comorbid_shift;
    f["nacl_09"] = medication_to_json(c.features.nacl_09);
    f["dextrose_5"] = medication_to_json(c.features.dextrose_5);
    f["propofol"] = medication_to_json(c.features.propofol);
    f["norepinephrine"] = medication_to_json(c.features.norepinephrine);
    f["insulin"] = medication_to_json(c.features.insulin);
    f["comorbidity_rate"] = c.features.comorbidity_rate;
    f["baseline_lab"] = gaussian_to_json(c.features.baseline_lab);
    j["features"] = f;
    j["behavior"] = ordered_json{{"gain", c.behavior.gain},
                                 {"anchor", c.behavior.anchor},
                                 {"temperature", c.behavior.temperature},
                                 {"comorbid_caution", c.behavior.comorbid_caution},
                                 {"dose_unit", c.behavior.dose_unit}};
    j["outcome"] = ordered_json{{"drift", c.outcome.drift},
                                {"kappa", c.outcome.kappa},
                                {"rho", c.outcome.rho},
                                {"creatinine_scale", c.outcome.creatinine_scale},
                                {"g_lo", c.outcome.g_lo},
                                {"g_hi", c.outcome.g_hi}};
    j["lab_clamp"] = ordered_json{{"lo", c.lab_clamp.lo}, {"hi", c.lab_clamp.hi}};
    return j;
}

SimConfig sim_config_from_json(const json& j, Task task, std::uint64_t default_seed) {
    SimConfig c = SimConfig::defaults(task);
    c.seed = default_seed;
    if (j.is_null()) return c;
    c.n_patients = j.value("n_patients", c.n_patients);
    c.seed = j.value("seed", c.seed);
    c.noise_sd = j.value("noise_sd", c.noise_sd);
    if (j.contains("features")) {
        const json& f = j["features"];
        auto& feats = c.features;
        if (f.contains("age")) feats.age = gaussian_from_json(f["age"], feats.age);
        feats.male_fraction = f.value("male_fraction", feats.male_fraction);
        if (f.contains("weight")) feats.weight = gaussian_from_json(f["weight"], feats.weight);
        if (f.contains("height")) feats.height = gaussian_from_json(f["height"], feats.height);
        if (f.contains("heart_rate"))
            feats.heart_rate = gaussian_from_json(f["heart_rate"], feats.heart_rate);
        if (f.contains("respiratory_rate"))
            feats.respiratory_rate = gaussian_from_json(f["respiratory_rate"], feats.respiratory_rate);
        if (f.contains("spo2")) feats.spo2 = gaussian_from_json(f["spo2"], feats.spo2);
        if (f.contains("systolic_bp"))
            feats.systolic_bp = gaussian_from_json(f["systolic_bp"], feats.systolic_bp);
        if (f.contains("diastolic_bp"))
            feats.diastolic_bp = gaussian_from_json(f["diastolic_bp"], feats.diastolic_bp);
        if (f.contains("serum_creatinine"))
            feats.serum_creatinine = gaussian_from_json(f["serum_creatinine"], feats.serum_creatinine);
        feats.creatinine_comorbid_shift =
            f.value("creatinine_comorbid_shift", feats.creatinine_comorbid_shift);
        if (f.contains("nacl_09")) feats.nacl_09 = medication_from_json(f["nacl_09"], feats.nacl_09);
        if (f.contains("dextrose_5"))
            feats.dextrose_5 = medication_from_json(f["dextrose_5"], feats.dextrose_5);
        if (f.contains("propofol"))
            feats.propofol = medication_from_json(f["propofol"], feats.propofol);
        if (f.contains("norepinephrine"))
            feats.norepinephrine = medication_from_json(f["norepinephrine"], feats.norepinephrine);
        if (f.contains("insulin")) feats.insulin = medication_from_json(f["insulin"], feats.insulin);
        feats.comorbidity_rate = f.value("comorbidity_rate", feats.comorbidity_rate);
        if (f.contains("baseline_lab"))
            feats.baseline_lab = gaussian_from_json(f["baseline_lab"], feats.baseline_lab);
    }
    if (j.contains("behavior")) {
        const json& b = j["behavior"];
        c.behavior.gain = b.value("gain", c.behavior.gain);
        c.behavior.anchor = b.value("anchor", c.behavior.anchor);
        c.behavior.temperature = b.value("temperature", c.behavior.temperature);
        c.behavior.comorbid_caution = b.value("comorbid_caution", c.behavior.comorbid_caution);
        c.behavior.dose_unit = b.value("dose_unit", c.behavior.dose_unit);
    }
    if (j.contains("outcome")) {
        const json& o = j["outcome"];
        c.outcome.drift = o.value("drift", c.outcome.drift);
        c.outcome.kappa = o.value("kappa", c.outcome.kappa);
        c.outcome.rho = o.value("rho", c.outcome.rho);
        c.outcome.creatinine_scale = o.value("creatinine_scale", c.outcome.creatinine_scale);
        c.outcome.g_lo = o.value("g_lo", c.outcome.g_lo);
        c.outcome.g_hi = o.value("g_hi", c.outcome.g_hi);
    }
    if (j.contains("lab_clamp")) {
        c.lab_clamp.lo = j["lab_clamp"].value("lo", c.lab_clamp.lo);
        c.lab_clamp.hi = j["lab_clamp"].value("hi", c.lab_clamp.hi);
    }
    return c;
}

void ExperimentConfig::validate() const {
    if (simulate.has_value() == csv_path.has_value())
        throw ConfigError("data", "exactly one of data.simulate and data.csv_path is required");
    if (simulate) {
        try {
            simulate->validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError("data.simulate", e.what());
        }
    }
    if (n_boot < 1) throw ConfigError("n_boot", "must be >= 1");
    if (entropy_step < 1) throw ConfigError("entropy_step", "must be >= 1");
    if (schedule.empty()) throw ConfigError("schedule", "must list at least one annotation count");
    if (annotator.kind == AnnotatorKind::Noisy && annotator.noise_sd < 0.0)
        throw ConfigError("annotator.noise_sd", "must be >= 0");
    if ((annotator.kind == AnnotatorKind::Oracle || annotator.kind == AnnotatorKind::Noisy) &&
        !simulate)
        throw ConfigError("annotator.kind",
                          "oracle annotators need the simulator data source (data.simulate)");
    if (annotator.kind == AnnotatorKind::Llm) {
        try {
            annotator.endpoint.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError("annotator.endpoint", e.what());
        }
    }
    if (out_dir.empty()) throw ConfigError("out_dir", "must not be empty");
}

ordered_json ExperimentConfig::to_json() const {
    ordered_json j;
    j["schema_version"] = 1;
    j["task"] = task_name(task);
    j["split"] = split_kind_name(split);
    if (simulate)
        j["data"] = ordered_json{{"simulate", sim_config_to_json(*simulate)}};
    else
        j["data"] = ordered_json{{"csv_path", csv_path.value_or("")}};
    ordered_json a;
    a["kind"] = annotator_kind_name(annotator.kind);
    a["noise_sd"] = annotator.noise_sd;
    if (annotator.kind == AnnotatorKind::Llm) {
        ordered_json e;
        e["base_url"] = annotator.endpoint.base_url;
        e["model_name"] = annotator.endpoint.model_name;
        e["api_key_env_var"] = annotator.endpoint.api_key_env_var;
        if (annotator.endpoint.temperature)
            e["temperature"] = *annotator.endpoint.temperature;
        else
            e["temperature"] = nullptr;
        e["max_retries"] = annotator.endpoint.max_retries;
        e["timeout_seconds"] = annotator.endpoint.timeout_seconds;
        e["max_concurrency"] = annotator.endpoint.max_concurrency;
        e["backoff_base_ms"] = annotator.endpoint.backoff_base_ms;
        e["provider"] = annotator.endpoint.provider;
        a["endpoint"] = e;
    }
    a["cache_dir"] = annotator.cache_dir;
    a["domain_text"] = annotator.domain_text;
    j["annotator"] = a;
    j["annotation_files"] = annotation_files;
    j["aggregation"] = aggregation_mode_name(aggregation);
    j["use_target_contexts"] = use_target_contexts;
    j["schedule"] = schedule;
    j["n_boot"] = n_boot;
    j["entropy_step"] = entropy_step;
    j["factual_eval_n"] = factual_eval_n;
    j["seed"] = seed;
    j["timestamp"] = timestamp;
    j["out_dir"] = out_dir;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    try {
        if (j.value("schema_version", 1) != 1)
            throw ConfigError("schema_version", "unsupported version");
        c.task = task_from_name(j.value("task", "potassium"));
        c.split = split_kind_from_name(j.value("split", "dosage"));
        c.seed = j.value("seed", c.seed);
        if (j.contains("data")) {
            const json& d = j["data"];
            if (d.contains("simulate") && !d["simulate"].is_null())
                c.simulate = sim_config_from_json(d["simulate"], c.task, c.seed);
            if (d.contains("csv_path") && !d["csv_path"].is_null())
                c.csv_path = d["csv_path"].get<std::string>();
        } else {
            c.simulate = sim_config_from_json(json(nullptr), c.task, c.seed);
        }
        if (j.contains("annotator")) {
            const json& a = j["annotator"];
            c.annotator.kind = annotator_kind_from_name(a.value("kind", "oracle"));
            c.annotator.noise_sd = a.value("noise_sd", c.annotator.noise_sd);
            c.annotator.cache_dir = a.value("cache_dir", std::string{});
            c.annotator.domain_text = a.value("domain_text", std::string(kDefaultDomainText));
            if (a.contains("endpoint")) {
                const json& e = a["endpoint"];
                auto& ep = c.annotator.endpoint;
                ep.base_url = e.value("base_url", std::string{});
                ep.model_name = e.value("model_name", std::string{});
                ep.api_key_env_var = e.value("api_key_env_var", std::string{});
                if (e.contains("temperature") && !e["temperature"].is_null())
                    ep.temperature = e["temperature"].get<double>();
                else if (e.contains("temperature"))
                    ep.temperature = std::nullopt;
                ep.max_retries = e.value("max_retries", ep.max_retries);
                ep.timeout_seconds = e.value("timeout_seconds", ep.timeout_seconds);
                ep.max_concurrency = e.value("max_concurrency", ep.max_concurrency);
                ep.backoff_base_ms = e.value("backoff_base_ms", ep.backoff_base_ms);
                ep.provider = e.value("provider", ep.provider);
            }
        }
        c.annotation_files = j.value("annotation_files", c.annotation_files);
        c.aggregation = aggregation_mode_from_name(j.value("aggregation", "pool"));
        c.use_target_contexts = j.value("use_target_contexts", c.use_target_contexts);
        c.schedule = j.value("schedule", c.schedule);
        c.n_boot = j.value("n_boot", c.n_boot);
        c.entropy_step = j.value("entropy_step", c.entropy_step);
        c.factual_eval_n = j.value("factual_eval_n", c.factual_eval_n);
        c.timestamp = j.value("timestamp", c.timestamp);
        c.out_dir = j.value("out_dir", c.out_dir);
    } catch (const json::exception& e) {
        throw ConfigError("(json)", e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError("(value)", e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("(file)", "cannot open config file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("(file)", std::string("config is not valid JSON: ") + e.what());
    }
    return from_json(j);
}

LoadedExperiment load_experiment(const ExperimentConfig& config) {
    config.validate();
    LoadedExperiment loaded;
    if (config.simulate) {
        loaded.sim = *config.simulate;
        loaded.cohort = generate_cohort(*loaded.sim);
    } else {
        std::ifstream in(*config.csv_path);
        if (!in) throw ConfigError("data.csv_path", "cannot open: " + *config.csv_path);
        loaded.cohort = read_cohort_csv(in, config.task);
    }
    loaded.split = split_cohort(loaded.cohort, config.split);
    return loaded;
}

AnnotatorHandle make_annotator(const ExperimentConfig& config,
                               const std::optional<SimConfig>& sim) {
    AnnotatorHandle handle;
    const std::string cache_dir = config.annotator.cache_dir.empty()
                                      ? (fs::path(config.out_dir) / "cache").string()
                                      : config.annotator.cache_dir;
    switch (config.annotator.kind) {
        case AnnotatorKind::Oracle:
        case AnnotatorKind::Noisy: {
            if (!sim)
                throw ConfigError("annotator.kind", "oracle annotators need data.simulate");
            const double noise =
                config.annotator.kind == AnnotatorKind::Oracle ? 0.0 : config.annotator.noise_sd;
            handle.annotator = std::make_unique<OracleAnnotator>(
                *sim, noise, derive_seed(config.seed, seed_tag::kOracleNoise));
            handle.max_concurrency = 1;
            return handle;
        }
        case AnnotatorKind::Llm: {
            handle.client = std::make_shared<LlmClient>(config.annotator.endpoint, cache_dir);
            handle.annotator = std::make_unique<LlmAnnotator>(handle.client, config.task,
                                                              config.annotator.domain_text);
            handle.max_concurrency = config.annotator.endpoint.max_concurrency;
            return handle;
        }
        case AnnotatorKind::Mock: {
            handle.server = std::make_unique<MockLabServer>(config.task);
            LlmEndpointConfig endpoint;
            endpoint.base_url = handle.server->base_url();
            endpoint.model_name = "mock-lab";
            endpoint.temperature = 0.0;
            endpoint.max_retries = 2;
            endpoint.timeout_seconds = 10.0;
            endpoint.max_concurrency = 4;
            endpoint.backoff_base_ms = 1;
            handle.client = std::make_shared<LlmClient>(endpoint, cache_dir);
            handle.annotator =
                std::make_unique<LlmAnnotator>(handle.client, config.task,
                                               config.annotator.domain_text, "mock-lab");
            handle.max_concurrency = endpoint.max_concurrency;
            return handle;
        }
    }
    throw ConfigError("annotator.kind", "unhandled annotator kind");
}

SimulateOutput cmd_simulate(const ExperimentConfig& config) {
    LoadedExperiment loaded = load_experiment(config);

    SimulateOutput out;
    out.csv_path = fs::path(config.out_dir) / "cohort.csv";
    write_text_file(out.csv_path, cohort_to_csv(loaded.cohort));

    ordered_json manifest;
    manifest["schema_version"] = 1;
    manifest["task"] = task_name(config.task);
    manifest["split"] = split_kind_name(config.split);
    if (loaded.split.dosage_threshold) manifest["dosage_threshold"] = *loaded.split.dosage_threshold;
    std::vector<std::int64_t> behavior_ids, target_ids;
    for (const auto& s : loaded.split.behavior.samples) behavior_ids.push_back(s.id);
    for (const auto& s : loaded.split.target.samples) target_ids.push_back(s.id);
    manifest["n_behavior"] = behavior_ids.size();
    manifest["n_target"] = target_ids.size();
    manifest["behavior_ids"] = behavior_ids;
    manifest["target_ids"] = target_ids;
    out.manifest_path =
        fs::path(config.out_dir) / (std::string("split_") + split_kind_name(config.split) + ".json");
    write_text_file(out.manifest_path, manifest.dump(2) + "\n");

    out.cohort = std::move(loaded.cohort);
    out.split = std::move(loaded.split);
    return out;
}

CloneOutput cmd_clone_policy(const ExperimentConfig& config) {
    LoadedExperiment loaded = load_experiment(config);
    CloneOutput out;
    out.behavior =
        clone_policy(loaded.split.behavior, derive_seed(config.seed, seed_tag::kCloneBehavior));
    out.target = clone_policy(loaded.split.target, derive_seed(config.seed, seed_tag::kCloneTarget));

    const auto write_policy = [&](const CloneResult& result, const std::string& name) {
        ordered_json j = result.policy.to_json();
        j["validation_accuracy"] = result.validation_accuracy;
        j["degenerate_single_action"] = result.degenerate_single_action;
        const fs::path path = fs::path(config.out_dir) / name;
        write_text_file(path, j.dump(2) + "\n");
        return path;
    };
    out.behavior_path = write_policy(out.behavior, "policy_behavior.json");
    out.target_path = write_policy(out.target, "policy_target.json");
    return out;
}

namespace {

AnnotateRunResult run_annotation(const ExperimentConfig& config, const LoadedExperiment& loaded,
                                 std::size_t count) {
    const auto targets = select_annotation_targets(loaded.split.behavior, count,
                                                   derive_seed(config.seed, seed_tag::kSelect));
    AnnotatorHandle handle = make_annotator(config, loaded.sim);
    AnnotateRunResult run =
        annotate_targets(loaded.split.behavior, targets, *handle.annotator, handle.max_concurrency);
    if (!config.timestamp.empty()) {
        for (auto& a : run.annotations.items) a.created_at = config.timestamp;
    }
    return run;
}

AnnotationSet load_annotation_files(const ExperimentConfig& config) {
    std::vector<AnnotationSet> sources;
    for (const auto& file : config.annotation_files) {
        std::ifstream in(file);
        if (!in) throw ConfigError("annotation_files", "cannot open: " + file);
        sources.push_back(read_annotations_jsonl(in, config.task));
    }
    return aggregate_sources(sources, config.aggregation);
}

}  // namespace

AnnotateOutput cmd_annotate(const ExperimentConfig& config, std::size_t count) {
    LoadedExperiment loaded = load_experiment(config);
    const std::size_t k =
        count > 0 ? count : *std::max_element(config.schedule.begin(), config.schedule.end());
    AnnotateRunResult run = run_annotation(config, loaded, k);

    AnnotateOutput out;
    out.annotations = std::move(run.annotations);
    out.n_requested = run.n_requested;
    out.n_failed = run.n_failed;
    out.jsonl_path = fs::path(config.out_dir) / "annotations.jsonl";
    write_text_file(out.jsonl_path, annotations_to_jsonl(out.annotations));
    return out;
}

EvaluateOutput cmd_evaluate(const ExperimentConfig& config) {
    LoadedExperiment loaded = load_experiment(config);
    const BehaviorDataset& behavior = loaded.split.behavior;
    const BehaviorDataset& target = loaded.split.target;

    EvalReport report;
    report.task = task_name(config.task);
    report.split = split_kind_name(config.split);
    report.seed = config.seed;
    report.n_behavior = behavior.size();
    report.n_target = target.size();

    const CloneResult behavior_clone =
        clone_policy(behavior, derive_seed(config.seed, seed_tag::kCloneBehavior));
    const CloneResult target_clone =
        clone_policy(target, derive_seed(config.seed, seed_tag::kCloneTarget));
    report.behavior_clone_accuracy = behavior_clone.validation_accuracy;
    report.target_clone_accuracy = target_clone.validation_accuracy;
    report.behavior_clone_degenerate = behavior_clone.degenerate_single_action;
    report.target_clone_degenerate = target_clone.degenerate_single_action;

    const auto contexts = config.use_target_contexts ? target.contexts() : behavior.contexts();
    report.target_empirical_value = policy_value_empirical(target);
    report.behavior_empirical_value = policy_value_empirical(behavior);
    if (loaded.sim) {
        report.truth = true_value(policy_fn(target_clone.policy), contexts, *loaded.sim);
        report.truth_source = "oracle";
    } else {
        report.truth = report.target_empirical_value;
        report.truth_source = "target_empirical";
    }

    // Annotations: aggregate existing files, or query the configured annotator
    // once at the largest scheduled count.
    AnnotationSet annotations;
    if (!config.annotation_files.empty()) {
        annotations = load_annotation_files(config);
    } else {
        const std::size_t k =
            *std::max_element(config.schedule.begin(), config.schedule.end());
        AnnotateRunResult run = run_annotation(config, loaded, k);
        annotations = std::move(run.annotations);
        write_text_file(fs::path(config.out_dir) / "annotations.jsonl",
                        annotations_to_jsonl(annotations));
    }

    RewardModelOptions fit_options;
    fit_options.ridge_lambda = kDefaultRidgeLambda;

    const std::uint64_t boot_seed = derive_seed(config.seed, seed_tag::kBootstrap);
    const RewardModel dm_model = fit_reward_model(behavior, nullptr, fit_options);
    report.dm_point = dm_value(target_clone.policy, contexts, dm_model);
    report.is_point = is_value(target_clone.policy, behavior_clone.policy, behavior);

    const BootstrapResult dm_boot = bootstrap_dm_rmse(behavior, nullptr, target_clone.policy,
                                                      report.truth, config.n_boot, boot_seed,
                                                      fit_options);
    report.dm = summarize(dm_boot);
    report.is = summarize(bootstrap_is_rmse(behavior, target_clone.policy, behavior_clone.policy,
                                            report.truth, config.n_boot, boot_seed));

    for (const std::size_t requested : config.schedule) {
        const AnnotationSet subset = prefix(annotations, requested);
        SchedulePoint point;
        point.requested = requested;
        point.effective = subset.size();
        const BootstrapResult boot =
            bootstrap_dm_rmse(behavior, &subset, target_clone.policy, report.truth, config.n_boot,
                              boot_seed, fit_options);
        point.dm_plus = summarize(boot);
        point.entropy = action_entropy(behavior, &subset);
        report.schedule.push_back(point);
        report.t_tests.push_back(
            {"dm_vs_dm_plus@" + std::to_string(point.effective),
             paired_t_test(dm_boot.abs_errors, boot.abs_errors)});
    }

    report.entropy = entropy_curve(behavior, annotations, config.entropy_step);

    // Annotator quality tables: predict the observed action's lab on the first
    // factual_eval_n behavior samples and compare to the logged next lab.
    if (config.factual_eval_n > 0) {
        AnnotatorHandle handle = make_annotator(config, loaded.sim);
        const std::size_t n_eval = std::min(config.factual_eval_n, behavior.size());
        std::vector<double> predicted, observed;
        std::vector<ClinicalContext> eval_contexts;
        for (std::size_t i = 0; i < n_eval; ++i) {
            const Sample& s = behavior.samples[i];
            const auto request = AnnotationRequest::for_task(
                config.task, s.context, behavior.actions.dosages[s.action_index]);
            try {
                const AnnotatorResult r = handle.annotator->predict(request, s.id);
                predicted.push_back(r.lab);
                observed.push_back(s.next_lab);
                eval_contexts.push_back(s.context);
            } catch (const std::exception&) {
                // dropped prediction; factual table uses realized rows only
            }
        }
        if (!predicted.empty()) {
            report.annotator_f1 = weighted_f1(predicted, observed, config.task);
            report.annotator_id = handle.annotator->id();
            report.age_strata = stratified_error(predicted, observed, eval_contexts, Strata::AgeBins);
            report.gender_strata =
                stratified_error(predicted, observed, eval_contexts, Strata::Gender);
        }
    }

    EvaluateOutput out;
    out.report_path = fs::path(config.out_dir) / "report.json";
    write_text_file(out.report_path, report.to_json().dump(2) + "\n");
    write_text_file(fs::path(config.out_dir) / "rmse_vs_count.csv", report.rmse_table_csv());
    write_text_file(fs::path(config.out_dir) / "entropy_curve.csv", report.entropy_table_csv());
    write_text_file(fs::path(config.out_dir) / "t_tests.csv", report.t_test_table_csv());
    write_text_file(fs::path(config.out_dir) / "rmse_vs_count.svg", report.rmse_svg());
    write_text_file(fs::path(config.out_dir) / "entropy_curve.svg", report.entropy_svg());
    out.report = std::move(report);
    return out;
}

EntropyCurveOutput cmd_entropy_curve(const ExperimentConfig& config) {
    LoadedExperiment loaded = load_experiment(config);
    AnnotationSet annotations;
    if (!config.annotation_files.empty()) {
        annotations = load_annotation_files(config);
    } else {
        const std::size_t k =
            *std::max_element(config.schedule.begin(), config.schedule.end());
        annotations = run_annotation(config, loaded, k).annotations;
    }
    EntropyCurveOutput out;
    out.curve = entropy_curve(loaded.split.behavior, annotations, config.entropy_step);

    std::ostringstream csv;
    csv << "annotations,entropy,max_entropy\n";
    for (const auto& point : out.curve.points)
        csv << point.count << "," << format_double(point.entropy) << ","
            << format_double(out.curve.max_entropy) << "\n";
    out.csv_path = fs::path(config.out_dir) / "entropy_curve.csv";
    write_text_file(out.csv_path, csv.str());

    EvalReport svg_report;
    svg_report.entropy = out.curve;
    write_text_file(fs::path(config.out_dir) / "entropy_curve.svg", svg_report.entropy_svg());
    return out;
}

std::string cmd_report(const ExperimentConfig& config) {
    const fs::path path = fs::path(config.out_dir) / "report.json";
    const json j = json::parse(read_text_file(path));

    std::ostringstream out;
    out << "Evaluation report (" << j.value("task", "?") << ", " << j.value("split", "?")
        << " split, seed " << j.value("seed", 0) << ")\n";
    out << "  behavior n = " << j.value("n_behavior", 0)
        << ", target n = " << j.value("n_target", 0) << "\n";
    out << "  truth = " << j.value("truth", 0.0) << " (" << j.value("truth_source", "?") << ")\n";
    out << "  cloning accuracy: behavior " << j["cloning"].value("behavior_accuracy", 0.0)
        << ", target " << j["cloning"].value("target_accuracy", 0.0) << "\n";
    out << "  DM point " << j["point_estimates"].value("dm", 0.0) << ", IS point "
        << j["point_estimates"]["is"].value("value", 0.0) << "\n";
    out << "  DM RMSE " << j["dm_rmse"].value("rmse", 0.0) << " (se "
        << j["dm_rmse"].value("standard_error", 0.0) << ")\n";
    for (const auto& p : j.value("schedule", json::array())) {
        out << "  DM+ @" << p.value("effective", 0) << " annotations: RMSE "
            << p["dm_plus_rmse"].value("rmse", 0.0) << " (se "
            << p["dm_plus_rmse"].value("standard_error", 0.0) << "), entropy "
            << p.value("entropy", 0.0) << "\n";
    }
    for (const auto& t : j.value("t_tests", json::array())) {
        out << "  t-test " << t.value("comparison", "?") << ": t = " << t.value("t", 0.0)
            << ", p = " << t.value("p_value", 1.0)
            << (t.value("significant", false) ? " (significant)" : " (not significant)") << "\n";
    }
    if (j.contains("annotator_eval")) {
        out << "  annotator " << j["annotator_eval"].value("annotator", "?") << " weighted F1 = "
            << j["annotator_eval"].value("weighted_f1", 0.0) << "\n";
    }
    out << "  max entropy ln|A| = " << j.value("max_entropy", 0.0) << "\n";
    return out.str();
}

}  // namespace cfope
