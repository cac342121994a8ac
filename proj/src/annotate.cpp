#include "cfope/annotate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "cfope/format.hpp"
#include "cfope/rng.hpp"

namespace cfope {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const char* lab_name(Task task) {
    return task == Task::Potassium ? "serum potassium" : "serum sodium";
}

const char* treatment_name(Task task) {
    return task == Task::Potassium ? "IV potassium" : "IV sodium (hypertonic 3% saline)";
}

const char* repletion_name(Task task) {
    return task == Task::Potassium ? "intravenous potassium repletion"
                                   : "intravenous sodium repletion";
}

// Balanced top-level JSON object substrings, in order of appearance, skipping
// braces inside string literals.
std::vector<std::string> json_object_candidates(const std::string& raw) {
    std::vector<std::string> out;
    for (std::size_t start = 0; start < raw.size(); ++start) {
        if (raw[start] != '{') continue;
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < raw.size(); ++i) {
            const char c = raw[i];
            if (in_string) {
                if (escaped)
                    escaped = false;
                else if (c == '\\')
                    escaped = true;
                else if (c == '"')
                    in_string = false;
            } else if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    out.push_back(raw.substr(start, i - start + 1));
                    break;
                }
            }
        }
    }
    return out;
}

}  // namespace

Annotation make_annotation(std::int64_t sample_id, std::size_t action_index, double predicted_lab,
                           const RewardSpec& spec, std::string source_id,
                           std::string justification) {
    Annotation a;
    a.sample_id = sample_id;
    a.action_index = action_index;
    a.predicted_lab = predicted_lab;
    a.reward = reward_of_lab(predicted_lab, spec);
    a.source_id = std::move(source_id);
    a.justification = std::move(justification);
    return a;
}

std::size_t annotation_budget(std::size_t n_samples, std::size_t n_actions) {
    if (n_actions == 0) throw std::invalid_argument("annotation_budget: empty action space");
    return n_samples * (n_actions - 1);
}

std::size_t annotation_budget(std::size_t n_samples, const ActionSpace& actions) {
    return annotation_budget(n_samples, actions.size());
}

std::vector<AnnotationTarget> select_annotation_targets(const BehaviorDataset& dataset,
                                                        std::size_t k, std::uint64_t seed) {
    const std::size_t per_sample = dataset.actions.size() - 1;
    const std::size_t budget = annotation_budget(dataset.size(), dataset.actions);
    if (k > budget) {
        throw std::invalid_argument("select_annotation_targets: k = " + std::to_string(k) +
                                    " exceeds the annotation budget N*(|A|-1) = " +
                                    std::to_string(budget));
    }
    Rng rng(seed);
    const auto picks = rng.sample_without_replacement(budget, k);
    std::vector<AnnotationTarget> targets;
    targets.reserve(k);
    for (const std::size_t flat : picks) {
        const std::size_t pos = flat / per_sample;
        const std::size_t slot = flat % per_sample;
        const std::size_t observed = dataset.samples[pos].action_index;
        const std::size_t action = slot < observed ? slot : slot + 1;
        targets.push_back({dataset.samples[pos].id, pos, action});
    }
    return targets;
}

AnnotationRequest AnnotationRequest::for_task(Task task, ClinicalContext context, double dose_meq) {
    AnnotationRequest request;
    request.task = task;
    request.context = std::move(context);
    request.counterfactual_dose = dose_meq;
    request.infusion_rate = task == Task::Potassium ? 10.0 : 30.0;
    request.horizon_hours = 3.0;
    ActionSpace::for_task(task).index_of(dose_meq);  // membership check
    return request;
}

std::string build_prompt(const AnnotationRequest& request, const std::string& domain_text) {
    const std::string missing = request.context.first_missing_field();
    if (!missing.empty())
        throw std::invalid_argument("build_prompt: missing context feature: " + missing);

    const ClinicalContext& ctx = request.context;
    const char* lab = lab_name(request.task);
    std::ostringstream out;
    out << "## Task information\n";
    out << "Decision task: " << repletion_name(request.task) << ".\n";
    out << "The patient's clinical state below was recorded four hours prior to treatment.\n";
    out << "Counterfactual treatment under evaluation: an " << treatment_name(request.task)
        << " dose of " << format_double(request.counterfactual_dose)
        << " mEq delivered at a rate of " << format_double(request.infusion_rate) << " mEq/hr.\n";
    out << "\n## Static covariates\n";
    out << "- Age: " << format_double(ctx.age) << " years\n";
    out << "- Gender: " << (ctx.gender == Gender::Male ? "M" : "F") << "\n";
    out << "- Weight: " << format_double(ctx.weight) << " kg\n";
    out << "- Height: " << format_double(ctx.height) << " cm\n";
    out << "\n## Labs and medicines\n";
    out << "- Heart rate: " << format_double(ctx.heart_rate) << " bpm\n";
    out << "- Respiratory rate: " << format_double(ctx.respiratory_rate) << " breaths/min\n";
    out << "- Oxygen saturation (SpO2): " << format_double(ctx.spo2) << " %\n";
    out << "- Systolic blood pressure: " << format_double(ctx.systolic_bp) << " mmHg\n";
    out << "- Diastolic blood pressure: " << format_double(ctx.diastolic_bp) << " mmHg\n";
    out << "- Serum creatinine: " << format_double(ctx.serum_creatinine) << " mg/dL\n";
    out << "- Baseline " << lab << ": " << format_double(ctx.baseline_lab) << " mEq/L\n";
    out << "- NaCl 0.9% administered: " << format_double(ctx.nacl_09_given) << " mL\n";
    out << "- Dextrose 5% administered: " << format_double(ctx.dextrose_5_given) << " mL\n";
    out << "- Propofol administered: " << format_double(ctx.propofol_given) << " mg\n";
    out << "- Norepinephrine administered: " << format_double(ctx.norepinephrine_given) << " mg\n";
    out << "- Insulin administered: " << format_double(ctx.insulin_given) << " units\n";
    out << "\n## Domain information\n";
    out << domain_text << "\n";
    out << "\n## Prediction query\n";
    out << "Predict the patient's " << lab << " measured " << format_double(request.horizon_hours)
        << " hours after the IV infusion concludes.\n";
    out << "Respond with a JSON object containing two keys: \"predicted_lab\" (the predicted "
        << lab << " in mEq/L, as a number) and \"justification\" (a brief explanation).\n";
    return out.str();
}

LabPrediction parse_response(const std::string& raw, Task task) {
    bool saw_object = false;
    for (const std::string& candidate : json_object_candidates(raw)) {
        json j = json::parse(candidate, nullptr, false);
        if (j.is_discarded() || !j.is_object()) continue;
        saw_object = true;
        if (!j.contains("predicted_lab")) continue;

        double lab = 0.0;
        const json& value = j["predicted_lab"];
        if (value.is_number()) {
            lab = value.get<double>();
        } else if (value.is_string()) {
            try {
                lab = parse_double(value.get<std::string>());
            } catch (const std::invalid_argument&) {
                throw ParseError(ParseFailure::NotANumber,
                                 "predicted_lab is not numeric: " + value.dump());
            }
        } else {
            throw ParseError(ParseFailure::NotANumber,
                             "predicted_lab is not numeric: " + value.dump());
        }

        if (!std::isfinite(lab) || !physiologic_range(task).contains(lab)) {
            throw ParseError(ParseFailure::OutOfRange,
                             "predicted_lab " + format_double(lab) +
                                 " is outside the physiologic range for " + task_name(task));
        }
        if (!j.contains("justification"))
            throw ParseError(ParseFailure::MissingKey, "response object lacks \"justification\"");
        const json& just = j["justification"];
        return LabPrediction{lab, just.is_string() ? just.get<std::string>() : just.dump()};
    }
    if (saw_object)
        throw ParseError(ParseFailure::MissingKey, "no JSON object with \"predicted_lab\" found");
    throw ParseError(ParseFailure::MalformedJson, "no JSON object found in response");
}

OracleAnnotator::OracleAnnotator(SimConfig sim, double noise_sd, std::uint64_t seed,
                                 std::string source_id)
    : sim_(std::move(sim)), noise_sd_(noise_sd), seed_(seed), source_id_(std::move(source_id)) {
    if (noise_sd_ < 0.0) throw std::invalid_argument("oracle annotator: noise_sd must be >= 0");
    if (source_id_.empty()) source_id_ = noise_sd_ == 0.0 ? "oracle" : "noisy-oracle";
}

AnnotatorResult OracleAnnotator::predict(const AnnotationRequest& request, std::int64_t sample_id) {
    if (request.task != sim_.task)
        throw std::invalid_argument("oracle annotator: request task does not match simulator task");
    const std::size_t action =
        ActionSpace::for_task(sim_.task).index_of(request.counterfactual_dose);
    double lab = outcome_model(request.context, request.counterfactual_dose, sim_);
    if (noise_sd_ > 0.0) {
        Rng rng = Rng::stream(seed_, static_cast<std::uint64_t>(sample_id), action);
        lab += noise_sd_ * rng.normal();
    }
    lab = sim_.lab_clamp.apply(lab);
    AnnotatorResult result;
    result.lab = lab;
    result.justification = "simulator outcome model";
    return result;
}

LlmAnnotator::LlmAnnotator(std::shared_ptr<LlmClient> client, Task task, std::string domain_text,
                           std::string source_id)
    : client_(std::move(client)), task_(task), domain_text_(std::move(domain_text)),
      source_id_(std::move(source_id)) {
    if (!client_) throw std::invalid_argument("llm annotator: null client");
    if (source_id_.empty()) source_id_ = client_->config().model_name;
}

AnnotatorResult LlmAnnotator::predict(const AnnotationRequest& request, std::int64_t /*sample_id*/) {
    const std::string prompt = build_prompt(request, domain_text_);
    CompletionResult completion = client_->complete(prompt);
    LabPrediction prediction;
    try {
        prediction = parse_response(completion.text, task_);
    } catch (const ParseError&) {
        completion = client_->complete(prompt, CompleteOptions{.refresh = true});
        prediction = parse_response(completion.text, task_);
    }
    AnnotatorResult result;
    result.lab = prediction.lab;
    result.justification = prediction.justification;
    result.prompt_sha256 = completion.prompt_sha256;
    result.created_at = completion.created_at;
    return result;
}

AnnotateRunResult annotate_targets(const BehaviorDataset& dataset,
                                   std::span<const AnnotationTarget> targets, Annotator& annotator,
                                   int max_concurrency) {
    for (const auto& t : targets) {
        if (t.sample_pos >= dataset.size())
            throw std::invalid_argument("annotate_targets: target sample out of range");
        if (t.action_index >= dataset.actions.size() ||
            t.action_index == dataset.samples[t.sample_pos].action_index)
            throw std::invalid_argument(
                "annotate_targets: target action must be a valid unobserved action");
    }

    std::vector<std::optional<Annotation>> slots(targets.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> failed{0};

    const auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= targets.size()) return;
            const AnnotationTarget& t = targets[i];
            const Sample& sample = dataset.samples[t.sample_pos];
            try {
                const auto request = AnnotationRequest::for_task(
                    dataset.task, sample.context, dataset.actions.dose(t.action_index));
                const AnnotatorResult r = annotator.predict(request, t.sample_id);
                Annotation a = make_annotation(t.sample_id, t.action_index, r.lab,
                                               dataset.reward_spec, annotator.id(),
                                               r.justification);
                a.prompt_sha256 = r.prompt_sha256;
                a.created_at = r.created_at;
                slots[i] = std::move(a);
            } catch (const std::exception&) {
                failed.fetch_add(1);
            }
        }
    };

    const int n_threads = std::min<int>(std::max(max_concurrency, 1),
                                        static_cast<int>(std::max<std::size_t>(targets.size(), 1)));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_threads));
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    AnnotateRunResult result;
    result.annotations.task = dataset.task;
    result.n_requested = targets.size();
    result.n_failed = failed.load();
    for (auto& slot : slots) {
        if (slot) result.annotations.items.push_back(std::move(*slot));
    }
    return result;
}

const char* aggregation_mode_name(AggregationMode mode) {
    return mode == AggregationMode::Pool ? "pool" : "average";
}

AggregationMode aggregation_mode_from_name(const std::string& name) {
    if (name == "pool") return AggregationMode::Pool;
    if (name == "average") return AggregationMode::Average;
    throw std::invalid_argument("unknown aggregation mode: " + name);
}

AnnotationSet aggregate_sources(std::span<const AnnotationSet> sources, AggregationMode mode,
                                bool average_rewards_instead) {
    if (sources.empty()) throw std::invalid_argument("aggregate_sources: no sources");
    const Task task = sources.front().task;
    for (const auto& s : sources) {
        if (s.task != task)
            throw std::invalid_argument("aggregate_sources: sources span mixed tasks");
    }

    AnnotationSet out;
    out.task = task;
    if (mode == AggregationMode::Pool) {
        for (const auto& s : sources)
            out.items.insert(out.items.end(), s.items.begin(), s.items.end());
        return out;
    }

    const RewardSpec spec = RewardSpec::for_task(task);
    std::map<std::pair<std::int64_t, std::size_t>, std::vector<const Annotation*>> groups;
    for (const auto& s : sources) {
        for (const auto& a : s.items) groups[{a.sample_id, a.action_index}].push_back(&a);
    }
    for (const auto& [key, members] : groups) {
        double lab_sum = 0.0;
        double reward_sum = 0.0;
        std::vector<std::string> ids;
        for (const Annotation* a : members) {
            lab_sum += a->predicted_lab;
            reward_sum += a->reward;
            if (std::find(ids.begin(), ids.end(), a->source_id) == ids.end())
                ids.push_back(a->source_id);
        }
        const double n = static_cast<double>(members.size());
        std::string source = "average:";
        for (std::size_t i = 0; i < ids.size(); ++i) source += (i == 0 ? "" : "+") + ids[i];

        Annotation merged = make_annotation(key.first, key.second, lab_sum / n, spec, source,
                                            "average of " + std::to_string(members.size()) +
                                                " sources");
        if (average_rewards_instead) merged.reward = reward_sum / n;
        out.items.push_back(std::move(merged));
    }
    return out;
}

std::string annotations_to_jsonl(const AnnotationSet& set) {
    std::ostringstream out;
    write_annotations_jsonl(out, set);
    return out.str();
}

void write_annotations_jsonl(std::ostream& out, const AnnotationSet& set) {
    for (const auto& a : set.items) {
        ordered_json j;
        j["sample_id"] = a.sample_id;
        j["action_index"] = a.action_index;
        j["predicted_lab"] = a.predicted_lab;
        j["reward"] = a.reward;
        j["weight"] = a.weight;
        j["source_id"] = a.source_id;
        j["justification"] = a.justification;
        j["prompt_sha256"] = a.prompt_sha256;
        j["created_at"] = a.created_at;
        out << j.dump() << "\n";
    }
}

AnnotationSet read_annotations_jsonl(std::istream& in, Task task) {
    AnnotationSet set;
    set.task = task;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw std::invalid_argument("annotations jsonl: malformed line " +
                                        std::to_string(line_no));
        Annotation a;
        a.sample_id = j.at("sample_id").get<std::int64_t>();
        a.action_index = j.at("action_index").get<std::size_t>();
        a.predicted_lab = j.at("predicted_lab").get<double>();
        a.reward = j.at("reward").get<double>();
        a.weight = j.value("weight", 1.0);
        a.source_id = j.at("source_id").get<std::string>();
        a.justification = j.value("justification", std::string{});
        a.prompt_sha256 = j.value("prompt_sha256", std::string{});
        a.created_at = j.value("created_at", std::string{});
        set.items.push_back(std::move(a));
    }
    return set;
}

}  // namespace cfope
