// Counterfactual annotation pipeline: budget accounting, uniform target
// selection, prompt construction and response parsing, oracle and LLM-backed
// annotators, multi-source aggregation, and JSONL persistence.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cfope/bandit_core.hpp"
#include "cfope/cohort_sim.hpp"
#include "cfope/llm_client.hpp"

namespace cfope {

/// A counterfactual reward record for an action the patient did not receive.
struct Annotation {
    std::int64_t sample_id = 0;
    std::size_t action_index = 0;
    double predicted_lab = 0.0;
    double reward = 0.0;
    double weight = 1.0;  // reserved; reward-model fits currently treat rows unweighted
    std::string source_id;
    std::string justification;
    std::string prompt_sha256;  // empty for non-LLM annotators
    std::string created_at;     // ISO 8601; empty unless cache-backed or pinned
};

// Reward computed from the lab, keeping the reward-consistency invariant by
// construction.
Annotation make_annotation(std::int64_t sample_id, std::size_t action_index, double predicted_lab,
                           const RewardSpec& spec, std::string source_id, std::string justification);

struct AnnotationSet {
    Task task = Task::Potassium;
    std::vector<Annotation> items;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
};

/// Maximum number of unique counterfactual annotations a single source can
/// produce for a dataset of n samples: n * (|A| - 1).
std::size_t annotation_budget(std::size_t n_samples, std::size_t n_actions);
std::size_t annotation_budget(std::size_t n_samples, const ActionSpace& actions);

struct AnnotationTarget {
    std::int64_t sample_id = 0;
    std::size_t sample_pos = 0;  // index into dataset.samples
    std::size_t action_index = 0;
};

/// k (sample, unobserved-action) pairs drawn uniformly without replacement,
/// deterministic per seed. The returned order is the selection order. Throws
/// if k exceeds the annotation budget.
std::vector<AnnotationTarget> select_annotation_targets(const BehaviorDataset& dataset,
                                                        std::size_t k, std::uint64_t seed);

struct AnnotationRequest {
    Task task = Task::Potassium;
    ClinicalContext context;
    double counterfactual_dose = 0.0;  // mEq
    double infusion_rate = 0.0;        // mEq/hr
    double horizon_hours = 3.0;

    // Task defaults: 10 mEq/hr for potassium, 30 mEq/hr for sodium; labs
    // predicted three hours after the infusion concludes.
    static AnnotationRequest for_task(Task task, ClinicalContext context, double dose_meq);
};

/// Deterministic prompt with five sections in fixed order: task information,
/// static covariates, labs and medicines, domain information, prediction
/// query. Throws naming the field if a context feature is not finite.
std::string build_prompt(const AnnotationRequest& request, const std::string& domain_text);

enum class ParseFailure { MalformedJson, MissingKey, NotANumber, OutOfRange };

class ParseError : public std::runtime_error {
  public:
    ParseError(ParseFailure kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ParseFailure kind() const { return kind_; }

  private:
    ParseFailure kind_;
};

struct LabPrediction {
    double lab = 0.0;
    std::string justification;
};

/// Extracts {"predicted_lab": <number>, "justification": <string>} from a raw
/// model response. The object may be bare, inside a code fence, or embedded in
/// surrounding prose. Labs outside the task's physiologic range are rejected.
LabPrediction parse_response(const std::string& raw, Task task);

struct AnnotatorResult {
    double lab = 0.0;
    std::string justification;
    std::string prompt_sha256;
    std::string created_at;
};

/// Produces lab predictions for (context, dose) queries. Implementations must
/// tolerate concurrent predict() calls.
class Annotator {
  public:
    virtual ~Annotator() = default;
    virtual std::string id() const = 0;
    virtual AnnotatorResult predict(const AnnotationRequest& request, std::int64_t sample_id) = 0;
};

/// Ground-truth (noise_sd = 0) or noisy oracle backed by the simulator's
/// outcome model. Noise draws are keyed by (seed, sample_id, action) so
/// results do not depend on evaluation order.
class OracleAnnotator final : public Annotator {
  public:
    OracleAnnotator(SimConfig sim, double noise_sd, std::uint64_t seed, std::string source_id = "");

    std::string id() const override { return source_id_; }
    AnnotatorResult predict(const AnnotationRequest& request, std::int64_t sample_id) override;

  private:
    SimConfig sim_;
    double noise_sd_;
    std::uint64_t seed_;
    std::string source_id_;
};

/// Builds the prompt, queries the endpoint through the caching client, and
/// parses the JSON response. One cache-bypassing retry on a parse failure;
/// a second failure propagates (the pipeline drops the annotation).
class LlmAnnotator final : public Annotator {
  public:
    LlmAnnotator(std::shared_ptr<LlmClient> client, Task task, std::string domain_text,
                 std::string source_id = "");

    std::string id() const override { return source_id_; }
    AnnotatorResult predict(const AnnotationRequest& request, std::int64_t sample_id) override;

  private:
    std::shared_ptr<LlmClient> client_;
    Task task_;
    std::string domain_text_;
    std::string source_id_;
};

struct AnnotateRunResult {
    AnnotationSet annotations;  // in target (selection) order
    std::size_t n_requested = 0;
    std::size_t n_failed = 0;  // dropped after retries; never imputed
};

AnnotateRunResult annotate_targets(const BehaviorDataset& dataset,
                                   std::span<const AnnotationTarget> targets, Annotator& annotator,
                                   int max_concurrency = 1);

enum class AggregationMode { Pool, Average };

const char* aggregation_mode_name(AggregationMode mode);
AggregationMode aggregation_mode_from_name(const std::string& name);

/// Pool keeps every source's annotations (duplicates across sources retained,
/// rewards bit-exact). Average merges per (sample, action): predicted labs are
/// averaged and the reward recomputed from the averaged lab; with
/// average_rewards_instead the rewards themselves are averaged (which breaks
/// the reward-consistency invariant by definition and is off by default).
AnnotationSet aggregate_sources(std::span<const AnnotationSet> sources, AggregationMode mode,
                                bool average_rewards_instead = false);

std::string annotations_to_jsonl(const AnnotationSet& set);
void write_annotations_jsonl(std::ostream& out, const AnnotationSet& set);
AnnotationSet read_annotations_jsonl(std::istream& in, Task task);

}  // namespace cfope
