// Bundled in-process HTTP server that answers chat-completion requests with
// scripted lab predictions. Backs the "mock" annotator and the client tests.
#pragma once

#include <memory>
#include <string>

#include "cfope/bandit_core.hpp"

namespace cfope {

/// Deterministic response rule: the baseline lab and counterfactual dose are
/// extracted from the prompt text and the predicted lab is
/// round2(baseline + slope * dose), wrapped in a fenced JSON object inside
/// explanatory prose.
class MockLabServer {
  public:
    struct Options {
        // Respond with `failure_status` to the first n requests.
        int fail_first_n = 0;
        int failure_status = 500;
        // Per-request handler sleep; used to observe concurrency.
        double latency_ms = 0.0;
        // When set, every response carries this lab instead of the prompt rule.
        bool use_fixed_lab = false;
        double fixed_lab = 0.0;
        // Reply with a non-JSON body (exercises parse-failure paths).
        bool garble_responses = false;
        double slope = 0.018;  // mEq/L per mEq dosed
    };

    explicit MockLabServer(Task task) : MockLabServer(task, Options()) {}
    MockLabServer(Task task, Options options);
    ~MockLabServer();

    std::string base_url() const;
    int port() const;

    int request_count() const;
    int peak_concurrency() const;

    void stop();

    // The response rule, exposed so tests can compute expected labs.
    static double scripted_lab(Task task, double baseline_lab, double dose_meq, double slope);

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace cfope
